"""``ascent-vit`` command line: train, eval, explain, intervene, ablate, gen-data.

Every command writes ``resolved.cfg`` into ``--out`` next to its artifacts.
Commands that read a checkpoint start from the config echoed inside it, so
a model is always rebuilt with the geometry it was trained with.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import container
from .config import RunConfig, load_config, parse_config
from .container import FormatError
from .cram import ConceptSet
from .data import (GLOBAL_CONCEPTS, SHAPES, ShapeConceptsSpec, build_cmnist_dataset,
                   build_dataset, encode_idx, generate_shapeconcepts, load_idx, save_cache,
                   split, synth_idx)
from .data.idx import pad_to
from .evaluation import evaluate, export_maps, predict, report_from
from .layers import ConfigError
from .model import AscentViT
from .numerics import Rng
from .trainer import load_checkpoint, train

COMMANDS = ("train", "eval", "explain", "intervene", "ablate", "gen-data")


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# data and model from a config
# ---------------------------------------------------------------------------


def _cmnist_pairs(cfg: RunConfig):
    if cfg["idx_images"] and cfg["idx_labels"]:
        return load_idx(cfg["idx_images"], cfg["idx_labels"], side=cfg["image_size"])
    images, labels = synth_idx(Rng(cfg["data_seed"]), cfg["n_samples"])
    scaled = pad_to(images, cfg["image_size"]).astype(np.float64) / 255.0
    return [(scaled[i][None], int(labels[i])) for i in range(len(labels))]


def build_data(cfg: RunConfig):
    """Full dataset, its concept set and the number of classes."""
    if cfg["dataset"] == "cmnist":
        ds = build_cmnist_dataset(_cmnist_pairs(cfg), cfg["cmnist_task"], cfg["patch_size"])
        classes = 2 if cfg["cmnist_task"] == "parity" else 10
        return ds, ConceptSet(0, 2, (), ("curved", "straight")), classes
    spec = ShapeConceptsSpec(seed=cfg["data_seed"], n_samples=cfg["n_samples"],
                             image_size=cfg["image_size"], min_objects=cfg["min_objects"],
                             max_objects=cfg["max_objects"])
    ds = build_dataset(generate_shapeconcepts(spec), cfg["patch_size"])
    return ds, ConceptSet(len(SHAPES), len(GLOBAL_CONCEPTS), SHAPES, GLOBAL_CONCEPTS), len(SHAPES)


def splits(cfg: RunConfig):
    ds, concepts, classes = build_data(cfg)
    tr, va, te = split(ds, cfg["split"], cfg["data_seed"])
    return tr, va, te, concepts, classes


def _eval_split(va, te):
    return te if len(te) else va


def build_model(cfg: RunConfig, concepts: ConceptSet, classes: int, seed: int | None = None):
    return AscentViT(cfg.model_config(concepts, classes), cfg["seed"] if seed is None else seed)


def _load_trained(args):
    """Config (checkpoint echo + --config + --set), datasets and loaded model."""
    if not args.checkpoint:
        raise CliError(f"{args.command} needs --checkpoint PATH")
    path = Path(args.checkpoint)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    trained = parse_config(container.load(path).config, source=str(path))
    cfg = load_config(args.config, _overrides(args), base=trained)
    tr, va, te, concepts, classes = splits(cfg)
    model = build_model(cfg, concepts, classes)
    load_checkpoint(path, model)
    return cfg, _eval_split(va, te), model, concepts


def _overrides(args):
    out = list(args.set or [])
    if args.seed is not None:
        out.append(f"seed={args.seed}")
    return out


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _eval_kwargs(cfg, concepts):
    return dict(batch_size=cfg["eval_batch"], concept_names=list(concepts.spatial_names) or None,
                tau_spatial=cfg["tau_spatial"], tau_global=cfg["tau_global"])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _out(args)
    cfg.write_resolved(out)
    tr, va, te, concepts, classes = splits(cfg)
    model = build_model(cfg, concepts, classes)
    train(model, tr, va, cfg.train_config(), out_dir=out, config_text=cfg.resolved_text(),
          eval_batch=cfg["eval_batch"])
    held = _eval_split(va, te)
    if len(held):
        evaluate(model, held, **_eval_kwargs(cfg, concepts)).write_csv(out / "metrics.csv")
    return 0


def cmd_eval(args) -> int:
    cfg, held, model, concepts = _load_trained(args)
    out = _out(args)
    cfg.write_resolved(out)
    evaluate(model, held, **_eval_kwargs(cfg, concepts)).write_csv(out / "metrics.csv")
    return 0


def _sample_list(text: str | None, n: int) -> list[int]:
    if not text:
        return [0]
    try:
        idx = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"--samples expects comma-separated integers, got {text!r}") from None
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise CliError(f"sample indices {bad} outside 0..{n - 1}")
    return idx


def cmd_explain(args) -> int:
    cfg, held, model, _ = _load_trained(args)
    out = _out(args)
    cfg.write_resolved(out)
    idx = _sample_list(args.samples, len(held))
    maps = out / "maps"
    maps.mkdir(exist_ok=True)
    att = model(held.images[idx], training=False).a_spatial
    if att is None:
        raise CliError("this model has no spatial concepts to explain")
    for k, i in enumerate(idx):
        export_maps(att.data[k], maps / f"sample{i}", held.patch_size)
    return 0


def cmd_intervene(args) -> int:
    cfg, held, model, concepts = _load_trained(args)
    out = _out(args)
    cfg.write_resolved(out)
    pred = predict(model, held, batch_size=cfg["eval_batch"], intervene=True)
    rep = report_from(pred, held, list(concepts.spatial_names) or None,
                      cfg["tau_spatial"], cfg["tau_global"])
    keep = ("task_accuracy", "concept_01_error", "intervention_success_rate")
    rows = [r for r in rep.rows() if r[0] in keep]
    with open(out / "intervention.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "concept", "value", "numerator", "denominator"])
        w.writerows(rows)
    return 0


MODULE_CELLS = {
    "backbone": {"cram_enabled": "false"},
    "cram": {"cram_enabled": "true", "mse_enabled": "false", "dmsf_enabled": "false"},
    "cram+mse": {"cram_enabled": "true", "mse_enabled": "true", "dmsf_enabled": "false"},
    "ascent": {"cram_enabled": "true", "mse_enabled": "true", "dmsf_enabled": "true"},
}


def ablation_cells(cfg: RunConfig) -> list[tuple[str, dict[str, str]]]:
    axis = cfg["ablate_axis"]
    if axis == "modules":
        return list(MODULE_CELLS.items())
    if axis == "psi":
        return [(f"psi={p!r}", {"psi": repr(p)}) for p in cfg["psi_sweep"]]
    if axis == "heads":
        return [(f"dmsf_heads={h}", {"dmsf_heads": str(h)}) for h in cfg["heads_sweep"]]
    raise ConfigError(f"unknown ablation axis {axis!r}")


def run_ablation(cfg: RunConfig, out: Path | None = None) -> list[list]:
    """One row per (seed, cell): task accuracy and mean Px. TPR on the held-out split."""
    base = cfg.resolved_text()
    rows = []
    for seed in cfg["ablate_seeds"]:
        for name, changes in ablation_cells(cfg):
            sets = [f"{k}={v}" for k, v in changes.items()] + [f"seed={seed}"]
            cell = parse_config(base, sets)
            tr, va, te, concepts, classes = splits(cell)
            model = build_model(cell, concepts, classes)
            train(model, tr, va, cell.train_config(), eval_batch=cell["eval_batch"])
            rep = evaluate(model, _eval_split(va, te), **_eval_kwargs(cell, concepts))
            tpr = rep.px_tpr_mean.value if cell["cram_enabled"] else None
            rows.append([cfg["ablate_axis"], name, seed, rep.task_accuracy.value, tpr])
            if out is not None:
                write_ablation(out / "ablation.csv", rows)
    return rows


def write_ablation(path, rows) -> None:
    def fmt(v):
        if v is None:
            return "undefined"
        return repr(float(v)) if isinstance(v, float) else str(v)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["axis", "cell", "seed", "task_accuracy", "px_tpr"])
        for r in rows:
            w.writerow([fmt(v) for v in r])


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _out(args)
    cfg.write_resolved(out)
    write_ablation(out / "ablation.csv", run_ablation(cfg, out))
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _out(args)
    cfg.write_resolved(out)
    if cfg["dataset"] == "cmnist":
        images, labels = synth_idx(Rng(cfg["data_seed"]), cfg["n_samples"])
        (out / "images.idx").write_bytes(encode_idx(images))
        (out / "labels.idx").write_bytes(encode_idx(labels))
        return 0
    spec = ShapeConceptsSpec(seed=cfg["data_seed"], n_samples=cfg["n_samples"],
                             image_size=cfg["image_size"], min_objects=cfg["min_objects"],
                             max_objects=cfg["max_objects"])
    save_cache(out / "shapeconcepts.acvt", generate_shapeconcepts(spec), spec)
    return 0


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "explain": cmd_explain,
            "intervene": cmd_intervene, "ablate": cmd_ablate, "gen-data": cmd_gen_data}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ascent-vit", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append",
                   help="override one key (repeatable, later wins)")
    p.add_argument("--out", metavar="DIR", default="run", help="output directory")
    p.add_argument("--checkpoint", metavar="PATH", help="checkpoint for eval/explain/intervene")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--samples", metavar="I,J,K", help="sample indices for explain")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except (CliError, ConfigError, FormatError, OSError, ValueError) as err:
        print(f"ascent-vit {args.command}: error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
