"""Mini-batch training with validation, early stopping and exact resume."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.targets import ConceptDataset
from ..evaluation import evaluate
from ..numerics import Rng, Tape, backward
from .checkpoint import checkpoint_arrays, read_checkpoint, save_checkpoint
from .objective import AdamW, TrainConfig, lr_at, total_loss

LOG_HEADER = ["epoch", "step", "lr", "loss", "task_loss", "expl_loss", "global_loss",
              "val_acc", "px_tpr"]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    log: list[list] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0
    best_state: dict = field(default_factory=dict)
    stopped_early: bool = False


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "undefined"
    return repr(float(v))


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _snapshot(model) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_arrays().items()}


def train(model, train_set: ConceptDataset, val_set: ConceptDataset, cfg: TrainConfig,
          out_dir=None, config_text: str = "", resume=None, eval_batch: int = 100,
          stop_after_epoch: int | None = None) -> TrainResult:
    """Train ``model`` in place; on return it holds the best-validation weights.

    With ``out_dir`` set, ``train_log.csv``, ``best.ckpt`` and ``last.ckpt``
    are written there. ``resume`` names a ``last.ckpt`` to continue from;
    the run then matches an uninterrupted one bit for bit.
    ``stop_after_epoch`` ends the run early (used to test resuming).
    """
    params = model.named_parameters()
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    shuffle = Rng(cfg.seed).spawn(7)
    n = len(train_set)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    result = TrainResult(best_state=_snapshot(model))
    start_epoch, step, bad = 0, 0, 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        ck = read_checkpoint(resume)
        model.load_state_arrays(ck.arrays)
        opt.load_state_arrays(ck.arrays)
        shuffle.state = ck.rng_state
        a = ck.arrays
        start_epoch = int(a["meta/epoch"])
        step = int(a["meta/step"])
        bad = int(a["meta/bad_epochs"])
        result.best_epoch = int(a["meta/best_epoch"])
        result.best_val_acc = float(a["meta/best_val_acc"])
        result.best_state = {k[len("best/"):]: v for k, v in a.items() if k.startswith("best/")}
        log = a.get("meta/log")
        result.log = [[int(r[0]), int(r[1])] + [None if np.isnan(x) else float(x) for x in r[2:]]
                      for r in log] if log is not None and log.size else []

    if cfg.epochs == 0 and out is not None:
        save_checkpoint(model, out / "best.ckpt", config_text, shuffle.state,
                        meta={"epoch": 0, "step": 0})
        write_log(out / "train_log.csv", [])
        return result

    for epoch in range(start_epoch, cfg.epochs):
        perm = shuffle.permutation(n)
        sums = np.zeros(4)
        lr = 0.0
        for b in range(steps_per_epoch):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            model.zero_grad()
            with Tape() as tape:
                o = model(train_set.images[idx], training=True)
                parts = total_loss(o.logits, train_set.y[idx], o.a_spatial, train_set.H[idx],
                                   train_set.H_mask[idx], train_set.global_bits[idx], cfg,
                                   a_global=o.a_global)
            loss = parts.total.item()
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch + 1}, "
                                    f"batch index {b} (global step {step})")
            backward(tape, parts.total)
            lr = lr_at(step, steps_per_epoch, cfg)
            opt.step(lr)
            step += 1
            sums += [loss, parts.task.item(), parts.expl.item(), parts.global_.item()]
        means = sums / steps_per_epoch
        rep = evaluate(model, val_set, batch_size=eval_batch)
        val_acc = rep.task_accuracy.value
        tpr = rep.px_tpr_mean.value
        result.log.append([epoch + 1, step, lr, *means, val_acc, tpr])
        if val_acc > result.best_val_acc:
            result.best_val_acc, result.best_epoch, bad = val_acc, epoch + 1, 0
            result.best_state = _snapshot(model)
        else:
            bad += 1
        done = bad >= cfg.early_stop_patience
        if out is not None:
            write_log(out / "train_log.csv", result.log)
            meta = {"epoch": epoch + 1, "step": step, "bad_epochs": bad,
                    "best_epoch": result.best_epoch, "best_val_acc": result.best_val_acc,
                    "log": np.array([[np.nan if v is None else v for v in r] for r in result.log],
                                    dtype=np.float64)}
            arrays = checkpoint_arrays(model, opt, meta)
            arrays.update({f"best/{k}": v for k, v in result.best_state.items()})
            save_checkpoint(model, out / "last.ckpt", config_text, shuffle.state, arrays=arrays)
        if done:
            result.stopped_early = True
            break
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            return result

    model.load_state_arrays(result.best_state)
    if out is not None:
        save_checkpoint(model, out / "best.ckpt", config_text, shuffle.state,
                        meta={"epoch": result.best_epoch, "step": step})
    return result
