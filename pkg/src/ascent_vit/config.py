"""Line-oriented run configuration (``key = value``, ``#`` comments).

A :class:`RunConfig` is a flat, typed key map. ``preset = <name>`` applies a
named bundle of values first; every key written explicitly (in the file or
through overrides) wins over the preset regardless of where it appears.
The resolved echo lists every key, so parsing it again gives back an equal
config.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .backbone import BackboneConfig
from .cram import ConceptSet
from .dmsf import PSI_PRESETS, DmsfConfig
from .layers import ConfigError
from .model import ModelConfig
from .mse import MseConfig
from .trainer import TrainConfig


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _opt_float(text: str):
    return None if text.lower() in ("auto", "none", "") else float(text)


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    # data
    "dataset": (_choice("shapeconcepts", "cmnist"), "shapeconcepts"),
    "n_samples": (int, 2500),
    "data_seed": (int, 7),
    "split": (_floats, (0.8, 0.2, 0.0)),
    "min_objects": (int, 1),
    "max_objects": (int, 3),
    "idx_images": (str, ""),
    "idx_labels": (str, ""),
    "cmnist_task": (_choice("parity", "digit"), "parity"),
    # backbone
    "image_size": (int, 32),
    "channels": (int, 1),
    "patch_size": (int, 4),
    "dim": (int, 64),
    "depth": (int, 2),
    "heads": (int, 4),
    "mlp_ratio": (int, 4),
    "finetune": (_bool, True),
    # scale encoder and fusion
    "mse_enabled": (_bool, True),
    "dmsf_enabled": (_bool, True),
    "cram_enabled": (_bool, True),
    "num_scales": (int, 3),
    "scale_fractions": (_floats, (0.5, 0.25, 0.125)),
    "stem_width": (int, 8),
    "psi": (float, 1.0),
    "dmsf_heads": (int, 4),
    "dmsf_points": (int, 2),
    "i_init": (float, 0.01),
    "cram_heads": (int, 2),
    # training
    "epochs": (int, 20),
    "batch_size": (int, 32),
    "lr_max": (float, 1e-3),
    "warmup_epochs": (int, 2),
    "weight_decay": (float, 1e-3),
    "lambda": (float, 1.0),
    "lambda_global": (float, 1.0),
    "seed": (int, 0),
    "early_stop_patience": (int, 5),
    # evaluation
    "eval_batch": (int, 100),
    "tau_spatial": (_opt_float, None),
    "tau_global": (_opt_float, None),
    # ablation
    "ablate_axis": (_choice("modules", "psi", "heads"), "modules"),
    "ablate_seeds": (_ints, (0, 1, 2)),
    "psi_sweep": (_floats, (0.0, 0.5, 1.0, 2.0)),
    "heads_sweep": (_ints, (1, 2, 4, 8)),
}

PRESETS: dict[str, dict[str, object]] = {
    **{name: {"psi": psi} for name, psi in PSI_PRESETS.items()},
    # reference-scale geometry and optimiser; far too large for a desk run
    "reference": {"image_size": 224, "channels": 3, "patch_size": 16, "dim": 1024, "depth": 24,
              "heads": 16, "scale_fractions": (1 / 8, 1 / 16, 1 / 32), "dmsf_heads": 16,
              "dmsf_points": 4, "epochs": 50, "batch_size": 16, "lr_max": 5e-5,
              "warmup_epochs": 10},
}


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    values: dict[str, object] = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})
    preset: str | None = None

    def __getitem__(self, key: str):
        return self.values[key]

    def resolved_text(self) -> str:
        lines = []
        if self.preset:
            lines.append(f"preset = {self.preset}")
        lines += [f"{k} = {_format(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def write_resolved(self, out_dir) -> Path:
        path = Path(out_dir) / "resolved.cfg"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.resolved_text())
        return path

    # typed views --------------------------------------------------------

    def model_config(self, concepts: ConceptSet, num_classes: int) -> ModelConfig:
        v = self.values
        n = v["num_scales"]
        fractions = v["scale_fractions"]
        return ModelConfig(
            backbone=BackboneConfig(v["image_size"], v["channels"], v["patch_size"], v["dim"],
                                    v["depth"], v["heads"], v["mlp_ratio"], v["finetune"]),
            mse=MseConfig(num_scales=n, stem_width=v["stem_width"],
                          scale_fractions=tuple(fractions)),
            dmsf=DmsfConfig(v["dmsf_heads"], v["dmsf_points"], v["psi"], v["i_init"]),
            concepts=concepts, num_classes=num_classes, cram_heads=v["cram_heads"],
            mse_enabled=v["mse_enabled"], dmsf_enabled=v["dmsf_enabled"],
            cram_enabled=v["cram_enabled"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(epochs=v["epochs"], batch_size=v["batch_size"], lr_max=v["lr_max"],
                           warmup_epochs=v["warmup_epochs"], weight_decay=v["weight_decay"],
                           lam=v["lambda"], lam_global=v["lambda_global"], seed=v["seed"],
                           early_stop_patience=v["early_stop_patience"])


def _parse_line(raw: str, where: str):
    line = raw.split("#", 1)[0].strip()
    if not line:
        return None
    if "=" not in line:
        raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
    key, value = (p.strip() for p in line.split("=", 1))
    if key != "preset" and key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    if key == "preset":
        if value not in PRESETS:
            raise ConfigError(f"{where}: unknown preset {value!r}; choose from {sorted(PRESETS)}")
        return key, value
    parser = SCHEMA[key][0]
    try:
        return key, parser(value)
    except ValueError as err:
        raise ConfigError(f"{where}: cannot parse {key} = {value!r} ({err})") from None


def parse_config(text: str | None = None, overrides=(), source: str = "config",
                 base: RunConfig | None = None) -> RunConfig:
    """Parse config ``text`` then ``overrides`` (``key=value`` strings); later wins.

    ``base`` supplies the starting values instead of the defaults. Errors
    name the line (``source:N``) or the override position.
    """
    entries = []
    for n, raw in enumerate((text or "").splitlines(), 1):
        item = _parse_line(raw, f"{source}:{n}")
        if item:
            entries.append((item, f"{source}:{n}"))
    for n, raw in enumerate(overrides, 1):
        item = _parse_line(raw, f"--set #{n}")
        if item is None:
            raise ConfigError(f"--set #{n}: empty override")
        entries.append((item, f"--set #{n}"))

    seen: dict[str, str] = {}
    explicit: dict[str, object] = {}
    preset = None
    for (key, value), where in entries:
        if key in seen and where.startswith(source):
            warnings.warn(f"{where}: duplicate key {key!r} (first at {seen[key]}); "
                          f"last occurrence wins", stacklevel=2)
        seen.setdefault(key, where)
        if key == "preset":
            preset = value
        else:
            explicit[key] = value

    cfg = RunConfig(preset=preset)
    if base is not None:
        cfg.values.update(base.values)
        cfg.preset = preset or base.preset
    if preset:
        cfg.values.update(PRESETS[preset])
    cfg.values.update(explicit)
    return cfg


def load_config(path=None, overrides=(), base: RunConfig | None = None) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides, source=str(path) if path else "config", base=base)
