"""Model checkpoints on top of the ACVT tensor container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import container
from ..container import Container, FormatError


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    config: str = ""
    rng_state: tuple[int, int, int, int] = (0, 0, 0, 0)
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def epoch(self) -> int:
        e = self.arrays.get("meta/epoch")
        return int(e) if e is not None else 0


def checkpoint_arrays(model, optimizer=None, meta: dict | None = None) -> dict[str, np.ndarray]:
    arrays = dict(model.state_arrays())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    for k, v in (meta or {}).items():
        arrays[k if "/" in k else f"meta/{k}"] = np.asarray(v, dtype=np.float64)
    return arrays


def save_checkpoint(model, path, config: str = "", rng_state=(0, 0, 0, 0), optimizer=None,
                    meta: dict | None = None, arrays: dict | None = None) -> None:
    """Write parameters, buffers, optional optimiser state and ``meta/*`` scalars."""
    if arrays is None:
        arrays = checkpoint_arrays(model, optimizer, meta)
    container.save(path, Container(arrays, config, tuple(int(w) for w in rng_state)))


def read_checkpoint(path) -> Checkpoint:
    c = container.load(path)
    return Checkpoint(c.tensors, c.config, c.rng_state)


def load_checkpoint(path, model, optimizer=None) -> Checkpoint:
    """Load weights (and optimiser state if present and requested) into ``model``."""
    ck = read_checkpoint(path)
    try:
        model.load_state_arrays(ck.arrays)
    except KeyError as err:
        raise FormatError(f"checkpoint lacks tensor {err.args[0]!r}", 0) from None
    if optimizer is not None and "opt/step" in ck.arrays:
        optimizer.load_state_arrays(ck.arrays)
    return ck
