"""Central finite-difference checks against tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    worst_index: int
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def _numeric(f: Callable[[], float], x: Tensor, coords, h: float) -> np.ndarray:
    flat = x.data.reshape(-1)
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return out


def _report(analytic, numeric, coords, tol) -> GradCheckReport:
    err = relative_error(analytic, numeric)
    worst = int(np.argmax(err)) if err.size else 0
    max_err = float(err[worst]) if err.size else 0.0
    return GradCheckReport(max_err, max_err < tol, int(coords[worst]) if err.size else -1,
                           analytic, numeric, np.asarray(coords))


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
                      tol: float = 1e-4, coords: Sequence[int] | None = None) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f(x)`` with central differences.

    ``coords`` restricts the check to selected flat indices of ``x``.
    """
    x.requires_grad = True
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
    backward(tape, out)
    if coords is None:
        coords = np.arange(x.size)
    coords = np.asarray(coords, dtype=np.int64)
    analytic = x.grad.reshape(-1)[coords].copy()
    numeric = _numeric(lambda: f(x).item(), x, coords, h)
    return _report(analytic, numeric, coords, tol)


def check_parameter_groups(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                           h: float = 1e-5, tol: float = 1e-4, per_group: int | None = 8,
                           rng=None) -> dict[str, GradCheckReport]:
    """Finite-difference check of every named parameter under one backward pass.

    With ``per_group`` set, that many flat coordinates per tensor are checked:
    half are those with the largest analytic magnitude, the rest are drawn
    with ``rng`` (an :class:`~ascent_vit.numerics.rng.Rng`).
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    grads = {k: p.grad.reshape(-1).copy() for k, p in params.items()}
    reports = {}
    for name, p in params.items():
        g = grads[name]
        if per_group is None or per_group >= p.size:
            coords = np.arange(p.size)
        else:
            top = list(np.argsort(-np.abs(g), kind="stable")[: max(1, per_group // 2)])
            taken = set(top)
            pool = [i for i in range(p.size) if i not in taken]
            extra = []
            while len(extra) < per_group - len(top) and pool:
                extra.append(pool.pop(rng.integers(len(pool)) if rng is not None else 0))
            coords = np.array(sorted(top + extra), dtype=np.int64)
        numeric = _numeric(lambda: loss_fn().item(), p, coords, h)
        reports[name] = _report(g[coords], numeric, coords, tol)
    return reports
