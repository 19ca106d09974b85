"""Exact 1-D total-variation denoising.

The objective minimized by :func:`denoise_tv` is::

    TV(u) + (lam / 2) * sum((f - u) ** 2),     TV(u) = sum(|u[i+1] - u[i]|)

``lam`` weighs the *fidelity* term: larger values keep ``u`` closer to the
input ``f``.  Libraries that put the weight on the TV term instead use
``1 / lam``.

The scan runs in a compiled kernel when ``hummit.tvr._tvcore`` is built and
in pure Python otherwise; set ``HUMMIT_PURE_PYTHON=1`` to force the latter.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import EmptySignal, LengthMismatch, NonFiniteInput
from . import _fallback

try:
    if os.environ.get("HUMMIT_PURE_PYTHON"):
        raise ImportError("pure-Python backend forced")
    from ._tvcore import tv1d_denoise as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


@dataclass(frozen=True)
class TvrConfig:
    lambda_fidelity: float = 0.3

    def __post_init__(self):
        if not (math.isfinite(self.lambda_fidelity) and self.lambda_fidelity > 0):
            raise ValueError("lambda_fidelity must be positive and finite")


def _lam(cfg) -> float:
    if isinstance(cfg, TvrConfig):
        return cfg.lambda_fidelity
    return TvrConfig(float(cfg)).lambda_fidelity


def tv_norm(x) -> float:
    """Sum of absolute first differences."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("tv_norm of an empty signal")
    return float(np.abs(np.diff(x)).sum())


def tv_objective(f, u, cfg) -> float:
    """``tv_norm(u) + lam/2 * ||f - u||^2``; ``cfg`` is a TvrConfig or a float lam."""
    f = np.asarray(f, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if f.shape != u.shape:
        raise LengthMismatch(f"signals of length {f.size} and {u.size}")
    if f.size == 0:
        raise EmptySignal("objective of an empty signal")
    return tv_norm(u) + 0.5 * _lam(cfg) * float(np.sum((f - u) ** 2))


def denoise_tv(f, cfg=TvrConfig(), *, backend: str | None = None) -> np.ndarray:
    """Return the unique minimizer of :func:`tv_objective` for input ``f``.

    Parameters
    ----------
    f : array_like
        Noisy 1-D signal.
    cfg : TvrConfig or float
        Fidelity weight ``lam``.
    backend : {"cython", "python"}, optional
        Override the kernel chosen at import.
    """
    f = np.ascontiguousarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise EmptySignal("denoise_tv needs a non-empty 1-D signal")
    if not np.all(np.isfinite(f)):
        raise NonFiniteInput("signal contains NaN or infinity")
    weight = 1.0 / _lam(cfg)

    # constant solution: every partial sum of (f - mean) within the TV weight
    mean = float(f.mean())
    if f.size == 1 or np.max(np.abs(np.cumsum(f[:-1] - mean))) <= weight:
        return np.full(f.size, mean)

    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled TV kernel is not available")
        return _compiled(f, weight)
    if backend == "python":
        return np.asarray(_fallback.tv1d_denoise(f.tolist(), weight))
    raise ValueError(f"unknown backend {backend!r}")


__all__ = ["BACKEND", "TvrConfig", "denoise_tv", "tv_norm", "tv_objective"]
