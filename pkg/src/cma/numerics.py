"""Dense float64 kernels and the finite-difference verification oracle.

Everything here is a pure function over numpy arrays. All public
operations compute in 64-bit precision and guarantee finite outputs.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DegenerateVectorError, DimensionError, NumericError

# Vectors with Euclidean norm below this are treated as direction-free.
DEGENERATE_NORM = 1e-12


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def check_finite(name: str, arr: np.ndarray) -> None:
    """Raise NumericError if ``arr`` contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``.

    The maximum is subtracted unconditionally before exponentiation, so
    arbitrarily large (finite) inputs cannot overflow. Adding a constant
    to every input leaves the result unchanged and the argmax is always
    preserved.
    """
    x = _as_f64(v)
    if x.size == 0:
        raise DimensionError("softmax: empty input")
    check_finite("softmax input", x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm, preserving direction.

    Near-zero vectors raise DegenerateVectorError instead of silently
    producing zeros or NaNs.
    """
    x = _as_f64(v)
    if x.size == 0:
        raise DimensionError("l2_normalize: empty input")
    check_finite("l2_normalize input", x)
    norm = float(np.linalg.norm(x))
    if norm < DEGENERATE_NORM:
        raise DegenerateVectorError(
            f"cannot normalize vector with norm {norm:.3e} (< {DEGENERATE_NORM:.0e})"
        )
    return x / norm


def affine(x, w, b) -> np.ndarray:
    """Row-wise affine map ``x @ w + b``.

    ``x`` may be a single vector or a matrix of row vectors; ``b`` is
    broadcast over rows.
    """
    xm = _as_f64(x)
    wm = _as_f64(w)
    bv = _as_f64(b)
    if xm.ndim == 1:
        xm = xm[None, :]
        squeeze = True
    else:
        squeeze = False
    if xm.ndim != 2 or wm.ndim != 2:
        raise DimensionError(
            f"affine: expected 2-D operands, got x{xm.shape} and w{wm.shape}"
        )
    if xm.shape[1] != wm.shape[0]:
        raise DimensionError(
            f"affine: inner dimensions disagree, x has shape {tuple(xm.shape)} "
            f"but w has shape {tuple(wm.shape)}"
        )
    if bv.shape != (wm.shape[1],):
        raise DimensionError(
            f"affine: bias has shape {tuple(bv.shape)}, expected ({wm.shape[1]},)"
        )
    out = xm @ wm + bv
    return out[0] if squeeze else out


def gradient_check(
    loss_fn: Callable[[np.ndarray], float],
    analytic_grad,
    params,
    eps: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central finite differences.

    ``loss_fn`` maps a flat parameter vector to a scalar loss;
    ``analytic_grad`` is either the claimed gradient at ``params`` or a
    callable producing it. Returns the maximum over coordinates of

        |analytic - numeric| / max(1e-8, |analytic| + |numeric|)

    which is ~0.5 for a completely wrong coordinate and < 1e-6 for an
    exact gradient of a smooth loss.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"gradient_check: eps={eps:g} outside [1e-7, 1e-3]")
    p = _as_f64(params).ravel().copy()
    if p.size == 0:
        raise DimensionError("gradient_check: empty parameter vector")
    grad = analytic_grad(p) if callable(analytic_grad) else analytic_grad
    g = _as_f64(grad).ravel()
    if g.shape != p.shape:
        raise DimensionError(
            f"gradient_check: gradient shape {g.shape} != params shape {p.shape}"
        )
    worst = 0.0
    probe = p.copy()
    for i in range(p.size):
        probe[i] = p[i] + eps
        up = float(loss_fn(probe))
        probe[i] = p[i] - eps
        down = float(loss_fn(probe))
        probe[i] = p[i]
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(
                f"gradient_check: non-finite loss while probing coordinate {i}"
            )
        numeric = (up - down) / (2.0 * eps)
        denom = max(1e-8, abs(g[i]) + abs(numeric))
        worst = max(worst, abs(g[i] - numeric) / denom)
    return worst


def is_prob_vector(v, tol: float = 1e-9) -> bool:
    """True if every entry lies in (0, 1) and the entries sum to 1 within tol."""
    x = _as_f64(v)
    if x.ndim != 1 or x.size == 0 or not np.all(np.isfinite(x)):
        return False
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        return False
    return abs(float(np.sum(x)) - 1.0) <= tol


def mean_rows(m) -> np.ndarray:
    """Mean-pool a (L, d) token matrix to a single (d,) vector."""
    x = _as_f64(m)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError(f"mean_rows: expected non-empty (L, d) matrix, got {x.shape}")
    if x.shape[0] == 1:
        return x[0]
    return x.mean(axis=0)
