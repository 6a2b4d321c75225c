"""Tiny analytic-field evaluator for configuration files.

Target fields are given as expression strings over x and y (polynomials,
sin/cos and friends), evaluated at mesh nodes or element centroids, so
experiment configs stay self-contained.
"""

from __future__ import annotations

import numpy as np

_NAMESPACE = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "pi": np.pi,
}


def eval_scalar(expr: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Evaluate one expression over coordinate arrays."""
    ns = dict(_NAMESPACE)
    ns["x"] = x
    ns["y"] = y
    try:
        out = eval(expr, {"__builtins__": {}}, ns)  # noqa: S307 - closed namespace
    except Exception as exc:
        raise ValueError(f"cannot evaluate field expression {expr!r}: {exc}") from exc
    return np.broadcast_to(np.asarray(out, dtype=float), x.shape).copy()


def eval_vector_field(exprs: list[str], points: np.ndarray) -> np.ndarray:
    """Evaluate a 2-component field ["fx(x,y)", "fy(x,y)"] at points (n, 2)."""
    if len(exprs) != 2:
        raise ValueError(f"vector fields need exactly two component expressions, got {len(exprs)}")
    x, y = points[:, 0], points[:, 1]
    return np.stack([eval_scalar(e, x, y) for e in exprs], axis=1)


def eval_kelvin_field(exprs: list[str], centroids: np.ndarray) -> np.ndarray:
    """Evaluate a 3-component Kelvin tensor field at element centroids."""
    if len(exprs) != 3:
        raise ValueError(f"Kelvin fields need exactly three component expressions, got {len(exprs)}")
    x, y = centroids[:, 0], centroids[:, 1]
    return np.stack([eval_scalar(e, x, y) for e in exprs], axis=1)
