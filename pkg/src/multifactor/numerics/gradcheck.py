"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, clear_tape, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(f: Callable[[], Tensor], p: Tensor, h: float = 1e-5) -> np.ndarray:
    flat = p.data.reshape(-1)
    out = np.empty_like(flat)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f().item()
            flat[i] = old - h
            fm = f().item()
            flat[i] = old
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(p.shape)


def check_gradients(
    f: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5
) -> dict[str, float]:
    """Max elementwise relative error per parameter, analytic vs central differences."""
    for p in params.values():
        p.grad = None
    clear_tape()
    loss = f()
    backward(loss)
    report = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        num = numeric_grad(f, p, h)
        report[name] = float(relative_error(analytic, num).max()) if p.size else 0.0
    return report
