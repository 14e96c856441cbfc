"""Central finite differences: the independent oracle for the tape gradients."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_STEP = 1e-3


def finite_difference_gradient(
    f: Callable[[Tensor], float],
    x: Tensor,
    h: float = DEFAULT_STEP,
    indices: Optional[Iterable[int]] = None,
) -> Tensor:
    """Estimate ``df/dx`` by ``(f(x + h e_i) - f(x - h e_i)) / 2h``.

    Evaluation happens on a float64 copy of ``x``; ``f`` receives that copy.
    Only the flat ``indices`` are estimated when given, other entries stay 0.
    """
    probe = Tensor(np.array(x.data, dtype=np.float64), dtype=np.float64)
    flat = probe.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(probe))
        flat[i] = orig - h
        down = float(f(probe))
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return Tensor(grad.reshape(x.shape), dtype=np.float64)


@contextmanager
def relu_sign_recorder():
    """Collect the sign pattern of every relu input evaluated inside the block."""
    patterns: list[np.ndarray] = []
    observer = lambda arr: patterns.append(arr > 0)  # noqa: E731
    T._RELU_OBSERVERS.append(observer)
    try:
        yield patterns
    finally:
        T._RELU_OBSERVERS.remove(observer)


def _same_patterns(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(p, q) for p, q in zip(a, b))


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped_kinks: int
    worst_index: int = -1
    errors: list[float] = field(default_factory=list)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """``|a - n| / max(|a|, 1e-6)`` elementwise."""
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-6)


def check_gradient(
    f: Callable[[Tensor], float],
    x: Tensor,
    analytic: np.ndarray,
    indices: Iterable[int],
    h: float = DEFAULT_STEP,
) -> GradCheckResult:
    """Compare ``analytic`` to central differences at the given flat indices.

    A coordinate whose ``+h`` or ``-h`` probe flips any relu sign relative to the
    unperturbed point straddles a kink; the difference quotient is meaningless
    there, so such coordinates are counted and skipped rather than compared.
    """
    probe = Tensor(np.array(x.data, dtype=np.float64), dtype=np.float64)
    flat = probe.data.reshape(-1)
    a_flat = np.asarray(analytic, dtype=np.float64).reshape(-1)
    with relu_sign_recorder() as base:
        f(probe)
    base = list(base)

    errors, skipped, worst, worst_i = [], 0, 0.0, -1
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        with relu_sign_recorder() as pat_up:
            up = float(f(probe))
        flat[i] = orig - h
        with relu_sign_recorder() as pat_down:
            down = float(f(probe))
        flat[i] = orig
        if not (_same_patterns(base, pat_up) and _same_patterns(base, pat_down)):
            skipped += 1
            continue
        err = float(relative_error(a_flat[i : i + 1], np.array([(up - down) / (2.0 * h)]))[0])
        errors.append(err)
        if err > worst:
            worst, worst_i = err, i
    return GradCheckResult(worst, len(errors), skipped, worst_i, errors)


def layer_group(name: str) -> str:
    """Map a parameter name onto the layer kind it belongs to."""
    if name.startswith("nasnet."):
        if ".stem." in name:
            return "stem"
        return "reduction_cell" if ".reduce." in name else "normal_cell"
    if name.startswith("vit."):
        if name == "vit.pos":
            return "positional_table"
        if name.startswith("vit.patch."):
            return "patch_embedding"
        if ".attn." in name:
            return "attention"
        if ".ffn" in name:
            return "ffn"
        return "layer_norm"
    if name.startswith("fusion."):
        return "projections"
    return "mlp_head"


def check_model_gradients(
    cfg,
    seed: int,
    coords_per_tensor: int = 8,
    batch: int = 2,
    h: float = DEFAULT_STEP,
) -> dict[str, GradCheckResult]:
    """End-to-end cross-entropy gradient check, one result per layer group.

    Parameters and input come from ``seed``. The analytic pass runs in float64
    through the same ops as training, so the comparison measures the backward
    rules rather than float32 rounding. Up to ``coords_per_tensor`` random
    coordinates of every parameter tensor are probed.
    """
    from .fusion import model_forward
    from .training import init_params

    rng = np.random.default_rng(seed)
    params = {
        k: Tensor(v.data, requires_grad=True, dtype=np.float64) for k, v in init_params(cfg, seed).items()
    }
    x = Tensor(rng.standard_normal((batch, 3, cfg.image_size, cfg.image_size)), dtype=np.float64)
    targets = [int(t) for t in rng.integers(0, cfg.fusion.num_classes, size=batch)]
    with T.Tape() as tape:
        loss = T.cross_entropy(model_forward(x, cfg, params), targets)
    T.backward(loss, tape)

    merged: dict[str, GradCheckResult] = {}
    for name, p in params.items():

        def f(v, name=name):
            return float(T.cross_entropy(model_forward(x, cfg, {**params, name: v}), targets).data)

        k = min(coords_per_tensor, p.data.size)
        idx = rng.choice(p.data.size, size=k, replace=False)
        r = check_gradient(f, p, p.grad, idx, h)
        g = merged.setdefault(layer_group(name), GradCheckResult(0.0, 0, 0))
        if r.max_rel_error >= g.max_rel_error and r.checked:
            g.max_rel_error, g.worst_index = r.max_rel_error, r.worst_index
        g.checked += r.checked
        g.skipped_kinks += r.skipped_kinks
        g.errors += r.errors
    return merged
