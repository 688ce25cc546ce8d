"""Central finite-difference verification of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import MaxPool2, ReLU
from .models import Classifier, ClassifierConfig


@dataclass
class GradcheckResult:
    checked: int
    skipped_kinks: int
    max_rel_err: float
    worst: list = field(default_factory=list)  # (name, flat index, analytic, numeric, rel_err)

    def passed(self, tol: float = 1e-3, minimum: int = 100) -> bool:
        return self.checked >= minimum and self.max_rel_err < tol


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _iter_layers(layer):
    yield layer
    for _, child in layer.named_children():
        yield from _iter_layers(child)


def _pattern(model: Classifier) -> bytes:
    # ReLU masks and max-pool winners fix the piecewise-linear region
    parts = []
    for layer in _iter_layers(model.net):
        if isinstance(layer, ReLU):
            parts.append(layer._mask.tobytes())
        elif isinstance(layer, MaxPool2):
            parts.append(layer._arg.tobytes())
    return b"".join(parts)


def toy_config(arch: str) -> ClassifierConfig:
    """2-class 16x16 instance small enough for a per-parameter sweep."""
    if arch == "tiny_cnn":
        return ClassifierConfig(n_classes=2, arch=arch, input_side=16, cnn_channels=[2, 4],
                                cnn_hidden=8, seed=3)
    return ClassifierConfig(n_classes=2, arch=arch, input_side=16, patch=4, proj_dim=8, heads=2,
                            layers=2, transformer_mlp=16, mlp_head=[16, 8], dropout=0.5, seed=3)


def gradcheck(model: Classifier, images, labels, n_params: int = 100, step: float = 1e-3,
              seed: int = 0, randomize: float | None = 0.2, max_probes: int = 5000,
              dropout_seed: int = 11) -> GradcheckResult:
    """Compare analytic gradients with central differences on random parameters.

    The model should be float64. With ``randomize`` set, every parameter is first
    replaced by ``N(0, randomize**2)`` draws so biases are not sitting on ReLU
    kinks. Dropout masks are replayed from ``dropout_seed`` on every evaluation.
    Probes whose perturbation changes the ReLU/max-pool pattern straddle a kink,
    where the loss is not differentiable; they are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    params = model.params()
    if randomize:
        for arr in params.values():
            arr[...] = rng.normal(0.0, randomize, size=arr.shape)

    def loss():
        return model.loss_and_grad(images, labels, rng=np.random.default_rng(dropout_seed))[0]

    loss()
    base_pattern = _pattern(model)
    analytic = {k: v.copy() for k, v in model.grads().items()}

    names = list(params)
    sizes = np.array([params[n].size for n in names])
    bounds = np.cumsum(sizes)
    checked, skipped, results = 0, 0, []
    for _ in range(max_probes):
        if checked >= n_params:
            break
        j = int(rng.integers(bounds[-1]))
        k = int(np.searchsorted(bounds, j, side="right"))
        name, idx = names[k], j - (bounds[k] - sizes[k])
        p = params[name]
        old = p.flat[idx]
        p.flat[idx] = old + step
        up = loss()
        up_pattern = _pattern(model)
        p.flat[idx] = old - step
        down = loss()
        down_pattern = _pattern(model)
        p.flat[idx] = old
        if up_pattern != base_pattern or down_pattern != base_pattern:
            skipped += 1
            continue
        numeric = (up - down) / (2 * step)
        a = float(analytic[name].flat[idx])
        results.append((name, int(idx), a, numeric, rel_err(a, numeric)))
        checked += 1
    results.sort(key=lambda r: -r[4])
    return GradcheckResult(checked=checked, skipped_kinks=skipped,
                           max_rel_err=results[0][4] if results else float("nan"),
                           worst=results[:5])


def toy_gradcheck(arch: str, n_params: int = 100, seed: int = 0) -> GradcheckResult:
    cfg = toy_config(arch)
    model = Classifier(cfg, dtype=np.float64)
    rng = np.random.default_rng([seed, 99])
    images = (rng.random((4, 16, 16)) < 0.4).astype(np.float64)
    labels = np.array([0, 1, 1, 0])
    return gradcheck(model, images, labels, n_params=n_params, seed=seed)
