"""Virtual-label smoothness regularizer.

The regularizer asks: how far can the model's predictive distribution be
pushed by a tiny input perturbation? `estimate_r_adv` finds the most
sensitive per-sample direction by power iteration on the KL objective,
`lds_value` measures the divergence at magnitude epsilon along it, and
`vat_regularizer` averages that over a batch. The direction search treats
the current predictions as fixed targets ("virtual labels"), so unlabeled
samples contribute exactly like labeled ones would.

Sign caveat: the KL objective is locally quadratic around the clean input,
so the power iterate converges to an eigendirection whose overall sign
depends on the random start. Both signs are equally adversarial to first
order; tests compare directions up to sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .model import ModelSpec, ParameterSet, forward
from .rng import Rng
from .tensor import Tensor, backward


@dataclass(frozen=True)
class VatConfig:
    epsilon: float = 2.5
    xi: float = 10.0
    power_iterations: int = 1
    alpha: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.xi > 0:
            raise ValueError(f"xi must be positive, got {self.xi}")
        if not (isinstance(self.power_iterations, int) and self.power_iterations >= 1):
            raise ValueError(f"power_iterations must be an integer >= 1, got {self.power_iterations}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")


class Diagnostics:
    """Counts samples whose direction estimate stayed degenerate after the
    one allowed resample. Module-level because the event is a corner case
    worth noticing anywhere it happens."""

    def __init__(self):
        self.degenerate_directions = 0

    def reset(self):
        self.degenerate_directions = 0


DIAGNOSTICS = Diagnostics()


def virtual_label(spec: ModelSpec, pset: ParameterSet, x: Tensor) -> ops.Distribution:
    """Current class probabilities on the clean input, frozen as constants.

    Runs with detached parameters and train-mode batch statistics, without
    touching running statistics, so calling this never influences training
    state or gradients.
    """
    logits = forward(spec, pset.detached(), Tensor(x.data), mode="train",
                     update_running_stats=False)
    return ops.Distribution(Tensor(ops.softmax(logits.data)))


def estimate_r_adv(spec: ModelSpec, pset: ParameterSet, x: Tensor,
                   cfg: VatConfig, rng: Rng) -> Tensor:
    """Per-sample unit direction along which predictions change fastest.

    Power iteration: start from a random unit direction, repeatedly take the
    gradient of KL(virtual_label || prediction at x + xi*d) with respect to d
    and renormalize. Parameters stay detached throughout, so the only
    gradients computed are the ones into d.

    A sample whose gradient collapses below norm 1e-12 gets its direction
    resampled once; if the gradient is still degenerate the sample keeps its
    current direction and DIAGNOSTICS.degenerate_directions is bumped.
    """
    if x.shape[0] < 1:
        raise ValueError("estimate_r_adv needs a nonempty batch")
    detached = pset.detached()
    target = virtual_label(spec, pset, x)
    xdata = x.data

    d = ops.unit_directions(rng.normal(x.shape))
    for _ in range(cfg.power_iterations):
        g = _kl_grad_wrt_direction(spec, detached, target, xdata, d, cfg.xi)
        norms = _sample_norms(g)
        bad = norms <= 1e-12
        if bad.any():
            fresh = ops.unit_directions(rng.normal(x.shape))
            d = np.where(_expand(bad, d.ndim), fresh, d)
            g = _kl_grad_wrt_direction(spec, detached, target, xdata, d, cfg.xi)
            norms = _sample_norms(g)
            bad = norms <= 1e-12
            if bad.any():
                DIAGNOSTICS.degenerate_directions += int(bad.sum())
        mask = _expand(bad, d.ndim)
        safe = np.where(mask, 1.0, _expand(norms, d.ndim))
        d = np.where(mask, d, g / safe)
    return Tensor(d)


def _kl_grad_wrt_direction(spec, detached_pset, target, xdata, d, xi):
    leaf = Tensor(d, requires_grad=True)
    perturbed = Tensor(xdata) + leaf * xi
    logits = forward(spec, detached_pset, perturbed, mode="train",
                     update_running_stats=False)
    backward(ops.kl_divergence(target, logits))
    return leaf.grad


def _sample_norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt((v ** 2).sum(axis=tuple(range(1, v.ndim))))


def _expand(per_sample: np.ndarray, ndim: int) -> np.ndarray:
    return per_sample.reshape((-1,) + (1,) * (ndim - 1))


def lds_value(spec: ModelSpec, pset: ParameterSet, x: Tensor, r_adv: Tensor,
              cfg: VatConfig) -> Tensor:
    """KL(virtual label || prediction at x + epsilon*r_adv), batch mean.

    The virtual label is a constant; gradients reach the parameters only
    through the perturbed forward pass.
    """
    target = virtual_label(spec, pset, x)
    perturbed = Tensor(x.data + cfg.epsilon * r_adv.data)
    logits = forward(spec, pset, perturbed, mode="train", update_running_stats=False)
    return ops.kl_divergence(target, logits)


def vat_regularizer(spec: ModelSpec, pset: ParameterSet, unlabeled: Tensor,
                    cfg: VatConfig, rng: Rng) -> Tensor:
    """Mean smoothness penalty over a batch of unlabeled inputs."""
    if unlabeled.shape[0] < 1:
        raise ValueError("vat_regularizer needs a nonempty batch")
    r_adv = estimate_r_adv(spec, pset, unlabeled, cfg, rng)
    return lds_value(spec, pset, unlabeled, r_adv, cfg)


def combined_loss(ce: Tensor, r_adv_loss: Tensor, alpha: float) -> Tensor:
    """Supervised loss plus alpha times the smoothness penalty."""
    return ce + r_adv_loss * alpha
