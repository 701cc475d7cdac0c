"""The training objectives and their min-max composition.

Three terms: class-weighted supervised loss on source labels,
class-weighted self-training loss on target pseudo-labels, and the
per-head adversarial alignment loss.  The reported objective is
``l_sup + l_self - l_adv``; a single descent pass on
``l_sup + l_self + l_adv`` realizes the min-max because discriminator
inputs pass through gradient reversal.

Instance and entropy weights in the adversarial term are constants
(detached class predictions): every gradient the feature extractor
receives from the adversarial term must route through the reversal
node, otherwise the descent/ascent sign contract breaks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .selection import entropy_weights
from .tensor import Tensor


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of the three terms and the composite objective."""

    l_sup: float
    l_self: float
    l_adv: float
    objective: float

    def to_dict(self) -> dict:
        return {"l_sup": self.l_sup, "l_self": self.l_self,
                "l_adv": self.l_adv, "objective": self.objective}

    @staticmethod
    def from_dict(d: dict) -> "LossBreakdown":
        return LossBreakdown(d["l_sup"], d["l_self"], d["l_adv"], d["objective"])


@dataclass(frozen=True)
class PseudoLabels:
    """Hard argmax labels plus the soft rows they came from (diagnostics)."""

    hard: np.ndarray
    soft: np.ndarray


def supervised_loss(preds: Tensor, labels, class_weights) -> Tensor:
    """Mean over the batch of w_y * cross_entropy(pred, y)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("supervised loss over an empty batch")
    w = np.asarray(class_weights, dtype=np.float64)
    ce = T.cross_entropy_rows(preds, labels)
    return T.mean(T.mul_const(ce, w[labels]))


def assign_pseudo_labels(preds) -> PseudoLabels:
    """Hard pseudo-label per row (argmax, ties to the lowest index)."""
    p = np.asarray(preds, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("prediction matrix must be 2-d")
    return PseudoLabels(hard=p.argmax(axis=1), soft=p.copy())


def self_training_loss(preds: Tensor, pseudo_hard, class_weights, enabled: bool) -> Tensor:
    """Mean of w_pseudo * cross_entropy(pred, pseudo); zero while disabled."""
    if not enabled:
        return Tensor(0.0)
    return supervised_loss(preds, pseudo_hard, class_weights)


def adversarial_loss(domain_preds: Tensor, class_preds, domains, class_weights,
                     use_class_sel: bool, use_entropy_w: bool) -> Tensor:
    """Sum over heads of the weighted binary cross-entropy to the domain tag.

    ``domain_preds[i, k]`` is head k's source-probability for sample i;
    ``class_preds[i, k]`` is the (detached) instance weight assigning
    sample i to head k's alignment task.
    """
    y_hat = np.asarray(class_preds, dtype=np.float64)
    d = np.asarray(domains, dtype=np.float64)
    m, k = domain_preds.shape
    if y_hat.shape != (m, k) or d.shape != (m,):
        raise ValueError("misaligned adversarial batch")
    if ((d != 0.0) & (d != 1.0)).any():
        raise ValueError("domain tags must be 0 (target) or 1 (source)")
    weight = y_hat.copy()
    if use_class_sel:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (k,):
            raise ValueError("class weight per head required")
        weight *= w
    if use_entropy_w:
        weight *= entropy_weights(y_hat)[:, None]
    bce = T.binary_cross_entropy(domain_preds, d)
    return T.scale(T.sum_all(T.mul_const(bce, weight)), 1.0 / m)


def compose_objective(l_sup: Tensor, l_self: Tensor, l_adv: Tensor | None,
                      regularizers: tuple[Tensor, ...] = ()) -> tuple[LossBreakdown, Tensor]:
    """Reported breakdown plus the tensor a single descent step minimizes.

    The adversarial term enters the minimized total with a plus sign;
    gradient reversal inside the discriminator forward makes that one
    step descend for the discriminator and ascend for the extractor.
    """
    sup_v = l_sup.item()
    self_v = l_self.item()
    adv_v = 0.0 if l_adv is None else l_adv.item()
    breakdown = LossBreakdown(sup_v, self_v, adv_v, sup_v + self_v - adv_v)
    total = T.add(l_sup, l_self)
    if l_adv is not None:
        total = T.add(total, l_adv)
    for reg in regularizers:
        total = T.add(total, reg)
    return breakdown, total
