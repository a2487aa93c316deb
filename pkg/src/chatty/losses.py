"""Loss terms: source cross-entropy, domain-adversarial loss, the bilinear
transport loss (plain, cosine and embedded variants), minimum class confusion
and their weighted sum.

All functions take and return :class:`~chatty.autodiff.Node` objects so the
result can be backpropagated.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DomainError, ParameterError, ShapeError

ADV_CLAMP = 1e-7
COS_EPS = 1e-8


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.0016
    temperature: float = 2.5
    class_info: Optional[np.ndarray] = None
    confusion_embed: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError(f"loss weights must be non-negative, got {self.lambda1}, {self.lambda2}")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")
        for name in ("class_info", "confusion_embed"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=np.float64)
                if m.ndim != 2 or m.shape[0] != m.shape[1]:
                    raise ShapeError(f"{name} must be a square matrix, got shape {m.shape}")
                object.__setattr__(self, name, m)

    def check_classes(self, c: int) -> None:
        for name in ("class_info", "confusion_embed"):
            m = getattr(self, name)
            if m is not None and m.shape != (c, c):
                raise ShapeError(f"{name} is {m.shape}, expected ({c}, {c})")


# Hyperparameters used for the two office benchmarks (31 and 65 classes).
PRESETS = {
    "office31": LossWeights(lambda1=1.0, lambda2=0.0016),
    "officehome": LossWeights(lambda1=1.0, lambda2=0.0002),
}


@dataclass
class LossBreakdown:
    l_c: float
    l_adv: float
    l_tl: float
    l_mcc: float
    l_total: float

    def as_dict(self) -> dict:
        return asdict(self)


def cross_entropy(logits: Node, labels) -> Node:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    b, c = logits.value.shape
    if labels.shape != (b,):
        raise ShapeError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    picked = ad.sum_all(ad.mul(ad.log_softmax_rows(logits), onehot))
    return ad.scale(picked, -1.0 / b)


def adversarial_loss(disc_src: Node, disc_tgt: Node) -> Node:
    """Discriminator cross-entropy with source labelled 1 and target labelled 0.

    Each domain's term is averaged over its own batch. Inputs are clamped
    ``ADV_CLAMP`` away from 0 and 1 before the logs; values outside [0, 1]
    are rejected.
    """
    for name, d in (("disc_src", disc_src), ("disc_tgt", disc_tgt)):
        v = d.value
        if v.ndim != 2 or v.shape[1] != 1:
            raise ShapeError(f"{name} must be a column [B x 1], got {v.shape}")
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise DomainError(f"{name} has entries outside (0, 1)")
    lo, hi = ADV_CLAMP, 1.0 - ADV_CLAMP
    src = ad.mean(ad.log(ad.clip(disc_src, lo, hi)))
    tgt = ad.mean(ad.log(ad.sub(1.0, ad.clip(disc_tgt, lo, hi))))
    return ad.neg(ad.add(src, tgt))


def transport_yield(t1: Node, class_info, t2: Node) -> Node:
    """``Y = t1 @ class_info @ t2.T``; ``class_info=None`` means identity."""
    c = t1.value.shape[1]
    if t2.value.shape[1] != c:
        raise ShapeError(f"transport outputs disagree: {t1.value.shape} vs {t2.value.shape}")
    left = t1
    if class_info is not None:
        m = class_info if isinstance(class_info, Node) else np.asarray(class_info, dtype=np.float64)
        shape = m.value.shape if isinstance(m, Node) else m.shape
        if shape != (c, c):
            raise ShapeError(f"class_info is {shape}, expected ({c}, {c})")
        left = ad.matmul(t1, m)
    return ad.matmul(left, ad.transpose(t2))


def transport_loss(y: Node) -> Node:
    """``|sum(Y) - trace(Y)|``: magnitude of the off-diagonal total."""
    return ad.abs_(ad.sub(ad.sum_all(y), ad.trace(y)))


def _unit_rows(t: Node) -> Node:
    norms = ad.sqrt(ad.row_sum(ad.mul(t, t)))
    return ad.div(t, ad.add(norms, COS_EPS))


def transport_loss_cos(t1: Node, t2: Node) -> Node:
    """Transport loss on the cosine-similarity matrix of the two transports."""
    if t1.value.shape[1] != t2.value.shape[1]:
        raise ShapeError(f"transport outputs disagree: {t1.value.shape} vs {t2.value.shape}")
    return transport_loss(transport_yield(_unit_rows(t1), None, _unit_rows(t2)))


def transport_loss_embedded(t1: Node, t2: Node, m) -> Node:
    return transport_loss(transport_yield(t1, m, t2))


def mcc_loss(target_logits: Node, temperature: float = 2.5) -> Node:
    """Minimum class confusion on a batch of target logits.

    Samples are weighted by ``B * softmax(-entropy)`` over the batch, so
    confident samples count more and equal entropies give unit weights. The
    weighted class-correlation matrix is row-normalized and its off-diagonal
    mass, divided by the class count, is the loss. The weights are not
    detached; the whole expression is differentiated.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    b, c = target_logits.value.shape
    if b < 1:
        raise ShapeError("mcc_loss needs at least one sample")
    probs = ad.softmax_rows(target_logits, temperature)
    logp = ad.log_softmax_rows(target_logits, temperature)
    neg_entropy = ad.row_sum(ad.mul(probs, logp))              # [B x 1], equals -H
    weights = ad.scale(ad.softmax_rows(ad.transpose(neg_entropy)), float(b))  # [1 x B]
    weighted = ad.mul(probs, ad.transpose(weights))
    confusion = ad.matmul(ad.transpose(weighted), probs)       # [c x c]
    rs = ad.row_sum(confusion)
    # a class nobody predicts has an all-zero row; leave it at zero
    guard = (rs.value == 0.0).astype(np.float64)
    normalized = ad.div(confusion, ad.add(rs, guard))
    off = ad.sub(ad.sum_all(normalized), ad.trace(normalized))
    return ad.scale(off, 1.0 / c)


def total_loss(l_c: Node, l_adv: Node, l_tl: Node, l_mcc: Node, weights: LossWeights,
               mcc_enabled: bool = False) -> tuple[Node, LossBreakdown]:
    total = ad.add(l_c, ad.add(ad.scale(l_adv, weights.lambda1), ad.scale(l_tl, weights.lambda2)))
    if mcc_enabled:
        total = ad.add(total, l_mcc)
    parts = LossBreakdown(l_c.item(), l_adv.item(), l_tl.item(), l_mcc.item(), total.item())
    return total, parts
