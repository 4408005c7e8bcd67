"""Training objectives: identity CE, weighted-regularization triplet,
instance- and prototype-level distillation, and the per-setting aggregator.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


class IdentityClassifier(nn.Linear):
    """Bias-free linear classifier; each weight row is a class prototype."""

    def __init__(self, feature_dim: int, num_identities: int):
        super().__init__(feature_dim, num_identities, bias=False)

    @property
    def prototypes(self) -> torch.Tensor:
        return self.weight


def ce_loss(features: torch.Tensor, labels: torch.Tensor,
            classifier: IdentityClassifier) -> torch.Tensor:
    """Mean NLL of features against the classifier's prototypes."""
    if labels.min() < 0 or labels.max() >= classifier.weight.shape[0]:
        raise ValueError("label out of range")
    return F.cross_entropy(classifier(features), labels)


def _pairwise_euclidean(features: torch.Tensor) -> torch.Tensor:
    sq = features.pow(2).sum(dim=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * features @ features.t()
    return d2.clamp(min=1e-12).sqrt()


def wrt_loss(features: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Weighted-regularization triplet loss.

    Per anchor, positive distances are aggregated with softmax(+d) weights and
    negatives with softmax(-d) weights (soft hard-mining in both directions);
    the loss is mean softplus(pos - neg). The anchor itself is not a positive.
    """
    n = features.shape[0]
    dist = _pairwise_euclidean(features)
    same = labels[:, None] == labels[None, :]
    eye = torch.eye(n, dtype=torch.bool, device=features.device)
    pos_mask = same & ~eye
    neg_mask = ~same
    if not pos_mask.any(dim=1).all():
        raise ValueError("an anchor has no positives in the batch")
    if not neg_mask.any(dim=1).all():
        raise ValueError("an anchor has no negatives in the batch")
    ninf = torch.finfo(dist.dtype).min
    w_pos = torch.softmax(dist.masked_fill(~pos_mask, ninf), dim=1)
    w_neg = torch.softmax((-dist).masked_fill(~neg_mask, ninf), dim=1)
    pos_sum = (w_pos * dist).sum(dim=1)
    neg_sum = (w_neg * dist).sum(dim=1)
    return F.softplus(pos_sum - neg_sum).mean()


def kd_instance(student: torch.Tensor, teacher: torch.Tensor) -> torch.Tensor:
    """Mean Euclidean norm (not squared) between student and constant teacher."""
    if student.shape != teacher.shape:
        raise ValueError("student/teacher shape mismatch")
    return torch.linalg.vector_norm(student - teacher.detach(), dim=1).mean()


def kd_prototype(student: torch.Tensor, labels: torch.Tensor,
                 prototypes: torch.Tensor) -> torch.Tensor:
    """CE of the student against gradient-stopped classifier prototypes."""
    if labels.min() < 0 or labels.max() >= prototypes.shape[0]:
        raise ValueError("label out of range")
    return F.cross_entropy(student @ prototypes.detach().t(), labels)


@dataclass
class LossReport:
    l_id: float | None = None        # baseline appearance CE
    l_wrt: float | None = None       # baseline appearance triplet
    l_id_s: float | None = None      # shape-stream CE
    l_wrt_s: float | None = None     # shape-stream triplet
    l_kd: float | None = None        # instance distillation
    l_kd_ce: float | None = None     # prototype distillation
    l_id_q: float | None = None      # fused-query CE
    l_wrt_q: float | None = None     # fused-query triplet
    l_id_a: float | None = None      # enhanced appearance CE
    l_wrt_a: float | None = None     # enhanced appearance triplet
    total: float = 0.0

    TERM_NAMES = ("l_id", "l_wrt", "l_id_s", "l_wrt_s", "l_kd", "l_kd_ce",
                  "l_id_q", "l_wrt_q", "l_id_a", "l_wrt_a")

    def enabled_terms(self) -> dict[str, float]:
        return {n: v for n in self.TERM_NAMES
                if (v := getattr(self, n)) is not None}

    def to_log_fields(self) -> str:
        parts = [f"{n}={getattr(self, n):.6f}" for n in self.TERM_NAMES
                 if getattr(self, n) is not None]
        parts.append(f"total={self.total:.6f}")
        return " ".join(parts)


def total_loss(terms: dict[str, torch.Tensor],
               weights: dict[str, float] | None = None
               ) -> tuple[torch.Tensor, LossReport]:
    """Weighted sum of the enabled loss terms (unit weights by default)."""
    valid = set(LossReport.TERM_NAMES)
    unknown = set(terms) - valid
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    weights = weights or {}
    total = None
    report = LossReport()
    for name, value in terms.items():
        w = weights.get(name, 1.0)
        contrib = w * value
        total = contrib if total is None else total + contrib
        setattr(report, name, float(value.detach()))
    if total is None:
        total = torch.zeros(())
    report.total = float(total.detach())
    return total, report
