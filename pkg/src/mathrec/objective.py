"""Joint training objective: symbol cross-entropy plus count regression.

The total loss is the unweighted sum of a cross-entropy term over the
predicted symbol distribution at each decoding step and a smooth-L1
regression term between pooled count vectors and their ground truth.
Each counting branch is supervised separately and the branch terms sum
into the counting component; the decoder consumes only the fused
(averaged) vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class LossBreakdown:
    total: torch.Tensor
    cls: torch.Tensor
    counting: torch.Tensor
    counting_by_branch: list = field(default_factory=list)

    def detached(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "cls": float(self.cls.detach()),
            "counting": float(self.counting.detach()),
            "counting_by_branch": [float(b.detach()) for b in self.counting_by_branch],
        }


def cls_loss(prob_rows, target, step_mask=None) -> torch.Tensor:
    """Mean over valid steps of -log p(target_t).

    `prob_rows` holds one simplex row per decoding step: (T, C) for a
    single sequence or (B, T, C) batched. `target` carries the full
    framed sequence(s); row t is scored against target[t + 1], so the
    row count must be len(target) - 1. `step_mask` (same leading shape
    as the rows) excludes batch-padding steps beyond the true eos.
    """
    if prob_rows.dim() == 2:
        prob_rows = prob_rows.unsqueeze(0)
        target = _as_tensor(target, prob_rows.device).unsqueeze(0)
        if step_mask is not None:
            step_mask = step_mask.unsqueeze(0)
    else:
        target = _as_tensor(target, prob_rows.device)
    if prob_rows.shape[1] != target.shape[1] - 1:
        raise ValueError(
            f"expected {target.shape[1] - 1} probability rows, got {prob_rows.shape[1]}"
        )
    nll = -torch.log(prob_rows.gather(2, target[:, 1:].unsqueeze(2)).squeeze(2))
    if step_mask is None:
        return nll.mean(dim=1).mean()
    step_mask = step_mask.to(nll.dtype)
    per_seq = (nll * step_mask).sum(dim=1) / step_mask.sum(dim=1).clamp(min=1)
    return per_seq.mean()


def cls_loss_from_logits(logit_rows, target, step_mask=None) -> torch.Tensor:
    """Same value as cls_loss on softmax(logit_rows), via log-softmax."""
    log_probs = torch.log_softmax(logit_rows, dim=-1)
    if logit_rows.dim() == 2:
        log_probs = log_probs.unsqueeze(0)
        target = _as_tensor(target, logit_rows.device).unsqueeze(0)
        if step_mask is not None:
            step_mask = step_mask.unsqueeze(0)
    else:
        target = _as_tensor(target, logit_rows.device)
    nll = -log_probs.gather(2, target[:, 1:].unsqueeze(2)).squeeze(2)
    if step_mask is None:
        return nll.mean(dim=1).mean()
    step_mask = step_mask.to(nll.dtype)
    per_seq = (nll * step_mask).sum(dim=1) / step_mask.sum(dim=1).clamp(min=1)
    return per_seq.mean()


def counting_loss(v_pred, v_true) -> torch.Tensor:
    """Smooth-L1 between count vectors, mean over classes (and batch).

    Quadratic branch 0.5*d^2 for |d| < 1, linear branch |d| - 0.5
    beyond; the transition point is one count.
    """
    v_pred = _as_tensor(v_pred)
    v_true = _as_tensor(v_true, v_pred.device, v_pred.dtype)
    if v_pred.shape != v_true.shape:
        raise ValueError(f"count vector shapes differ: {v_pred.shape} vs {v_true.shape}")
    d = (v_pred - v_true).abs()
    per_class = torch.where(d < 1.0, 0.5 * d * d, d - 0.5)
    return per_class.mean()


def total_loss(cls_term, branch_vectors, v_true) -> LossBreakdown:
    """Unweighted sum of the two components (no balancing coefficient).

    The counting component is the sum of one smooth-L1 term per branch
    vector.
    """
    branch_terms = [counting_loss(v, v_true) for v in branch_vectors]
    counting = sum(branch_terms) if branch_terms else torch.zeros_like(cls_term)
    return LossBreakdown(
        total=cls_term + counting,
        cls=cls_term,
        counting=counting,
        counting_by_branch=branch_terms,
    )


def _as_tensor(x, device=None, dtype=None):
    if not torch.is_tensor(x):
        x = torch.as_tensor(x)
    if device is not None:
        x = x.to(device)
    if dtype is not None:
        x = x.to(dtype)
    return x
