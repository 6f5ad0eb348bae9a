"""Recognition and counting metrics.

Expression accuracy is reported as the fraction of predictions whose
token sequence exactly matches the target (ExpRate), plus tolerant
variants admitting up to one or two token-level edits. "Symbol-level
errors" are realized as token-level Levenshtein distance on the markup
sequence, with structural tokens ({, }, ^, _) counting as symbols;
numbers are comparable only under this convention.

Counting error per image is MAE = (1/C) * sum_i |V_i - Vhat_i| and
MSE = sqrt((1/C) * sum_i |V_i - Vhat_i|^2), each then averaged over
images.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .vocab import TokenSequence


def edit_distance(pred, target) -> int:
    """Unit-cost Levenshtein distance on interior tokens (sos/eos stripped)."""
    a = _interior(pred)
    b = _interior(target)
    if len(a) > len(b):
        a, b = b, a
    current = list(range(len(a) + 1))
    for i in range(1, len(b) + 1):
        previous, current = current, [i] + [0] * len(a)
        for j in range(1, len(a) + 1):
            cost = 0 if a[j - 1] == b[i - 1] else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
    return current[len(a)]


def _interior(seq):
    if isinstance(seq, TokenSequence):
        return list(seq.interior)
    seq = list(seq)
    if seq and seq[0] == 0:
        seq = seq[1:]
    if seq and seq[-1] == 1:
        seq = seq[:-1]
    return seq


def expression_metrics(pairs):
    """(exprate, leq1, leq2) percentages over (pred, target) sequence pairs."""
    if not pairs:
        raise ValueError("expression_metrics needs at least one pair")
    dists = [edit_distance(p, t) for p, t in pairs]
    n = len(dists)
    exprate = 100.0 * sum(d == 0 for d in dists) / n
    leq1 = 100.0 * sum(d <= 1 for d in dists) / n
    leq2 = 100.0 * sum(d <= 2 for d in dists) / n
    return exprate, leq1, leq2


def counting_metrics(per_image):
    """(mae_ave, mse_ave) over a list of (predicted, ground truth) count vectors."""
    if not per_image:
        raise ValueError("counting_metrics needs at least one image")
    maes, mses = [], []
    for v, v_hat in per_image:
        v = np.asarray(v, dtype=np.float64)
        v_hat = np.asarray(v_hat, dtype=np.float64)
        if v.shape != v_hat.shape:
            raise ValueError(f"count vector shapes differ: {v.shape} vs {v_hat.shape}")
        err = np.abs(v - v_hat)
        maes.append(err.mean())
        mses.append(np.sqrt((err**2).mean()))
    return float(np.mean(maes)), float(np.mean(mses))


@dataclass
class SampleRecord:
    predicted: str
    target: str
    edit_distance: int
    count_mae: float
    truncated: bool = False


@dataclass
class EvalReport:
    exprate: float
    leq1: float
    leq2: float
    mae_ave: float
    mse_ave: float
    per_sample: list = field(default_factory=list)
    config_hash: str = ""
    checkpoint_id: str = ""
    dataset_id: str = ""

    def __post_init__(self):
        if not (self.exprate <= self.leq1 + 1e-9 and self.leq1 <= self.leq2 + 1e-9):
            raise ValueError("exprate <= leq1 <= leq2 violated")
        for v in (self.exprate, self.leq1, self.leq2, self.mae_ave, self.mse_ave):
            if not np.isfinite(v):
                raise ValueError("non-finite metric value")

    def to_json(self) -> str:
        payload = {
            "exprate": self.exprate,
            "leq1": self.leq1,
            "leq2": self.leq2,
            "mae_ave": self.mae_ave,
            "mse_ave": self.mse_ave,
            "config_hash": self.config_hash,
            "checkpoint_id": self.checkpoint_id,
            "dataset_id": self.dataset_id,
            "per_sample": [vars(r) for r in self.per_sample],
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        per_sample = [SampleRecord(**r) for r in raw.pop("per_sample", [])]
        return cls(per_sample=per_sample, **raw)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["predicted", "target", "edit_distance", "count_mae", "truncated"])
            for r in self.per_sample:
                writer.writerow([r.predicted, r.target, r.edit_distance, r.count_mae, r.truncated])


def build_report(pairs, count_pairs, per_sample=None, **metadata) -> EvalReport:
    exprate, leq1, leq2 = expression_metrics(pairs)
    mae_ave, mse_ave = counting_metrics(count_pairs)
    return EvalReport(
        exprate=exprate,
        leq1=leq1,
        leq2=leq2,
        mae_ave=mae_ave,
        mse_ave=mse_ave,
        per_sample=per_sample or [],
        **metadata,
    )
