"""Evaluation metrics: accuracy, calibration, and ensemble diversity.

Calibration uses the standard expected-calibration-error estimator over M
equal-width confidence bins ((m-1)/M, m/M]; a confidence of exactly 0 lands
in the first bin.  Diversity between prediction sources is measured with
Jensen-Shannon divergence (natural log, so bounded by ln 2) and the argmax
disagreement rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError
from .serialize import rows_to_csv

DEFAULT_BIN_COUNT = 30


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape or predicted.ndim != 1:
        raise ContractError(
            f"label shapes differ: {predicted.shape} vs {labels.shape}")
    if predicted.size == 0:
        raise ContractError("accuracy of an empty label set is undefined")
    return float(np.mean(predicted == labels))


@dataclass
class ReliabilityBins:
    """Per-bin occupancy for a reliability diagram over (0, 1]."""

    bin_count: int
    counts: np.ndarray      # samples per bin
    mean_confidence: np.ndarray  # 0 for empty bins
    mean_accuracy: np.ndarray    # 0 for empty bins

    def edges(self):
        return [(m / self.bin_count, (m + 1) / self.bin_count)
                for m in range(self.bin_count)]

    def to_csv(self) -> str:
        rows = [(float(lo), float(hi), int(self.counts[m]),
                 float(self.mean_confidence[m]), float(self.mean_accuracy[m]))
                for m, (lo, hi) in enumerate(self.edges())]
        return rows_to_csv(("bin_lo", "bin_hi", "count", "confidence", "accuracy"), rows)


def _bin_index(confidences: np.ndarray, bin_count: int) -> np.ndarray:
    # searchsorted against the exact float boundaries m/M keeps values that
    # sit on a boundary in the lower bin, immune to ceil(c*M) rounding slips
    boundaries = np.arange(1, bin_count + 1, dtype=np.float64) / bin_count
    idx = np.searchsorted(boundaries, confidences, side="left")
    return np.minimum(idx, bin_count - 1)


def reliability_bins(confidences: np.ndarray, correct: np.ndarray,
                     bin_count: int = DEFAULT_BIN_COUNT) -> ReliabilityBins:
    confidences = np.asarray(confidences, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if bin_count < 1:
        raise ParameterError(f"bin count must be at least 1, got {bin_count}")
    if confidences.shape != correct.shape or confidences.ndim != 1 or confidences.size == 0:
        raise ContractError("confidences and correctness must be equal-length non-empty vectors")
    if np.any(confidences < 0.0) or np.any(confidences > 1.0):
        raise ContractError("confidences must lie in [0, 1]")
    idx = _bin_index(confidences, bin_count)
    counts = np.bincount(idx, minlength=bin_count)
    conf_sum = np.bincount(idx, weights=confidences, minlength=bin_count)
    acc_sum = np.bincount(idx, weights=correct, minlength=bin_count)
    nonzero = np.maximum(counts, 1)
    return ReliabilityBins(bin_count, counts, conf_sum / nonzero, acc_sum / nonzero)


def ece(confidences: np.ndarray, correct: np.ndarray,
        bin_count: int = DEFAULT_BIN_COUNT):
    """Expected calibration error: sum_m |B_m|/n * |acc(B_m) - conf(B_m)|.

    Returns (value, ReliabilityBins); empty bins contribute nothing.
    """
    bins = reliability_bins(confidences, correct, bin_count)
    n = bins.counts.sum()
    gaps = np.abs(bins.mean_accuracy - bins.mean_confidence)
    return float(np.sum(bins.counts / n * gaps)), bins


def _check_prob_rows(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2:
        raise ContractError(f"{name} must be a 2-d array of probability rows")
    if np.any(p < 0.0):
        raise ContractError(f"{name} contains negative entries")
    drift = np.abs(p.sum(axis=1) - 1.0)
    if np.any(drift > 1e-6):
        raise ContractError(f"{name} rows deviate from 1 by up to {float(drift.max()):.3g}")
    return p


def jsd_pair(p: np.ndarray, q: np.ndarray) -> float:
    """Mean Jensen-Shannon divergence between row-aligned distributions.

    Natural log; zero entries contribute zero.  Symmetric under argument
    swap by construction (the two KL halves commute under float addition).
    """
    p = _check_prob_rows(p, "first distribution")
    q = _check_prob_rows(q, "second distribution")
    if p.shape != q.shape:
        raise ContractError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    mid = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_mid = np.log(mid)
        kl_p = np.where(p > 0.0, p * (np.log(p) - log_mid), 0.0).sum(axis=1)
        kl_q = np.where(q > 0.0, q * (np.log(q) - log_mid), 0.0).sum(axis=1)
    return float(np.mean(0.5 * kl_p + 0.5 * kl_q))


def disagreement(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    """Fraction of samples where the two argmax predictions differ."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    if labels_a.shape != labels_b.shape or labels_a.ndim != 1 or labels_a.size == 0:
        raise ContractError("disagreement needs equal-length non-empty label vectors")
    return float(np.mean(labels_a != labels_b))


@dataclass
class DiversityReport:
    """Pairwise JSD / disagreement over prediction sources ("members")."""

    member_count: int
    jsd_matrix: np.ndarray
    dis_matrix: np.ndarray
    mean_jsd: float
    max_jsd: float
    mean_dis: float
    max_dis: float

    def to_csv(self) -> str:
        rows = [(i, j, float(self.jsd_matrix[i, j]), float(self.dis_matrix[i, j]))
                for i in range(self.member_count)
                for j in range(i + 1, self.member_count)]
        return rows_to_csv(("member_i", "member_j", "jsd", "disagreement"), rows)

    def summary(self) -> dict:
        return {"members": self.member_count,
                "mean_jsd": self.mean_jsd, "max_jsd": self.max_jsd,
                "mean_disagreement": self.mean_dis, "max_disagreement": self.max_dis}


def diversity_matrix(member_probs: np.ndarray) -> DiversityReport:
    """Pairwise diversity over an (M, n, C) stack of member predictions.

    Averages run over the M*(M-1)/2 unordered pairs; matrices are exactly
    symmetric with a zero diagonal.
    """
    member_probs = np.asarray(member_probs, dtype=np.float64)
    if member_probs.ndim != 3 or member_probs.shape[0] < 2:
        raise ContractError(
            f"diversity needs an (M>=2, n, C) stack, got shape {member_probs.shape}")
    m = member_probs.shape[0]
    labels = member_probs.argmax(axis=2)
    jsd_mat = np.zeros((m, m))
    dis_mat = np.zeros((m, m))
    pair_jsd, pair_dis = [], []
    for i in range(m):
        for j in range(i + 1, m):
            d_jsd = jsd_pair(member_probs[i], member_probs[j])
            d_dis = disagreement(labels[i], labels[j])
            jsd_mat[i, j] = jsd_mat[j, i] = d_jsd
            dis_mat[i, j] = dis_mat[j, i] = d_dis
            pair_jsd.append(d_jsd)
            pair_dis.append(d_dis)
    return DiversityReport(m, jsd_mat, dis_mat,
                           float(np.mean(pair_jsd)), float(np.max(pair_jsd)),
                           float(np.mean(pair_dis)), float(np.max(pair_dis)))


def shift_sweep(values_by_severity: dict) -> list:
    """Five-number summaries of a metric across shift severities.

    Input maps severity (int) to a sequence of metric values (one per
    corruption kind, say).  Rows come back sorted by severity.
    """
    rows = []
    for severity in sorted(values_by_severity):
        vals = np.asarray(values_by_severity[severity], dtype=np.float64)
        if vals.size == 0:
            raise ContractError(f"severity {severity} has no values")
        q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
        rows.append({"severity": int(severity), "count": int(vals.size),
                     "min": float(vals.min()), "q1": float(q1), "median": float(med),
                     "q3": float(q3), "max": float(vals.max())})
    return rows


def sweep_to_csv(rows) -> str:
    header = ("severity", "count", "min", "q1", "median", "q3", "max")
    return rows_to_csv(header, [[r[k] for k in header] for r in rows])
