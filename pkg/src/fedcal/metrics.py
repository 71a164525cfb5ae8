"""Reliability metrics: federated ECE, NLL, accuracy, predictive entropy.

The federated expected calibration error generalizes ECE to per-client
test sets: every client bins its own predictions into the same S
equal-width confidence bins, and each client-bin contributes its
|confidence - accuracy| gap weighted by its share of the total sample
count. Keeping the absolute value inside the client sum means opposite
miscalibrations on different clients do not cancel, which is exactly
what distinguishes this from pooling all predictions first.

Bins are half-open intervals ((s-1)/S, s/S]; an argmax confidence is
always >= 1/K > 0, so the closed-at-zero corner never arises in
practice, but a confidence of exactly 0 would land in the first bin.

Out-of-distribution sets carry the sentinel label -1. Entropy metrics
accept them (labels unused); accuracy, NLL, and all ECE variants
reject them.
"""

from dataclasses import dataclass, field

import numpy as np

OOD_LABEL = -1
PROB_ATOL = 1e-9
LOG_CLAMP = 1e-12
DEFAULT_BINS = 15
ENTROPY_BINS = 30


@dataclass
class PredictionSet:
    """Per-sample class probabilities with ground-truth labels.

    Labels are class indices in [0, K), or the OOD sentinel -1 for
    samples with no in-domain class.
    """

    probs: np.ndarray
    labels: np.ndarray
    client_id: int | None = None
    model_id: str | None = None

    def __post_init__(self):
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2 or self.probs.shape[0] < 1 or self.probs.shape[1] < 2:
            raise ValueError(f"probs must be (n >= 1, K >= 2), got shape {self.probs.shape}")
        if self.labels.shape != (self.probs.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.probs.shape[0]} rows"
            )
        if not np.isfinite(self.probs).all():
            raise ValueError("probs contain non-finite entries")
        if (self.probs < 0).any():
            raise ValueError("probs contain negative entries")
        rows = self.probs.sum(axis=1)
        worst = np.abs(rows - 1.0).max()
        if worst > PROB_ATOL:
            raise ValueError(f"probability rows must sum to 1, worst deviation {worst:g}")
        k = self.probs.shape[1]
        if self.labels.min() < OOD_LABEL or self.labels.max() >= k:
            raise ValueError(
                f"labels must lie in [0, {k}) or be the sentinel {OOD_LABEL}, got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self):
        return self.probs.shape[0]

    @property
    def num_classes(self):
        return self.probs.shape[1]

    @property
    def has_sentinels(self):
        return bool((self.labels == OOD_LABEL).any())


@dataclass
class BinStat:
    """Aggregates for one confidence bin ((lower, upper] interval)."""

    bin_index: int
    lower: float
    upper: float
    count: int
    conf_sum: float
    correct_sum: float
    client_id: int | None = None

    @property
    def mean_confidence(self):
        return self.conf_sum / self.count if self.count else 0.0

    @property
    def accuracy(self):
        return self.correct_sum / self.count if self.count else 0.0

    @property
    def gap(self):
        return abs(self.mean_confidence - self.accuracy) if self.count else 0.0


@dataclass
class CalibrationReport:
    """Everything the reliability evaluation emits for one model.

    ``bin_table`` rows are per-client BinStats (the data behind a
    reliability diagram); the entropy histogram uses fixed edges over
    [0, ln K] so reports from different models overlay directly.
    """

    f_ece: float
    per_client_ece: list
    nll: float
    accuracy: float
    num_bins: int
    bin_table: list
    entropy_mean: float
    entropy_counts: np.ndarray
    entropy_edges: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.f_ece <= 1.0:
            raise ValueError(f"F-ECE must lie in [0, 1], got {self.f_ece}")
        if self.nll < 0.0:
            raise ValueError(f"NLL must be nonnegative, got {self.nll}")


def _require_labels(pset, what):
    if pset.has_sentinels:
        raise ValueError(f"{what} needs in-domain labels; prediction set contains "
                         f"OOD sentinel labels ({OOD_LABEL})")


def confidence_and_prediction(probs):
    """Top-class probability and its index; ties resolve to the lowest index."""
    probs = np.asarray(probs, dtype=np.float64)
    pred = probs.argmax(axis=1)
    conf = probs[np.arange(probs.shape[0]), pred]
    return conf, pred


def bin_index(conf, num_bins):
    """Map confidences to half-open equal-width bins, 0-indexed.

    Bin s (0-based) covers (s/S, (s+1)/S], except bin 0 also includes 0.
    """
    conf = np.asarray(conf, dtype=np.float64)
    edges = np.arange(1, num_bins) / num_bins
    return np.digitize(conf, edges, right=True)


def _client_bin_stats(pset, num_bins):
    """Per-bin (count, conf_sum, correct_sum) arrays for one prediction set."""
    conf, pred = confidence_and_prediction(pset.probs)
    correct = (pred == pset.labels).astype(np.float64)
    idx = bin_index(conf, num_bins)
    counts = np.bincount(idx, minlength=num_bins).astype(np.float64)
    conf_sums = np.bincount(idx, weights=conf, minlength=num_bins)
    correct_sums = np.bincount(idx, weights=correct, minlength=num_bins)
    return counts, conf_sums, correct_sums


def f_ece(prediction_sets, num_bins=DEFAULT_BINS):
    """Federated expected calibration error over per-client prediction sets.

    Every client-bin contributes (its count / total count) times the
    absolute gap between its mean confidence and its accuracy. With a
    single prediction set this is the ordinary ECE. The per-bin detail
    behind the value is available from ``bin_table``.
    """
    sets = list(prediction_sets)
    if not sets:
        raise ValueError("need at least one prediction set")
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    total = sum(len(p) for p in sets)
    value = 0.0
    for pset in sets:
        _require_labels(pset, "f_ece")
        counts, conf_sums, correct_sums = _client_bin_stats(pset, num_bins)
        occupied = counts > 0
        gaps = np.abs(conf_sums[occupied] / counts[occupied]
                      - correct_sums[occupied] / counts[occupied])
        value += float((counts[occupied] / total) @ gaps)
    return value


def ece_single(pset, num_bins=DEFAULT_BINS):
    """Ordinary expected calibration error of one prediction set."""
    return f_ece([pset], num_bins)


def bin_table(prediction_sets, num_bins=DEFAULT_BINS):
    """Per-client, per-bin BinStat rows (the reliability-diagram data)."""
    rows = []
    for pset in prediction_sets:
        _require_labels(pset, "bin_table")
        counts, conf_sums, correct_sums = _client_bin_stats(pset, num_bins)
        for s in range(num_bins):
            rows.append(BinStat(s, s / num_bins, (s + 1) / num_bins, int(counts[s]),
                                float(conf_sums[s]), float(correct_sums[s]),
                                client_id=pset.client_id))
    return rows


def reliability_bins(prediction_sets, num_bins=DEFAULT_BINS):
    """Pooled per-bin stats across sets, for a single merged diagram.

    Note: pooling merges clients before taking gaps, so summing these
    bins' weighted gaps gives the pooled ECE, not the federated one.
    """
    counts = np.zeros(num_bins)
    conf_sums = np.zeros(num_bins)
    correct_sums = np.zeros(num_bins)
    for pset in prediction_sets:
        _require_labels(pset, "reliability_bins")
        c, cs, rs = _client_bin_stats(pset, num_bins)
        counts += c
        conf_sums += cs
        correct_sums += rs
    return [
        BinStat(s, s / num_bins, (s + 1) / num_bins, int(counts[s]),
                float(conf_sums[s]), float(correct_sums[s]))
        for s in range(num_bins)
    ]


def accuracy(pset):
    """Fraction of samples whose argmax class matches the label."""
    _require_labels(pset, "accuracy")
    _, pred = confidence_and_prediction(pset.probs)
    return float(np.mean(pred == pset.labels))


def nll(pset):
    """Mean negative log-likelihood; probabilities clamped at 1e-12 before log."""
    _require_labels(pset, "nll")
    p_true = pset.probs[np.arange(len(pset)), pset.labels]
    return float(-np.mean(np.log(np.maximum(p_true, LOG_CLAMP))))


def predictive_entropy(probs):
    """Per-sample entropy in nats, clipped into [0, ln K].

    Zero entries contribute 0 (the p log p limit); the clip removes
    negative-zero artifacts and roundoff just above ln K.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probs must be 2-D, got shape {probs.shape}")
    safe = np.maximum(probs, LOG_CLAMP)
    h = -(probs * np.log(safe)).sum(axis=1)
    return np.clip(h, 0.0, np.log(probs.shape[1]))


def entropy_histogram(entropies, num_classes, num_bins=ENTROPY_BINS):
    """Histogram of entropies over [0, ln K]: (counts, bin edges)."""
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    hi = np.log(num_classes)
    counts, edges = np.histogram(np.asarray(entropies, dtype=np.float64),
                                 bins=num_bins, range=(0.0, hi))
    return counts, edges


def report_to_dict(report):
    """JSON-safe form of a CalibrationReport (documented key set)."""
    return {
        "f_ece": report.f_ece,
        "per_client_ece": list(report.per_client_ece),
        "nll": report.nll,
        "accuracy": report.accuracy,
        "num_bins": report.num_bins,
        "entropy_mean": report.entropy_mean,
        "entropy_counts": [int(c) for c in report.entropy_counts],
        "entropy_edges": [float(e) for e in report.entropy_edges],
        "bin_table": [
            {
                "client_id": b.client_id,
                "bin": b.bin_index,
                "lower": b.lower,
                "upper": b.upper,
                "count": b.count,
                "confidence": b.mean_confidence,
                "accuracy": b.accuracy,
            }
            for b in report.bin_table
        ],
    }


def bin_csv_rows(report):
    """Reliability-diagram rows: (client_id, bin, count, conf, acc)."""
    return [(b.client_id, b.bin_index, b.count, b.mean_confidence, b.accuracy)
            for b in report.bin_table]


def entropy_csv_rows(report):
    """Entropy-histogram rows: (bin_low, bin_high, count)."""
    edges = report.entropy_edges
    return [(float(edges[i]), float(edges[i + 1]), int(c))
            for i, c in enumerate(report.entropy_counts)]


def calibration_report(prediction_sets, num_bins=DEFAULT_BINS,
                       entropy_bins=ENTROPY_BINS):
    """Full reliability evaluation of per-client in-domain predictions."""
    sets = list(prediction_sets)
    if not sets:
        raise ValueError("need at least one prediction set")
    for pset in sets:
        _require_labels(pset, "calibration_report")
    all_probs = np.vstack([p.probs for p in sets])
    total = sum(len(p) for p in sets)
    ent = predictive_entropy(all_probs)
    counts, edges = entropy_histogram(ent, sets[0].num_classes, entropy_bins)
    pooled_correct = sum(accuracy(p) * len(p) for p in sets) / total
    pooled_nll = sum(nll(p) * len(p) for p in sets) / total
    return CalibrationReport(
        f_ece=f_ece(sets, num_bins),
        per_client_ece=[ece_single(p, num_bins) for p in sets],
        nll=pooled_nll,
        accuracy=pooled_correct,
        num_bins=num_bins,
        bin_table=bin_table(sets, num_bins),
        entropy_mean=float(ent.mean()),
        entropy_counts=counts,
        entropy_edges=edges,
    )
