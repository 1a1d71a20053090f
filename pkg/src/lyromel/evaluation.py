"""Melody evaluation: MMD, in-song metrics, transitions, baseline, conditioning."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .data import AttributeHistograms, NoteTriplet, SEQ_LEN
from .tuning import constrain_to_scale, detect_scale

log = logging.getLogger(__name__)

METRIC_NAMES = (
    "midi_span",
    "three_gram_reps",
    "two_gram_reps",
    "unique_midi",
    "notes_without_rest",
    "avg_rest",
    "song_length",
)
BASELINE_MIDI_RANGE = (60, 80)


# ----------------------------------------------------------------------------
# MMD


def _as_samples(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    elif arr.ndim > 2:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a set of vectors")
    return arr


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # pairwise differences, so coincident points give exactly 0
    return cdist(a, b, "sqeuclidean")


def median_bandwidth(x, y) -> float:
    """Kernel width with mean_cross_distance / (2 sigma^2) = 1.

    The mean is over all (x_i, y_j) pairs of Euclidean distances. If every
    pair coincides the width falls back to 1.
    """
    x = _as_samples(x, "X")
    y = _as_samples(y, "Y")
    if len(x) + len(y) < 2 or len(x) == 0 or len(y) == 0:
        raise ValueError("need points in both sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    mean_dist = float(np.sqrt(_sq_dists(x, y)).mean())
    if mean_dist == 0.0:
        log.warning("all cross-set distances are zero; using bandwidth 1")
        return 1.0
    return float(np.sqrt(mean_dist / 2.0))


def mmd2_unbiased(x, y, sigma: float | None = None) -> float:
    """Unbiased MMD^2 estimate with a Gaussian kernel.

    ``sigma`` defaults to :func:`median_bandwidth`. Inputs are (n, d) arrays;
    higher-rank arrays are flattened per sample.
    """
    x = _as_samples(x, "X")
    y = _as_samples(y, "Y")
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValueError(f"need at least 2 samples per set, got {m} and {n}")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if sigma is None:
        sigma = median_bandwidth(x, y)
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * _sq_dists(x, x))
    kyy = np.exp(-gamma * _sq_dists(y, y))
    kxy = np.exp(-gamma * _sq_dists(x, y))
    # diagonals are exactly 1
    sxx = (kxx.sum() - m) / (m * (m - 1))
    syy = (kyy.sum() - n) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


# ----------------------------------------------------------------------------
# in-song metrics


@dataclass
class MetricsRow:
    midi_span: float
    three_gram_reps: float
    two_gram_reps: float
    unique_midi: float
    notes_without_rest: float
    avg_rest: float
    song_length: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def ngram_repetitions(values: Sequence, n: int) -> int:
    """Number of n-grams minus number of distinct n-grams."""
    grams = [tuple(values[i:i + n]) for i in range(len(values) - n + 1)]
    return len(grams) - len(set(grams))


def sequence_metrics(notes: Sequence) -> dict[str, float]:
    midi = [int(n[0]) for n in notes]
    dur = [float(n[1]) for n in notes]
    rest = [float(n[2]) for n in notes]
    return {
        "midi_span": float(max(midi) - min(midi)),
        "three_gram_reps": float(ngram_repetitions(midi, 3)),
        "two_gram_reps": float(ngram_repetitions(midi, 2)),
        "unique_midi": float(len(set(midi))),
        "notes_without_rest": float(sum(r == 0.0 for r in rest)),
        "avg_rest": float(np.mean(rest)),
        "song_length": float(sum(dur) + sum(rest)),
    }


def music_metrics(sequences: Sequence[Sequence]) -> MetricsRow:
    """Per-sequence metrics averaged over the set."""
    if len(sequences) == 0:
        raise ValueError("no sequences to evaluate")
    rows = [sequence_metrics(s) for s in sequences]
    return MetricsRow(**{k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES})


def transition_distribution(sequences: Sequence[Sequence]) -> dict[int, float]:
    """Normalised histogram of consecutive MIDI-number differences."""
    counts: Counter = Counter()
    for seq in sequences:
        midi = [int(n[0]) for n in seq]
        counts.update(b - a for a, b in zip(midi, midi[1:]))
    total = sum(counts.values())
    if total == 0:
        return {}
    return {k: v / total for k, v in sorted(counts.items())}


# ----------------------------------------------------------------------------
# baseline


def sample_baseline(hist: AttributeHistograms, n: int, seed: int,
                    length: int = SEQ_LEN) -> list[list[NoteTriplet]]:
    """Independent per-note draws from the attribute histograms.

    MIDI numbers are clamped to 60..80, then each sequence goes through the
    same scale constraint as generated melodies.
    """
    rng = np.random.default_rng(seed)
    if n == 0:
        return []
    lo, hi = BASELINE_MIDI_RANGE

    def draw(h: dict, size):
        values = np.array(list(h.keys()), dtype=np.float64)
        probs = np.array(list(h.values()), dtype=np.float64)
        return rng.choice(values, size=size, p=probs / probs.sum())

    midi = np.clip(draw(hist.midi, (n, length)), lo, hi).astype(int)
    dur = draw(hist.duration, (n, length))
    rest = draw(hist.rest, (n, length))
    out = []
    for i in range(n):
        seq = [NoteTriplet(int(midi[i, j]), float(dur[i, j]), float(rest[i, j])) for j in range(length)]
        out.append(constrain_to_scale(seq, detect_scale(seq)))
    return out


def histogram_expectations(hist: AttributeHistograms, length: int = SEQ_LEN) -> dict[str, float]:
    """Expected temporal metrics for sequences drawn note-wise from ``hist``."""
    e_dur = sum(k * p for k, p in hist.duration.items())
    e_rest = sum(k * p for k, p in hist.rest.items())
    return {
        "notes_without_rest": length * hist.rest.get(0.0, 0.0),
        "avg_rest": e_rest,
        "song_length": length * (e_dur + e_rest),
    }


# ----------------------------------------------------------------------------
# lyrics-conditioning experiment


def frobenius_distance(d: np.ndarray, g: np.ndarray) -> float:
    n, m = d.shape
    return float(np.linalg.norm(d - g) / (n * m))


def conditioning_distance(d, g, samples: int = 10_000, seed: int = 0) -> dict:
    """Compare ||D - G||_F / NM against shuffled pairings of D.

    ``rs`` permutes songs (rows), ``rn`` permutes note positions (one column
    permutation shared by all rows), ``rns`` does both. Returns the exact
    distance and, for each shuffle kind, the sampled distances.
    """
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if d.ndim != 2 or d.shape != g.shape:
        raise ValueError(f"D {d.shape} and G {g.shape} must be equal-shape matrices")
    n, m = d.shape
    scale = 1.0 / (n * m)
    rng = np.random.default_rng(seed)
    row_perms = np.argsort(rng.random((samples, n)), axis=1)
    col_perms = np.argsort(rng.random((samples, m)), axis=1)
    row_perms2 = np.argsort(rng.random((samples, n)), axis=1)
    rs = np.empty(samples)
    rn = np.empty(samples)
    rns = np.empty(samples)
    for s in range(samples):
        rs[s] = np.linalg.norm(d[row_perms[s]] - g) * scale
        d_rn = d[:, col_perms[s]]
        rn[s] = np.linalg.norm(d_rn - g) * scale
        rns[s] = np.linalg.norm(d_rn[row_perms2[s]] - g) * scale
    return {"d": frobenius_distance(d, g), "rs": rs, "rn": rn, "rns": rns}


def summarize(values: np.ndarray) -> dict[str, float]:
    q = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "mean": float(np.mean(values)),
        "min": float(q[0]),
        "q1": float(q[1]),
        "median": float(q[2]),
        "q3": float(q[3]),
        "max": float(q[4]),
    }
