"""Compatibility scoring between a policy's training experience and a fresh
evaluation experience.

The structural scorer treats the concatenation tau_bar = [train ; test] as a
time series per state dimension and asks whether a change point sits at the
junction: gains come from RBF-kernel binary segmentation, the distance is
the maximal gain inside a window around the junction, normalized by series
length, and per-dimension distances aggregate by L2 norm. Low distance =
same regime = compatible. A correlation scorer and a KPI-floor scorer give
cheaper alternatives with the same "compatible iff distance <= threshold"
polarity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .policy import Experience

DEFAULT_MIN_SEG = 10
DEFAULT_WINDOW_FRACTION = 0.1

SCORER_KINDS = ("binseg", "pearson", "kpi_threshold")


# ---------------------------------------------------------------------------
# normalization and thresholds


def normalize_series(x, mode: str = "log-z") -> np.ndarray:
    """log1p then z-score ("log-z", needs x >= 0), or plain z-score ("z").

    The z-score uses the population std of the whole series, floored at 1e-8
    so constant series map to zeros instead of blowing up.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("series must be 1-D")
    if mode == "log-z":
        if x.size and np.min(x) < 0.0:
            raise ValueError("log-z normalization needs nonnegative values")
        y = np.log1p(x)
    elif mode == "z":
        y = x
    else:
        raise ValueError(f"unknown normalization mode: {mode!r}")
    if y.size and np.all(y == y[0]):
        return np.zeros_like(y)  # constants map to exact zeros
    return (y - np.mean(y)) / max(float(np.std(y)), 1e-8)


def round_to_1_sig(x: float) -> float:
    """Round to one significant figure (banker's rounding on the mantissa)."""
    if x == 0.0 or not math.isfinite(x):
        return float(x)
    return round(x, -int(math.floor(math.log10(abs(x)))))


@dataclass(frozen=True)
class ThresholdSet:
    default: float
    loose: float
    tight: float

    def pick(self, name: str) -> float:
        if name not in ("default", "loose", "tight"):
            raise ValueError(f"unknown threshold name: {name!r}")
        return getattr(self, name)


def calibrate_threshold(scores) -> ThresholdSet:
    """Median-based threshold with loose/tight one sample-std away.

    All three are rounded to one significant figure. Lower distance means
    more compatible, so loose = median + std admits more pairs.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise ValueError("need at least two scores to calibrate")
    med = float(np.median(scores))
    sd = float(np.std(scores, ddof=1))
    return ThresholdSet(default=round_to_1_sig(med),
                        loose=round_to_1_sig(med + sd),
                        tight=round_to_1_sig(med - sd))


# ---------------------------------------------------------------------------
# RBF-kernel segmentation


def median_heuristic_gamma(y: np.ndarray) -> float:
    """gamma = 1 / (2 * median^2) over pairwise distances (s < t pairs)."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        return 1.0  # no pairs; any bandwidth gives cost 0
    d = np.abs(y[:, None] - y[None, :])
    m = float(np.median(d[np.triu_indices(y.shape[0], 1)]))
    if m < 1e-12:
        return 1.0  # constant series: kernel saturates, gains vanish anyway
    return 1.0 / (2.0 * m * m)


def rbf_cost(y, gamma: float | None = None) -> float:
    """Segment cost L - (1/L) * sum_{s,t} exp(-gamma (y_s - y_t)^2).

    The double sum includes the diagonal. Low when the segment is
    homogeneous at the kernel's scale.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.size == 0:
        raise ValueError("segment must be a nonempty 1-D array")
    if gamma is None:
        gamma = median_heuristic_gamma(y)
    L = y.shape[0]
    diff = y[:, None] - y[None, :]
    k = np.exp(-gamma * diff * diff)
    return float(L - k.sum() / L)


def _kernel_prefix(y: np.ndarray, gamma: float) -> np.ndarray:
    diff = y[:, None] - y[None, :]
    k = np.exp(-gamma * diff * diff)
    T = y.shape[0]
    p = np.zeros((T + 1, T + 1))
    p[1:, 1:] = k.cumsum(axis=0).cumsum(axis=1)
    return p


def _block_cost(p: np.ndarray, a: int, b: int) -> float:
    L = b - a
    s = p[b, b] - p[a, b] - p[b, a] + p[a, a]
    return L - s / L


def _block_cost_vec(p: np.ndarray, a: int, ts: np.ndarray) -> np.ndarray:
    # cost of segments [a, t) for an array of ts
    L = ts - a
    s = p[ts, ts] - p[a, ts] - p[ts, a] + p[a, a]
    return L - s / L


def _block_cost_vec_right(p: np.ndarray, ts: np.ndarray, b: int) -> np.ndarray:
    L = b - ts
    s = p[b, b] - p[ts, b] - p[b, ts] + p[ts, ts]
    return L - s / L


def binseg_root_gains(y, min_seg: int = DEFAULT_MIN_SEG,
                      gamma: float | None = None) -> np.ndarray:
    """Single-level split gains G(t) = C(y) - C(y[:t]) - C(y[t:]) for all
    admissible t (both sides >= min_seg); inadmissible positions are 0."""
    y = np.asarray(y, dtype=np.float64)
    T = y.shape[0]
    if T < 2 * min_seg:
        raise ValueError("series shorter than 2 * min_seg")
    if gamma is None:
        gamma = median_heuristic_gamma(y)
    p = _kernel_prefix(y, gamma)
    gains = np.zeros(T)
    ts = np.arange(min_seg, T - min_seg + 1)
    whole = _block_cost(p, 0, T)
    gains[ts] = whole - _block_cost_vec(p, 0, ts) - _block_cost_vec_right(p, ts, T)
    return gains


def binseg_gains(y, min_seg: int = DEFAULT_MIN_SEG,
                 gamma: float | None = None) -> np.ndarray:
    """Recursive binary-segmentation gain field.

    Each segment writes its split gains over its admissible interior, then
    recurses left/right of its argmax; children overwrite the parent where
    they are admissible, so positions within min_seg of a chosen split keep
    the enclosing segment's gain. gamma is fixed once for the whole series
    (median heuristic when not given).
    """
    y = np.asarray(y, dtype=np.float64)
    T = y.shape[0]
    if T < 2 * min_seg:
        raise ValueError("series shorter than 2 * min_seg")
    if gamma is None:
        gamma = median_heuristic_gamma(y)
    p = _kernel_prefix(y, gamma)
    gains = np.zeros(T)
    stack = [(0, T)]
    while stack:
        a, b = stack.pop()
        if b - a < 2 * min_seg:
            continue
        ts = np.arange(a + min_seg, b - min_seg + 1)
        whole = _block_cost(p, a, b)
        g = whole - _block_cost_vec(p, a, ts) - _block_cost_vec_right(p, ts, b)
        gains[ts] = g
        t_star = int(ts[np.argmax(g)])
        stack.append((a, t_star))
        stack.append((t_star, b))
    return gains


def binseg_distance(train_series, test_series, *, min_seg: int = DEFAULT_MIN_SEG,
                    window_fraction: float = DEFAULT_WINDOW_FRACTION,
                    normalize: str = "log-z",
                    gamma: float | None = None) -> float:
    """Change-point evidence at the junction of [train ; test], in [0, inf).

    Concatenate, normalize jointly, run the gain recursion, then take the
    max gain inside the window junction +- window_fraction * total length
    (clipped to admissible split positions) and divide by total length.
    """
    a = np.asarray(train_series, dtype=np.float64)
    b = np.asarray(test_series, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both series must be nonempty")
    tau = np.concatenate([a, b])
    T = tau.shape[0]
    if T < 2 * min_seg:
        raise ValueError("combined series shorter than 2 * min_seg")
    norm = normalize_series(tau, mode=normalize)
    gains = binseg_gains(norm, min_seg=min_seg, gamma=gamma)
    t1 = a.shape[0]
    w = max(1, int(round(window_fraction * T)))
    lo = max(min_seg, t1 - w)
    hi = min(T - min_seg, t1 + w)
    if lo > hi:
        # junction hugs an edge: fall back to the nearest admissible split
        lo = hi = int(np.clip(t1, min_seg, T - min_seg))
    return float(np.max(gains[lo:hi + 1]) / T)


# ---------------------------------------------------------------------------
# correlation and KPI-floor scorers


def pearson_distance(train_series, test_series) -> float:
    """sqrt(1 - r^2) on raw series truncated to the common length.

    Zero-variance series correlate with nothing: r := 0, distance 1.
    """
    a = np.asarray(train_series, dtype=np.float64)
    b = np.asarray(test_series, dtype=np.float64)
    L = min(a.shape[0], b.shape[0])
    if L < 2:
        raise ValueError("need at least two aligned samples")
    a, b = a[:L], b[:L]
    sa, sb = np.std(a), np.std(b)
    if sa < 1e-12 or sb < 1e-12:
        r = 0.0
    else:
        r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
        r = float(np.clip(r, -1.0, 1.0))
    return math.sqrt(1.0 - r * r)


def kpi_threshold_distance(test_exp: Experience, theta: float,
                           n_cells: int) -> tuple[float, bool]:
    """Worst-case min-cell-throughput test: distance = -(min over steps of
    per-step G_min); compatible iff that worst case stays strictly above
    theta, i.e. distance < -theta."""
    states = np.asarray(test_exp.states, dtype=np.float64)
    if states.shape[1] != 3 * n_cells:
        raise ValueError("state dim does not match n_cells")
    thr = states[:, 2 * n_cells:]
    m = float(np.min(np.min(thr, axis=1)))
    distance = -m
    return distance, distance < -theta


def combine_dimensions(per_dim) -> float:
    """Aggregate per-dimension distances by L2 norm."""
    v = np.asarray(per_dim, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no per-dimension distances")
    return float(np.linalg.norm(v))


# ---------------------------------------------------------------------------
# scorer interface


@dataclass
class CompatReport:
    kind: str
    distance: float
    per_dim: np.ndarray | None = None
    train_index: int | None = None


@dataclass
class Scorer:
    """Pluggable train-vs-test experience scorer.

    kind "binseg" or "pearson": per-state-dimension distances aggregated by
    L2, minimized over the policy's training experiences. kind
    "kpi_threshold": looks only at the test experience (pair its distance
    with threshold = -theta).
    """

    kind: str = "binseg"
    min_seg: int = DEFAULT_MIN_SEG
    window_fraction: float = DEFAULT_WINDOW_FRACTION
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise ValueError(f"unknown scorer kind: {self.kind!r}")

    def score(self, train_exps: list[Experience], test_exp: Experience,
              n_cells: int) -> CompatReport:
        if self.kind == "kpi_threshold":
            # theta handled by the caller through the threshold; report the
            # raw worst-case statistic
            d, _ = kpi_threshold_distance(test_exp, 0.0, n_cells)
            return CompatReport(kind=self.kind, distance=d)
        if not train_exps:
            raise ValueError("structural scorers need at least one training experience")
        best = None
        for i, tr in enumerate(train_exps):
            per_dim = np.empty(test_exp.states.shape[1])
            for d in range(test_exp.states.shape[1]):
                if self.kind == "binseg":
                    per_dim[d] = binseg_distance(
                        tr.states[:, d], test_exp.states[:, d],
                        min_seg=self.min_seg,
                        window_fraction=self.window_fraction,
                        gamma=self.gamma)
                else:
                    per_dim[d] = pearson_distance(tr.states[:, d],
                                                  test_exp.states[:, d])
            dist = combine_dimensions(per_dim)
            if best is None or dist < best.distance:
                best = CompatReport(kind=self.kind, distance=dist,
                                    per_dim=per_dim.copy(), train_index=i)
        return best
