"""Fixed-length state vectors for the pipeline MDP and their discretized keys."""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

from .dataset import Table, class_labels, iqr_outlier_fraction, skewness
from .operators import TYPES, operator_steps, type_of

STATE_DIM = 22
MAX_CORR_COLUMNS = 20
CORR_SAMPLE_SEED = 0

# layout
I_LOG_ROWS, I_LOG_COLS, I_MISSING, I_CATEGORICAL = 0, 1, 2, 3
I_SKEW, I_OUTLIERS, I_CORR = 4, 5, 6
I_CLASSES, I_IMBALANCE, I_STEP = 7, 8, 9
I_HIST = 10  # 6 slots, one per entry of operators.TYPES
N_RESERVED = 6

FEATURE_NAMES = (
    "log1p_rows", "log1p_cols", "missing_fraction", "categorical_fraction",
    "mean_abs_skew", "mean_outlier_fraction", "mean_abs_corr",
    "n_classes", "imbalance_ratio", "step_fraction",
    *[f"hist_{t.value}" for t in TYPES],
    *[f"reserved_{k}" for k in range(N_RESERVED)],
)

# quantization ranges (lo, hi) for the continuous entries, 8 equal-width bins each
N_BINS = 8
QUANT_RANGES = {
    I_LOG_ROWS: (0.0, 14.0),
    I_LOG_COLS: (0.0, 7.0),
    I_MISSING: (0.0, 1.0),
    I_CATEGORICAL: (0.0, 1.0),
    I_SKEW: (0.0, 4.0),
    I_OUTLIERS: (0.0, 0.4),
    I_CORR: (0.0, 1.0),
    I_IMBALANCE: (1.0, 9.0),
}


def _mean_abs_corr(cols) -> float:
    if len(cols) < 2:
        return 0.0
    cols = sorted(cols, key=lambda c: c.name)
    if len(cols) > MAX_CORR_COLUMNS:
        rng = np.random.default_rng(CORR_SAMPLE_SEED)
        pick = np.sort(rng.choice(len(cols), MAX_CORR_COLUMNS, replace=False))
        cols = [cols[i] for i in pick]
    vals = []
    for i in range(len(cols)):
        for j in range(i + 1, len(cols)):
            ok = ~(cols[i].missing | cols[j].missing)
            if ok.sum() < 2:
                vals.append(0.0)
                continue
            x = cols[i].values[ok].astype(np.float64)
            y = cols[j].values[ok].astype(np.float64)
            x = x - x.mean()
            y = y - y.mean()
            den = np.sqrt(np.dot(x, x) * np.dot(y, y))
            vals.append(abs(float(np.dot(x, y) / den)) if den > 1e-300 else 0.0)
    r = float(np.mean(vals))
    return min(r, 1.0) if np.isfinite(r) else 0.0


def type_histogram(partial: Sequence[int]) -> np.ndarray:
    h = np.zeros(len(TYPES))
    for a in partial:
        h[TYPES.index(type_of(a))] += 1
    return h


def extract_state(t: Table, partial: Sequence[int] = (), T: int = 8) -> np.ndarray:
    """Meta-feature vector of a (partially transformed) table."""
    feats = t.features
    n_rows = t.n_rows
    n_cols = len(feats)
    cells = n_rows * n_cols
    missing = sum(int(c.missing.sum()) for c in feats) / cells if cells else 0.0
    num = [c for c in feats if c.is_numeric]
    cat_frac = (n_cols - len(num)) / n_cols if n_cols else 0.0

    skews, outl = [], []
    for c in num:
        obs = c.observed().astype(np.float64)
        obs = obs[np.isfinite(obs)]
        skews.append(abs(skewness(obs)))
        outl.append(iqr_outlier_fraction(obs))

    labels = class_labels(t)
    _, counts = np.unique(labels, return_counts=True)

    s = np.zeros(STATE_DIM)
    s[I_LOG_ROWS] = np.log1p(n_rows)
    s[I_LOG_COLS] = np.log1p(n_cols)
    s[I_MISSING] = missing
    s[I_CATEGORICAL] = cat_frac
    s[I_SKEW] = float(np.mean(skews)) if skews else 0.0
    s[I_OUTLIERS] = float(np.mean(outl)) if outl else 0.0
    s[I_CORR] = _mean_abs_corr(num)
    s[I_CLASSES] = len(counts)
    s[I_IMBALANCE] = counts.max() / counts.min() if len(counts) else 1.0
    # histogram counts END only if it is present in ``partial``
    steps = [int(a) for a in partial]
    s[I_STEP] = len(operator_steps(steps)) / T if T else 0.0
    s[I_HIST:I_HIST + len(TYPES)] = type_histogram(steps)
    return np.nan_to_num(s, nan=0.0, posinf=1e6, neginf=-1e6)


def quantize(s: np.ndarray) -> np.ndarray:
    """Integer codes: continuous entries binned, discrete entries kept."""
    s = np.asarray(s, dtype=np.float64)
    codes = np.rint(s).astype(np.int64)
    for i, (lo, hi) in QUANT_RANGES.items():
        b = int(np.floor((s[i] - lo) / (hi - lo) * N_BINS))
        codes[i] = min(max(b, 0), N_BINS - 1)
    codes[I_STEP] = int(np.rint(s[I_STEP] * 1e6))  # step fraction is exact k/T
    return codes


def state_key(s: np.ndarray) -> int:
    digest = hashlib.blake2b(quantize(s).tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
