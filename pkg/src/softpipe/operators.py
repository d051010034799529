"""The 24-operator data-preparation library plus the END pseudo-action.

Every operator follows the same contract: ``fit(spec, table)`` learns parameters
from the given rows and returns a :class:`FittedOperator`; ``transform`` applies
them to any table with the same schema. Operators that have nothing to act on
(an imputer on a table without missing cells, an encoder without categorical
columns, ...) fit to the identity instead of failing.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.spatial.distance import pdist, cdist

from .dataset import Column, Table
from .linalg import fix_signs, power_truncated_svd, running_covariance

MAX_FEATURES = 200
CLAMP = 1e12
QUANTILE_KNOTS = 1000
N_BINS = 5
MAX_COMPONENTS = 8
IPCA_BATCH = 256
KPCA_MAX_ROWS = 1000
N_TREES = 10
TREE_DEPTH = 3


class OperatorType(str, enum.Enum):
    IMPUTER = "Imputer"
    ENCODER = "Encoder"
    FEATURE_PREPROCESSING = "FeaturePreprocessing"
    FEATURE_ENGINEERING = "FeatureEngineering"
    SELECTION = "Selection"
    TERMINAL = "Terminal"


# order used for type histograms and type distributions
TYPES: tuple[OperatorType, ...] = tuple(OperatorType)


@dataclass(frozen=True)
class OperatorSpec:
    id: int
    name: str
    type: OperatorType


END = 0

_T = OperatorType
_SPECS = (
    OperatorSpec(0, "END", _T.TERMINAL),
    OperatorSpec(1, "ImputerMean", _T.IMPUTER),
    OperatorSpec(2, "ImputerMedian", _T.IMPUTER),
    OperatorSpec(3, "ImputerMostFrequent", _T.IMPUTER),
    OperatorSpec(4, "LabelEncoder", _T.ENCODER),
    OperatorSpec(5, "OneHotEncoder", _T.ENCODER),
    OperatorSpec(6, "MinMaxScaler", _T.FEATURE_PREPROCESSING),
    OperatorSpec(7, "MaxAbsScaler", _T.FEATURE_PREPROCESSING),
    OperatorSpec(8, "RobustScaler", _T.FEATURE_PREPROCESSING),
    OperatorSpec(9, "StandardScaler", _T.FEATURE_PREPROCESSING),
    OperatorSpec(10, "QuantileTransformer", _T.FEATURE_PREPROCESSING),
    OperatorSpec(11, "LogTransformer", _T.FEATURE_PREPROCESSING),
    OperatorSpec(12, "PowerTransformer", _T.FEATURE_PREPROCESSING),
    OperatorSpec(13, "Normalizer", _T.FEATURE_PREPROCESSING),
    OperatorSpec(14, "KBinsDiscretizer", _T.FEATURE_PREPROCESSING),
    OperatorSpec(15, "PolynomialFeatures", _T.FEATURE_ENGINEERING),
    OperatorSpec(16, "InteractionFeatures", _T.FEATURE_ENGINEERING),
    OperatorSpec(17, "PCA_AUTO", _T.FEATURE_ENGINEERING),
    OperatorSpec(18, "PCA_LAPACK", _T.FEATURE_ENGINEERING),
    OperatorSpec(19, "PCA_ARPACK", _T.FEATURE_ENGINEERING),
    OperatorSpec(20, "IncrementalPCA", _T.FEATURE_ENGINEERING),
    OperatorSpec(21, "KernelPCA", _T.FEATURE_ENGINEERING),
    OperatorSpec(22, "TruncatedSVD", _T.FEATURE_ENGINEERING),
    OperatorSpec(23, "RandomTreesEmbedding", _T.FEATURE_ENGINEERING),
    OperatorSpec(24, "VarianceThreshold", _T.SELECTION),
)
_BY_ID = {s.id: s for s in _SPECS}
_BY_NAME = {s.name: s for s in _SPECS}

N_ACTIONS = len(_SPECS)
ACTIONS: tuple[int, ...] = tuple(s.id for s in _SPECS)


class SchemaError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, step: int, op_id: int, cause: Exception):
        super().__init__(f"pipeline step {step} (operator {op_id}) failed: {cause}")
        self.step = step
        self.op_id = op_id
        self.cause = cause


def registry() -> list[OperatorSpec]:
    return list(_SPECS)


def spec(op: int | str) -> OperatorSpec:
    try:
        return _BY_NAME[op] if isinstance(op, str) else _BY_ID[int(op)]
    except KeyError:
        raise KeyError(f"unknown operator {op!r}") from None


def type_of(op_id: int) -> OperatorType:
    return spec(op_id).type


def actions_of_type(t: OperatorType, actions: Sequence[int] = ACTIONS) -> list[int]:
    return [a for a in actions if _BY_ID[a].type == t]


@dataclass(frozen=True)
class FittedOperator:
    spec: OperatorSpec
    params: Any  # None means identity
    schema: tuple

    @property
    def is_identity(self) -> bool:
        return self.params is None


# ---------------------------------------------------------------- helpers


def _numeric_features(t: Table) -> list[Column]:
    return [c for c in t.features if c.is_numeric]


def _categorical_features(t: Table) -> list[Column]:
    return [c for c in t.features if not c.is_numeric]


def _matrix(cols: Sequence[Column]) -> np.ndarray:
    if not cols:
        return np.zeros((0, 0))
    return np.column_stack([np.asarray(c.values, dtype=np.float64) for c in cols])


def _filled_matrix(cols: Sequence[Column], fill: np.ndarray) -> np.ndarray:
    X = _matrix(cols)
    return np.clip(np.where(np.isnan(X), fill[None, :], X), -CLAMP, CLAMP)


def _column_means(cols: Sequence[Column]) -> np.ndarray:
    out = []
    for c in cols:
        obs = c.observed().astype(np.float64)
        obs = obs[np.isfinite(obs)]
        out.append(float(obs.mean()) if len(obs) else 0.0)
    return np.array(out)


def _unique_names(names: Sequence[str], taken: set[str]) -> list[str]:
    out = []
    seen = set(taken)
    for n in names:
        cand, k = n, 1
        while cand in seen:
            cand = f"{n}#{k}"
            k += 1
        seen.add(cand)
        out.append(cand)
    return out


def _sanitize(X: np.ndarray, missing: np.ndarray | None = None) -> np.ndarray:
    """Clamp non-finite outputs; columns that had any are re-standardized."""
    X = np.array(X, dtype=np.float64, copy=True)
    if missing is None:
        missing = np.zeros(X.shape, dtype=bool)
    bad = ~np.isfinite(X) & ~missing
    if bad.any():
        for j in np.flatnonzero(bad.any(axis=0)):
            col = X[:, j]
            b = bad[:, j]
            col[b & np.isnan(col)] = 0.0
            col[b] = np.clip(col[b], -CLAMP, CLAMP)
            ok = ~missing[:, j]
            v = col[ok]
            sd = v.std()
            col[ok] = (v - v.mean()) / (sd if sd > 0 else 1.0)
    ok = ~missing
    X[ok] = np.clip(X[ok], -CLAMP, CLAMP)
    X[missing] = np.nan
    return X


def _replace_numeric(t: Table, cols: Sequence[Column], X: np.ndarray) -> Table:
    """Write new values into the given numeric columns in place of the old ones."""
    missing = np.column_stack([c.missing for c in cols])
    X = _sanitize(X, missing)
    new = {c.name: Column.numeric(c.name, X[:, j], missing[:, j]) for j, c in enumerate(cols)}
    return t.with_features([new.get(c.name, c) for c in t.features])


def _swap_numeric_block(t: Table, names: Sequence[str], X: np.ndarray) -> Table:
    """Replace all numeric features by a new dense block, keeping categoricals."""
    cats = _categorical_features(t)
    taken = {c.name for c in cats} | {t.target}
    names = _unique_names(names, taken)
    X = _sanitize(X)
    block = [Column.numeric(n, X[:, j]) for j, n in enumerate(names)]
    return t.with_features(cats + block)


def _cap_by_variance(X: np.ndarray, limit: int = MAX_FEATURES) -> np.ndarray | None:
    """Indices of the ``limit`` highest-variance columns (None when under the cap)."""
    if X.shape[1] <= limit:
        return None
    with np.errstate(all="ignore"):
        var = np.nan_to_num(np.var(X, axis=0), nan=0.0, posinf=np.inf)
    order = np.argsort(-var, kind="stable")[:limit]
    return np.sort(order)


# ---------------------------------------------------------------- imputers


def _fit_impute(t: Table, how: str):
    cols = t.features if how == "most_frequent" else _numeric_features(t)
    if not any(c.missing.any() for c in cols):
        return None
    fills = {}
    for c in cols:
        obs = c.observed()
        if c.is_numeric:
            obs = obs.astype(np.float64)
            if len(obs) == 0:
                fills[c.name] = 0.0
            elif how == "mean":
                fills[c.name] = float(obs.mean())
            elif how == "median":
                fills[c.name] = float(np.median(obs))
            else:
                vals, counts = np.unique(obs, return_counts=True)
                fills[c.name] = float(vals[np.argmax(counts)])
        elif len(obs):
            vals, counts = np.unique(obs.astype(str), return_counts=True)
            fills[c.name] = str(vals[np.argmax(counts)])
    return {"fills": fills}


def _transform_impute(p, t: Table) -> Table:
    out = []
    for c in t.features:
        if c.name in p["fills"] and c.missing.any():
            f = p["fills"][c.name]
            if c.is_numeric:
                out.append(Column.numeric(c.name, np.where(c.missing, f, c.values)))
            else:
                out.append(Column.categorical(c.name, np.where(c.missing, f, c.values)))
        else:
            out.append(c)
    return t.with_features(out)


# ---------------------------------------------------------------- encoders


def _levels(c: Column) -> list[str]:
    return sorted(set(c.observed().tolist()))


def _fit_label(t: Table):
    cats = _categorical_features(t)
    if not cats:
        return None
    return {"levels": {c.name: _levels(c) for c in cats}}


def _transform_label(p, t: Table) -> Table:
    out = []
    for c in t.features:
        lv = p["levels"].get(c.name)
        if lv is None:
            out.append(c)
            continue
        index = {v: i for i, v in enumerate(lv)}
        codes = np.array([float(index.get(v, -1)) for v in c.values])
        out.append(Column.numeric(c.name, codes, c.missing))
    return t.with_features(out)


def _fit_onehot(t: Table):
    cats = _categorical_features(t)
    if not cats:
        return None
    levels = {c.name: _levels(c) for c in cats}
    pairs = [(n, v) for n, lv in levels.items() for v in lv]
    keep = None
    if len(pairs) > MAX_FEATURES:
        X = _onehot_block(t, pairs)
        keep = _cap_by_variance(X).tolist()
    return {"levels": levels, "pairs": pairs, "keep": keep}


def _onehot_block(t: Table, pairs) -> np.ndarray:
    cache = {}
    cols = []
    for name, level in pairs:
        if name not in cache:
            c = t.column(name)
            cache[name] = (np.asarray(c.values, dtype=object), c.missing)
        vals, miss = cache[name]
        cols.append(((vals == level) & ~miss).astype(np.float64))
    return np.column_stack(cols) if cols else np.zeros((t.n_rows, 0))


def _transform_onehot(p, t: Table) -> Table:
    pairs = p["pairs"]
    if p["keep"] is not None:
        pairs = [pairs[i] for i in p["keep"]]
    X = _onehot_block(t, pairs)
    taken = {c.name for c in t.features if c.name not in p["levels"]} | {t.target}
    names = _unique_names([f"{n}={v}" for n, v in pairs], taken)
    by_source: dict[str, list[Column]] = {}
    for j, ((src, _), nm) in enumerate(zip(pairs, names)):
        by_source.setdefault(src, []).append(Column.numeric(nm, X[:, j]))
    out = []
    for c in t.features:
        if c.name in p["levels"]:
            out.extend(by_source.get(c.name, []))
        else:
            out.append(c)
    return t.with_features(out)


# ------------------------------------------------------- feature preprocessing


def _fit_columnwise(t: Table, stat: Callable[[np.ndarray], Any]):
    cols = _numeric_features(t)
    if not cols:
        return None
    return {"stats": {c.name: stat(c.observed().astype(np.float64)) for c in cols}}


def _transform_columnwise(p, t: Table, fn) -> Table:
    cols = [c for c in _numeric_features(t) if c.name in p["stats"]]
    if not cols:
        return t
    X = _matrix(cols)
    with np.errstate(all="ignore"):
        Y = np.column_stack([fn(X[:, j], p["stats"][c.name]) for j, c in enumerate(cols)])
    return _replace_numeric(t, cols, Y)


def _minmax_stat(x):
    if len(x) == 0:
        return (0.0, 1.0)
    lo, hi = float(x.min()), float(x.max())
    return (lo, hi - lo if hi > lo else 1.0)


def _maxabs_stat(x):
    m = float(np.abs(x).max()) if len(x) else 0.0
    return m if m > 0 else 1.0


def _robust_stat(x):
    if len(x) == 0:
        return (0.0, 1.0)
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    return (float(med), float(iqr) if iqr > 0 else 1.0)


def _standard_stat(x):
    if len(x) == 0:
        return (0.0, 1.0)
    sd = float(x.std())
    return (float(x.mean()), sd if sd > 0 else 1.0)


def _quantile_stat(x):
    if len(x) == 0:
        return (np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    n = min(QUANTILE_KNOTS, len(x))
    refs = np.linspace(0.0, 1.0, max(n, 2))
    return (np.percentile(x, refs * 100.0), refs)


def _quantile_map(x, stat):
    knots, refs = stat
    # averaging forward and backward interpolation handles repeated knots
    fwd = np.interp(x, knots, refs)
    bwd = -np.interp(-x, -knots[::-1], -refs[::-1])
    return np.clip(0.5 * (fwd + bwd), 0.0, 1.0)


def yeo_johnson(x: np.ndarray, lam: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    if abs(lam) < 1e-12:
        out[pos] = np.log1p(x[pos])
    else:
        out[pos] = np.expm1(lam * np.log1p(x[pos])) / lam
    if abs(lam - 2.0) < 1e-12:
        out[~pos] = -np.log1p(-x[~pos])
    else:
        out[~pos] = -np.expm1((2.0 - lam) * np.log1p(-x[~pos])) / (2.0 - lam)
    return out


def yeo_johnson_loglik(x: np.ndarray, lam: float) -> float:
    with np.errstate(all="ignore"):
        y = yeo_johnson(x, lam)
        var = np.var(y)
    if not np.isfinite(var) or var <= 0:
        return -np.inf
    return float(-0.5 * len(x) * np.log(var) + (lam - 1.0) * np.sum(np.sign(x) * np.log1p(np.abs(x))))


def golden_section_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _power_stat(x):
    if len(x) < 2 or np.ptp(x) == 0:
        return (1.0, 0.0, 1.0)
    lam = golden_section_max(lambda l: yeo_johnson_loglik(x, l), -3.0, 5.0)
    with np.errstate(all="ignore"):
        y = yeo_johnson(x, lam)
    y = y[np.isfinite(y)]
    mu = float(y.mean()) if len(y) else 0.0
    sd = float(y.std()) if len(y) else 1.0
    return (lam, mu, sd if sd > 0 else 1.0)


def _kbins_stat(x):
    if len(x) == 0:
        return np.array([])
    return np.percentile(x, np.linspace(0, 100, N_BINS + 1)[1:-1])


_COLUMNWISE = {
    6: (_minmax_stat, lambda x, s: (x - s[0]) / s[1]),
    7: (_maxabs_stat, lambda x, s: x / s),
    8: (_robust_stat, lambda x, s: (x - s[0]) / s[1]),
    9: (_standard_stat, lambda x, s: (x - s[0]) / s[1]),
    10: (_quantile_stat, _quantile_map),
    12: (_power_stat, lambda x, s: (yeo_johnson(x, s[0]) - s[1]) / s[2]),
    14: (_kbins_stat, lambda x, s: np.where(np.isnan(x), np.nan,
                                            np.searchsorted(s, x, side="right").astype(float))),
}


def _fit_stateless(t: Table):
    return {} if _numeric_features(t) else None


def _transform_log(p, t: Table) -> Table:
    cols = _numeric_features(t)
    if not cols:
        return t
    X = _matrix(cols)
    return _replace_numeric(t, cols, np.sign(X) * np.log1p(np.abs(X)))


def _transform_normalizer(p, t: Table) -> Table:
    cols = _numeric_features(t)
    if not cols:
        return t
    X = _matrix(cols)
    Z = np.nan_to_num(X, nan=0.0)
    with np.errstate(all="ignore"):
        norm = np.sqrt(np.sum(Z * Z, axis=1))
    norm[~(norm > 0)] = 1.0
    return _replace_numeric(t, cols, X / norm[:, None])


# ------------------------------------------------------- feature engineering


def _product_terms(names, include_squares: bool):
    terms = [(i,) for i in range(len(names))]
    for i, j in itertools.combinations_with_replacement(range(len(names)), 2):
        if i == j and not include_squares:
            continue
        terms.append((i, j))
    return terms


def _product_block(X: np.ndarray, terms) -> np.ndarray:
    out = np.empty((X.shape[0], len(terms)))
    with np.errstate(all="ignore"):
        for k, term in enumerate(terms):
            out[:, k] = X[:, term[0]] if len(term) == 1 else X[:, term[0]] * X[:, term[1]]
    return out


def _term_name(names, term):
    if len(term) == 1:
        return names[term[0]]
    i, j = term
    return f"({names[i]})^2" if i == j else f"({names[i]})*({names[j]})"


def _fit_products(t: Table, include_squares: bool):
    cols = _numeric_features(t)
    if not cols:
        return None
    names = [c.name for c in cols]
    means = _column_means(cols)
    terms = _product_terms(names, include_squares)
    X = _filled_matrix(cols, means)
    keep = None
    if len(terms) > MAX_FEATURES:
        keep = _cap_by_variance(_product_block(X, terms))
        terms = [terms[i] for i in keep]
    return {"inputs": names, "means": means, "terms": terms}


def _transform_products(p, t: Table) -> Table:
    cols = [t.column(n) for n in p["inputs"]]
    X = _filled_matrix(cols, p["means"])
    Y = _product_block(X, p["terms"])
    return _swap_numeric_block(t, [_term_name(p["inputs"], tm) for tm in p["terms"]], Y)


def _n_components(n_rows: int, n_features: int, override: int | None) -> int:
    k = override if override is not None else MAX_COMPONENTS
    return max(1, min(k, n_features, max(n_rows - 1, 1)))


def _fit_linear_projection(t: Table, method: str, n_components: int | None):
    cols = _numeric_features(t)
    if not cols or t.n_rows < 2:
        return None
    means_fill = _column_means(cols)
    X = _filled_matrix(cols, means_fill)
    k = _n_components(len(X), X.shape[1], n_components)
    if method == "tsvd":
        center = np.zeros(X.shape[1])
        _, comps = power_truncated_svd(X, k)
    elif method == "ipca":
        center, cov = running_covariance(X, IPCA_BATCH)
        w, v = np.linalg.eigh(cov)
        comps = fix_signs(v[:, np.argsort(-w, kind="stable")[:k]].T)
    else:
        center = X.mean(axis=0)
        Xc = X - center
        if method == "svd":
            _, _, vt = np.linalg.svd(Xc, full_matrices=False)
        elif method == "lapack":
            _, _, vt = scipy.linalg.svd(Xc, full_matrices=False, lapack_driver="gesvd")
        else:  # arpack-style power iteration
            _, vt = power_truncated_svd(Xc, k)
        comps = fix_signs(vt[:k])
    return {"inputs": [c.name for c in cols], "fill": means_fill, "center": center,
            "components": comps, "prefix": {"svd": "pca", "lapack": "pca", "arpack": "pca",
                                            "ipca": "ipca", "tsvd": "svd"}[method]}


def _transform_linear_projection(p, t: Table) -> Table:
    cols = [t.column(n) for n in p["inputs"]]
    X = _filled_matrix(cols, p["fill"])
    Y = (X - p["center"]) @ p["components"].T
    return _swap_numeric_block(t, [f"{p['prefix']}{j}" for j in range(Y.shape[1])], Y)


def _fit_kernel_pca(t: Table, n_components: int | None, seed: int):
    cols = _numeric_features(t)
    if not cols or t.n_rows < 3:
        return None
    fill = _column_means(cols)
    X = _filled_matrix(cols, fill)
    if len(X) > KPCA_MAX_ROWS:
        rows = np.sort(np.random.default_rng(seed).choice(len(X), KPCA_MAX_ROWS, replace=False))
        X = X[rows]
    d = pdist(X)
    med = float(np.median(d)) if len(d) else 1.0
    bandwidth = med if med > 0 else 1.0
    gamma = 1.0 / (2.0 * bandwidth ** 2)
    K = np.exp(-gamma * cdist(X, X, "sqeuclidean"))
    col_mean = K.mean(axis=0)
    all_mean = col_mean.mean()
    Kc = K - col_mean[None, :] - col_mean[:, None] + all_mean
    w, v = np.linalg.eigh(Kc)
    order = np.argsort(-w, kind="stable")
    k = _n_components(len(X), len(X), n_components if n_components is not None else MAX_COMPONENTS)
    order = [i for i in order[:k] if w[i] > 1e-12] or [order[0]]
    alphas = fix_signs(v[:, order].T).T / np.sqrt(np.maximum(w[order], 1e-12))
    return {"inputs": [c.name for c in cols], "fill": fill, "basis": X, "gamma": gamma,
            "col_mean": col_mean, "all_mean": all_mean, "alphas": alphas}


def _transform_kernel_pca(p, t: Table) -> Table:
    cols = [t.column(n) for n in p["inputs"]]
    X = _filled_matrix(cols, p["fill"])
    K = np.exp(-p["gamma"] * cdist(X, p["basis"], "sqeuclidean"))
    Kc = K - K.mean(axis=1, keepdims=True) - p["col_mean"][None, :] + p["all_mean"]
    Y = Kc @ p["alphas"]
    return _swap_numeric_block(t, [f"kpca{j}" for j in range(Y.shape[1])], Y)


def _grow_random_tree(X: np.ndarray, rng: np.random.Generator, depth: int):
    """Complete binary tree of (feature, threshold) in heap order."""
    n_internal = 2 ** depth - 1
    feats = np.zeros(n_internal, dtype=int)
    thr = np.zeros(n_internal)
    lo_all, hi_all = X.min(axis=0), X.max(axis=0)
    node_rows = {0: np.arange(len(X))}
    for node in range(n_internal):
        rows = node_rows.pop(node)
        f = int(rng.integers(X.shape[1]))
        if len(rows):
            lo, hi = X[rows, f].min(), X[rows, f].max()
        else:
            lo, hi = lo_all[f], hi_all[f]
        thr[node] = rng.uniform(lo, hi) if hi > lo else lo
        feats[node] = f
        go_left = X[rows, f] <= thr[node]
        node_rows[2 * node + 1] = rows[go_left]
        node_rows[2 * node + 2] = rows[~go_left]
    return feats, thr


def _tree_leaves(X: np.ndarray, feats, thr, depth: int) -> np.ndarray:
    node = np.zeros(len(X), dtype=int)
    for _ in range(depth):
        right = X[np.arange(len(X)), feats[node]] > thr[node]
        node = 2 * node + 1 + right
    return node - (2 ** depth - 1)


def _fit_random_trees(t: Table, seed: int):
    cols = _numeric_features(t)
    if not cols or t.n_rows == 0:
        return None
    fill = _column_means(cols)
    X = _filled_matrix(cols, fill)
    rng = np.random.default_rng(seed)
    trees = [_grow_random_tree(X, rng, TREE_DEPTH) for _ in range(N_TREES)]
    return {"inputs": [c.name for c in cols], "fill": fill, "trees": trees}


def _transform_random_trees(p, t: Table) -> Table:
    cols = [t.column(n) for n in p["inputs"]]
    X = _filled_matrix(cols, p["fill"])
    n_leaves = 2 ** TREE_DEPTH
    blocks, names = [], []
    for k, (feats, thr) in enumerate(p["trees"]):
        leaf = _tree_leaves(X, feats, thr, TREE_DEPTH)
        blocks.append(np.eye(n_leaves)[leaf])
        names.extend(f"tree{k}_leaf{j}" for j in range(n_leaves))
    return _swap_numeric_block(t, names, np.hstack(blocks))


# ---------------------------------------------------------------- selection


def _fit_variance_threshold(t: Table, threshold: float = 0.0):
    cols = _numeric_features(t)
    drop = []
    for c in cols:
        obs = c.observed().astype(np.float64)
        if len(obs) == 0 or np.var(obs) <= threshold:
            drop.append(c.name)
    if not drop or len(drop) == len(t.features):
        return None
    return {"drop": drop}


def _transform_variance_threshold(p, t: Table) -> Table:
    drop = set(p["drop"])
    return t.with_features([c for c in t.features if c.name not in drop])


# ---------------------------------------------------------------- dispatch


def fit(op: OperatorSpec | int, t: Table, *, seed: int = 0,
        n_components: int | None = None) -> FittedOperator:
    """Learn operator parameters from ``t``.

    ``seed`` drives the randomized operators (random trees, kernel sampling);
    ``n_components`` overrides the default component count of the
    decomposition operators.
    """
    s = op if isinstance(op, OperatorSpec) else spec(op)
    i = s.id
    if t.n_rows == 0:
        raise ValueError("cannot fit an operator on an empty table")
    if i == END:
        params = None
    elif i in (1, 2, 3):
        params = _fit_impute(t, {1: "mean", 2: "median", 3: "most_frequent"}[i])
    elif i == 4:
        params = _fit_label(t)
    elif i == 5:
        params = _fit_onehot(t)
    elif i in _COLUMNWISE:
        params = _fit_columnwise(t, _COLUMNWISE[i][0])
    elif i in (11, 13):
        params = _fit_stateless(t)
    elif i in (15, 16):
        params = _fit_products(t, include_squares=(i == 15))
    elif i in (17, 18, 19, 20, 22):
        method = {17: "svd", 18: "lapack", 19: "arpack", 20: "ipca", 22: "tsvd"}[i]
        params = _fit_linear_projection(t, method, n_components)
    elif i == 21:
        params = _fit_kernel_pca(t, n_components, seed)
    elif i == 23:
        params = _fit_random_trees(t, seed)
    else:
        params = _fit_variance_threshold(t)
    return FittedOperator(s, params, t.schema)


def transform(f: FittedOperator, t: Table) -> Table:
    if t.schema != f.schema:
        raise SchemaError(f"{f.spec.name}: table schema differs from fit-time schema")
    if f.params is None:
        return t
    i, p = f.spec.id, f.params
    if i in (1, 2, 3):
        return _transform_impute(p, t)
    if i == 4:
        return _transform_label(p, t)
    if i == 5:
        return _transform_onehot(p, t)
    if i in _COLUMNWISE:
        return _transform_columnwise(p, t, _COLUMNWISE[i][1])
    if i == 11:
        return _transform_log(p, t)
    if i == 13:
        return _transform_normalizer(p, t)
    if i in (15, 16):
        return _transform_products(p, t)
    if i in (17, 18, 19, 20, 22):
        return _transform_linear_projection(p, t)
    if i == 21:
        return _transform_kernel_pca(p, t)
    if i == 23:
        return _transform_random_trees(p, t)
    return _transform_variance_threshold(p, t)


def validate_pipeline(pipeline: Sequence[int]) -> list[int]:
    p = [int(a) for a in pipeline]
    for k, a in enumerate(p):
        if a not in _BY_ID:
            raise KeyError(f"unknown operator id {a} at step {k}")
        if a == END and k != len(p) - 1:
            raise ValueError("END may only appear as the last step")
    return p


def operator_steps(pipeline: Sequence[int]) -> list[int]:
    """Pipeline without a trailing END."""
    p = validate_pipeline(pipeline)
    return p[:-1] if p and p[-1] == END else p


def fit_pipeline(pipeline: Sequence[int], t: Table, fit_rows=None, *,
                 seed: int = 0) -> tuple[list[FittedOperator], Table]:
    """Fit steps left to right on ``fit_rows`` and transform every row.

    Returns the fitted steps and the transformed full table.
    """
    fitted = []
    cur = t
    for k, a in enumerate(operator_steps(pipeline)):
        try:
            train = cur if fit_rows is None else cur.take(fit_rows)
            f = fit(a, train, seed=seed)
            cur = transform(f, cur)
        except Exception as exc:  # noqa: BLE001 - any step failure is reported with its index
            raise PipelineError(k, a, exc) from exc
        fitted.append(f)
    return fitted, cur


def transform_pipeline(fitted: Sequence[FittedOperator], t: Table) -> Table:
    cur = t
    for k, f in enumerate(fitted):
        try:
            cur = transform(f, cur)
        except Exception as exc:  # noqa: BLE001
            raise PipelineError(k, f.spec.id, exc) from exc
    return cur


def apply_pipeline(pipeline: Sequence[int], t: Table, fit_rows=None, *, seed: int = 0) -> Table:
    return fit_pipeline(pipeline, t, fit_rows, seed=seed)[1]
