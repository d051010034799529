"""Strategic prior over operator types and its marginalization onto actions.

A planner turns a state description into a distribution over operator types.
Three modes exist: ``remote`` asks a chat-completion endpoint (with an on-disk
response cache), ``replay`` only reads that cache, and ``heuristic`` applies
fixed rules to the state vector. Any failure falls back to the heuristic, so
producing a prior never raises.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metafeatures as mf
from .dataset import ColumnProfile
from .operators import ACTIONS, TYPES, OperatorType, spec, type_of

logger = logging.getLogger(__name__)

EPSILON = 1e-3
API_KEY_ENV = "SOFTPIPE_API_KEY"

# category names offered to the planner, with the operator type each maps to
CATEGORIES = (
    ("Imputer (category)", OperatorType.IMPUTER),
    ("Imputer (numeric)", OperatorType.IMPUTER),
    ("Encoder", OperatorType.ENCODER),
    ("Feature processor", OperatorType.FEATURE_PREPROCESSING),
    ("Feature engineering", OperatorType.FEATURE_ENGINEERING),
    ("Feature selection", OperatorType.SELECTION),
)

_ALIASES = {
    "imputer": OperatorType.IMPUTER,
    "imputercategory": OperatorType.IMPUTER,
    "imputernumeric": OperatorType.IMPUTER,
    "encoder": OperatorType.ENCODER,
    "featureprocessor": OperatorType.FEATURE_PREPROCESSING,
    "featurepreprocessing": OperatorType.FEATURE_PREPROCESSING,
    "featurepreprocessor": OperatorType.FEATURE_PREPROCESSING,
    "featureengineering": OperatorType.FEATURE_ENGINEERING,
    "featureselection": OperatorType.SELECTION,
    "selection": OperatorType.SELECTION,
    "terminal": OperatorType.TERMINAL,
    "end": OperatorType.TERMINAL,
    "stop": OperatorType.TERMINAL,
}


@dataclass(frozen=True)
class TypeDistribution:
    """Probabilities in ``operators.TYPES`` order, floored at ``EPSILON``."""

    probs: np.ndarray

    def __getitem__(self, t: OperatorType) -> float:
        return float(self.probs[TYPES.index(t)])

    def as_dict(self) -> dict[str, float]:
        return {t.value: float(p) for t, p in zip(TYPES, self.probs)}

    @classmethod
    def from_weights(cls, weights, eps: float = EPSILON) -> "TypeDistribution":
        """Normalize non-negative weights, then raise every entry to at least ``eps``.

        Entries below the floor are pinned to ``eps`` and the others are rescaled
        to fill the remaining mass, repeating until nothing is below the floor.
        A distribution already above the floor is returned unchanged.
        """
        w = np.clip(np.nan_to_num(np.asarray(weights, dtype=np.float64), nan=0.0), 0.0, None)
        total = w.sum()
        if not total > 0 or not math.isfinite(total):
            w = np.ones(len(TYPES))
            total = w.sum()
        p = w / total
        pinned = np.zeros(len(p), dtype=bool)
        while True:
            low = ~pinned & (p < eps)
            if not low.any():
                break
            pinned |= low
            free = ~pinned
            p[pinned] = eps
            if free.any():
                p[free] *= (1.0 - eps * pinned.sum()) / p[free].sum()
        return cls(p / p.sum())

    @classmethod
    def uniform(cls) -> "TypeDistribution":
        return cls.from_weights(np.ones(len(TYPES)))


@dataclass(frozen=True)
class PlannerConfig:
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "llama-3.3-70b-instruct"
    timeout: float = 60.0
    max_retries: int = 2
    cache_dir: str | None = None
    mode: str = "heuristic"
    api_key_env: str = API_KEY_ENV

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.mode not in ("remote", "heuristic", "replay"):
            raise ValueError(f"unknown planner mode {self.mode!r}")


@dataclass(frozen=True)
class Exemplar:
    """A past pipeline shown to the planner as a worked example."""

    state: np.ndarray
    pipeline: tuple[int, ...]
    accuracy: float
    context: str = ""


# ------------------------------------------------------------------ prompt


def _column_summary(profiles: Sequence[ColumnProfile]) -> tuple[str, str]:
    skewed = [p.name for p in profiles if p.skewness is not None and abs(p.skewness) > 1.0]
    outl = sorted((p for p in profiles if p.outlier_fraction), key=lambda p: -p.outlier_fraction)
    skew_txt = ", ".join(skewed[:5]) + (", ..." if len(skewed) > 5 else "") if skewed else "None"
    out_txt = (", ".join(f"{p.name} ({100 * p.outlier_fraction:.2f}%)" for p in outl[:5])
               + (", ..." if len(outl) > 5 else "")) if outl else "None"
    return skew_txt, out_txt


def describe_state(s: np.ndarray) -> str:
    parts = []
    if s[mf.I_MISSING] > 0:
        parts.append(f"{100 * s[mf.I_MISSING]:.1f}% missing cells")
    else:
        parts.append("no missing values")
    if s[mf.I_CATEGORICAL] > 0:
        parts.append(f"{100 * s[mf.I_CATEGORICAL]:.0f}% categorical columns")
    if s[mf.I_SKEW] > 1.0:
        parts.append("strongly skewed columns")
    if s[mf.I_OUTLIERS] > 0.02:
        parts.append("columns with outliers")
    if s[mf.I_CORR] > 0.5:
        parts.append("many correlated numerical features")
    return "A dataset with " + ", ".join(parts)


def build_prompt(s: np.ndarray, profiles: Sequence[ColumnProfile], partial: Sequence[int] = (),
                 examples: Sequence[Exemplar] = (), available: Sequence[int] = ACTIONS) -> str:
    n_rows = int(round(math.expm1(s[mf.I_LOG_ROWS])))
    n_cols = int(round(math.expm1(s[mf.I_LOG_COLS])))
    has_missing = any(p.missing_fraction > 0 for p in profiles)
    kinds = {p.kind for p in profiles}
    if kinds == {"numeric"}:
        feature_types = "All numerical"
    elif kinds == {"categorical"}:
        feature_types = "All categorical"
    else:
        n_cat = sum(p.kind == "categorical" for p in profiles)
        feature_types = f"Mixed ({len(profiles) - n_cat} numerical, {n_cat} categorical)"
    skew_txt, out_txt = _column_summary(profiles)
    ops = ", ".join(spec(a).name for a in available if a != 0)
    lines = [
        "You are assisting an automated search over data preparation pipelines. Each pipeline is "
        "an ordered list of operators applied to a table before a classifier is trained, and the "
        "search keeps the pipeline with the best validation accuracy.",
        "",
        "Action categories: " + ", ".join(name for name, _ in CATEGORIES) + ".",
        "",
        "Reply with a dict-like object mapping each category to the probability of choosing it "
        "next. Give more mass to categories worth exploring for this data and near-zero mass to "
        "categories that do not apply.",
        "",
        "Current situation and context:",
        "- Task Type: Logistic regression classification",
        "- Key Dataset Statistics:",
        f"  - Size of dataset: {n_rows} rows, {n_cols} cols",
        f"  - Missing Values: {'Yes' if has_missing else 'No'}",
        f"  - Feature Types: {feature_types}",
        f"  - Cols with skewed distribution: {skew_txt}",
        f"  - Cols with outliers: {out_txt}",
        "- Current Partial Pipeline: [" + ", ".join(spec(a).name for a in partial) + "]",
        "",
        f"Available operators: {ops}",
    ]
    for k, ex in enumerate(examples[:2], start=1):
        names = ", ".join(spec(a).name for a in ex.pipeline if a != 0)
        lines += ["", "---" if k == 1 else "", f"[Example {k}]",
                  f"- Context: {ex.context or describe_state(ex.state)}",
                  f"- Pipeline: [{names}], accuracy {ex.accuracy:.2f}"]
    return "\n".join(line for line in lines if line is not None) + "\n"


def retrieve_exemplars(exemplars: Sequence[Exemplar], s: np.ndarray, k: int = 2) -> list[Exemplar]:
    """Nearest stored exemplars by Euclidean distance between state vectors."""
    if not exemplars:
        return []
    d = np.array([np.linalg.norm(np.asarray(e.state) - s) for e in exemplars])
    order = np.argsort(d, kind="stable")[:k]
    return [exemplars[i] for i in order]


# ------------------------------------------------------------------ parsing


def _norm_key(k: str) -> str:
    return re.sub(r"[^a-z]", "", k.lower())


def _extract_mapping(text: str) -> dict | None:
    for m in re.finditer(r"\{[^{}]*\}", text, flags=re.S):
        blob = m.group(0)
        try:
            d = json.loads(blob)
        except json.JSONDecodeError:
            pairs = re.findall(r"['\"]?([A-Za-z][A-Za-z ()_\-]*)['\"]?\s*:\s*([-+0-9.eE]+)", blob)
            d = {}
            for k, v in pairs:
                try:
                    d[k] = float(v)
                except ValueError:
                    pass
        if isinstance(d, dict) and d:
            return d
    return None


def parse_type_distribution(text: str, fallback: TypeDistribution | None = None) -> TypeDistribution:
    """Read the first category->probability mapping in ``text``.

    The two imputer categories merge into one type by taking the larger of the
    two values. Unknown keys are ignored; unparseable text yields ``fallback``
    (uniform when not given).
    """
    d = _extract_mapping(text or "")
    weights = np.zeros(len(TYPES))
    found = False
    if d:
        for k, v in d.items():
            t = _ALIASES.get(_norm_key(str(k)))
            try:
                v = float(v)
            except (TypeError, ValueError):
                continue
            if t is None or not math.isfinite(v) or v < 0:
                continue
            i = TYPES.index(t)
            weights[i] = max(weights[i], v)
            found = True
    if not found or weights.sum() <= 0:
        logger.warning("could not parse a type distribution from planner output; using fallback")
        return fallback if fallback is not None else TypeDistribution.uniform()
    return TypeDistribution.from_weights(weights)


def marginalize_prior(d: TypeDistribution, actions: Sequence[int] = ACTIONS) -> np.ndarray:
    """Per-action prior: each type's mass split equally over its actions.

    Types with no action in ``actions`` drop out and the rest is renormalized.
    """
    types = [type_of(a) for a in actions]
    counts = {t: types.count(t) for t in set(types)}
    p = np.array([d[t] / counts[t] for t in types])
    return p / p.sum()


# ------------------------------------------------------------------ heuristic


def heuristic_distribution(s: np.ndarray) -> TypeDistribution:
    """Rule-based type preferences from the state vector.

    Missing cells favour imputers, categorical columns favour encoders, skew and
    outliers favour feature preprocessing, correlated features favour feature
    engineering, and the terminal action gains weight with the step index.
    """
    missing = float(s[mf.I_MISSING])
    cat = float(s[mf.I_CATEGORICAL])
    skew = min(float(s[mf.I_SKEW]), 3.0)
    outl = min(float(s[mf.I_OUTLIERS]), 0.5)
    corr = float(s[mf.I_CORR])
    step = float(s[mf.I_STEP])
    w = {
        OperatorType.IMPUTER: 0.02 + (1.0 + 15.0 * missing if missing > 0 else 0.0),
        OperatorType.ENCODER: 0.02 + (1.0 + 3.0 * cat if cat > 0 else 0.0),
        OperatorType.FEATURE_PREPROCESSING: 0.6 + skew / 3.0 + 2.0 * outl,
        OperatorType.FEATURE_ENGINEERING: 0.6 + corr,
        OperatorType.SELECTION: 0.15,
        OperatorType.TERMINAL: 0.05 + 2.0 * step ** 2,
    }
    return TypeDistribution.from_weights([w[t] for t in TYPES])


def distribution_text(d: TypeDistribution) -> str:
    return json.dumps({k: round(v, 6) for k, v in d.as_dict().items()})


# ------------------------------------------------------------------ client


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class PlannerUnavailable(RuntimeError):
    pass


def _cache_path(cfg: PlannerConfig, prompt: str) -> Path | None:
    if not cfg.cache_dir:
        return None
    return Path(cfg.cache_dir) / f"{prompt_hash(prompt)}.json"


def _read_cache(cfg: PlannerConfig, prompt: str) -> str | None:
    path = _cache_path(cfg, prompt)
    if path is None or not path.exists():
        return None
    return json.loads(path.read_text())["response"]


def _write_cache(cfg: PlannerConfig, prompt: str, response: str) -> None:
    path = _cache_path(cfg, prompt)
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps({"prompt_hash": prompt_hash(prompt), "response": response}))
    tmp.replace(path)


def chat_completion(cfg: PlannerConfig, prompt: str, session=None) -> str:
    """One chat-completion request with retries; raises PlannerUnavailable."""
    import requests

    session = session or requests
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(cfg.api_key_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    body = {"model": cfg.model, "temperature": 0,
            "messages": [{"role": "user", "content": prompt}]}
    last: Exception | None = None
    for attempt in range(cfg.max_retries + 1):
        try:
            resp = session.post(cfg.endpoint, json=body, headers=headers, timeout=cfg.timeout)
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]
        except Exception as exc:  # noqa: BLE001 - network, HTTP and payload errors all retry
            last = exc
            logger.warning("planner request failed (attempt %d): %s", attempt + 1, exc)
            if attempt < cfg.max_retries:
                time.sleep(min(0.5 * 2 ** attempt, 4.0))
    raise PlannerUnavailable(str(last))


class Planner:
    """Produces type distributions for states, counting remote calls."""

    def __init__(self, cfg: PlannerConfig = PlannerConfig(), session=None):
        self.cfg = cfg
        self.session = session
        self.network_calls = 0

    def query(self, prompt: str, s: np.ndarray | None = None) -> str:
        cfg = self.cfg
        fallback = distribution_text(heuristic_distribution(s)) if s is not None else \
            distribution_text(TypeDistribution.uniform())
        if cfg.mode == "heuristic":
            return fallback
        cached = _read_cache(cfg, prompt)
        if cached is not None:
            return cached
        if cfg.mode == "replay":
            logger.warning("replay cache miss for prompt %s; using heuristic", prompt_hash(prompt)[:12])
            return fallback
        try:
            self.network_calls += 1
            text = chat_completion(cfg, prompt, self.session)
        except PlannerUnavailable:
            return fallback
        _write_cache(cfg, prompt, text)
        return text

    def type_distribution(self, s: np.ndarray, profiles: Sequence[ColumnProfile] = (),
                          partial: Sequence[int] = (), exemplars: Sequence[Exemplar] = ()) -> TypeDistribution:
        heur = heuristic_distribution(s)
        if self.cfg.mode == "heuristic":
            return heur
        prompt = build_prompt(s, profiles, partial, retrieve_exemplars(exemplars, s))
        return parse_type_distribution(self.query(prompt, s), fallback=heur)


def query_planner(cfg: PlannerConfig, prompt: str, s: np.ndarray | None = None, session=None) -> str:
    return Planner(cfg, session).query(prompt, s)
