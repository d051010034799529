"""Experiment harness: benchmark runs, learning curves, rank tables, theory checks."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import re
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import Column, SplitSpec, Table, load_csv
from .evaluator import PipelineEvaluator
from .ltr import Experience, ExperienceStore, LTRModel, read_experiences, train_ranker
from .operators import ACTIONS, END, TYPES, type_of
from .policy import (FusionWeights, constrained_policy, fusion_logits, gap_lower_bound,
                     kl_objective, kl_optimal_policy, prior_constant, projected_gradient_ascent,
                     softmax_policy)
from .prior import Planner, PlannerConfig
from .qvalue import make_q
from .search import MODES, Components, SearchConfig, SearchResult, run_search

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

BUNDLED = {
    "wine": ("wine.csv", "class"),
    "breast_cancer": ("breast_cancer.csv", "diagnosis"),
    "anes96": ("anes96.csv", "vote"),
}

OPENML = {"wall-robot-nav": (1497, "Class")}


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("softpipe") / "data" / BUNDLED[name][0]))


def load_bundled(name: str) -> Table:
    return load_csv(bundled_path(name), BUNDLED[name][1])


def default_config_path() -> Path:
    return Path(str(resources.files("softpipe") / "data" / "default.toml"))


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class DatasetEntry:
    name: str
    path: str
    target: str

    def load(self) -> Table:
        if self.path.startswith("bundled:"):
            return load_bundled(self.path.split(":", 1)[1])
        return load_csv(self.path, self.target)


@dataclass
class BenchmarkConfig:
    datasets: list[DatasetEntry]
    modes: list[str] = field(default_factory=lambda: ["softpipe", "eps_greedy_ql"])
    seeds: list[int] = field(default_factory=lambda: [0])
    search: SearchConfig = SearchConfig()
    split: SplitSpec = SplitSpec()
    planner: PlannerConfig = PlannerConfig()
    q_backend: str = "tabular"
    network_lr: float = 1e-4
    buffer_size: int = 5000
    batch_size: int = 200
    gamma_rl: float = 0.9  # kept for completeness; terminal-reward updates do not discount
    ltr_model: str | None = None
    ltr_oracle_prefixes: int = 0
    exemplars: str | None = None
    output_dir: str = "results"

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        if not self.modes:
            raise ValueError("at least one mode is required")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        for m in self.modes:
            parse_mode(m)


_MODE_RE = re.compile(r"^(\w+)(?:\[(.*)\])?$")


def parse_mode(mode: str) -> tuple[str, dict[str, float]]:
    """``"softpipe[beta=0,gamma=1.5]"`` -> ``("softpipe", {"beta": 0.0, "gamma": 1.5})``."""
    m = _MODE_RE.match(mode.strip())
    if not m or m.group(1) not in MODES:
        raise ValueError(f"bad mode {mode!r}; expected one of {MODES} with optional [k=v,...]")
    overrides = {}
    if m.group(2):
        for part in m.group(2).split(","):
            k, v = part.split("=")
            k = k.strip()
            if k not in ("alpha", "beta", "gamma", "epsilon", "eta"):
                raise ValueError(f"unknown override {k!r} in {mode!r}")
            overrides[k] = float(v)
    return m.group(1), overrides


def mode_config(base: SearchConfig, mode: str, seed: int) -> SearchConfig:
    name, ov = parse_mode(mode)
    w = base.weights
    w = FusionWeights(ov.get("alpha", w.alpha), ov.get("beta", w.beta), ov.get("gamma", w.gamma))
    return replace(base, mode=name, weights=w, seed=seed,
                   epsilon=ov.get("epsilon", base.epsilon), eta=ov.get("eta", base.eta))


def sweep_modes(grid: dict[str, Sequence[float]], base_mode: str = "softpipe") -> list[str]:
    """One mode string per point of a one-variable-at-a-time weight sweep."""
    out = []
    for k, values in grid.items():
        out.extend(f"{base_mode}[{k}={v:g}]" for v in values)
    return out


def load_config(path=None, **overrides) -> BenchmarkConfig:
    path = Path(path) if path else default_config_path()
    with path.open("rb") as fh:
        raw = tomllib.load(fh)
    base = path.parent
    datasets = []
    for d in raw.get("datasets", []):
        p = d["path"]
        if not p.startswith("bundled:") and not Path(p).is_absolute():
            p = str(base / p)
        datasets.append(DatasetEntry(d.get("name", Path(p).stem), p, d.get("target", "")))
    s = raw.get("search", {})
    w = raw.get("weights", {})
    sp = raw.get("split", {})
    pl = raw.get("planner", {})
    net = raw.get("network", {})
    ltr = raw.get("ltr", {})
    modes = list(raw.get("modes", ["softpipe", "eps_greedy_ql"]))
    if "sweep" in raw:
        modes += sweep_modes(raw["sweep"])
    cfg = BenchmarkConfig(
        datasets=datasets,
        modes=modes,
        seeds=[int(x) for x in raw.get("seeds", [0])],
        search=SearchConfig(T=int(s.get("T", 8)), episodes=int(s.get("episodes", 100)),
                            weights=FusionWeights(float(w.get("alpha", 1.0)), float(w.get("beta", 2.0)),
                                                  float(w.get("gamma", 2.0))),
                            epsilon=float(s.get("epsilon", 0.1)), eta=float(s.get("eta", 0.1))),
        split=SplitSpec(float(sp.get("train", 0.7)), float(sp.get("val", 0.15)),
                        float(sp.get("test", 0.15)), int(sp.get("seed", 0))),
        planner=PlannerConfig(**{k: pl[k] for k in ("endpoint", "model", "timeout", "max_retries",
                                                    "cache_dir", "mode", "api_key_env") if k in pl}),
        q_backend=s.get("q_backend", "tabular"),
        network_lr=float(net.get("lr", 1e-4)),
        buffer_size=int(net.get("buffer_size", 5000)),
        batch_size=int(net.get("batch_size", 200)),
        gamma_rl=float(net.get("gamma_rl", 0.9)),
        ltr_model=ltr.get("model") or None,
        ltr_oracle_prefixes=int(ltr.get("oracle_prefixes", 0)),
        exemplars=raw.get("exemplars") or None,
        output_dir=raw.get("output_dir", "results"),
    )
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


# ------------------------------------------------------------------ oracle LTR corpus


def oracle_experiences(evaluator: PipelineEvaluator, n_prefixes: int = 6, T: int = 8,
                       actions: Sequence[int] = ACTIONS, seed: int = 0, tag: str = "") -> list[Experience]:
    """Exhaustive one-step look-ahead from random short prefixes.

    For each prefix every action is appended and the resulting pipeline is
    evaluated; the experience label is that accuracy. The empty prefix is
    always included.
    """
    from .metafeatures import extract_state

    rng = np.random.default_rng(seed)
    ops = [a for a in actions if a != END]
    prefixes = [()]
    while len(prefixes) < n_prefixes:
        length = int(rng.integers(1, 3))
        p = tuple(int(a) for a in rng.choice(ops, length))
        if p not in prefixes:
            prefixes.append(p)
    out = []
    for p in prefixes:
        s = extract_state(evaluator.train_view(p), p, T)
        for a in actions:
            perf = evaluator.evaluate(list(p) + [a]).accuracy
            out.append(Experience(s, a, perf, tag))
    return out


# ------------------------------------------------------------------ results


@dataclass(frozen=True)
class ResultRow:
    dataset: str
    mode: str
    seed: int
    best_accuracy: float
    best_test_accuracy: float
    best_pipeline: str
    mean_pipeline_length: float
    episodes_to_best: int
    episodes_to_95: int
    wall_seconds: float = 0.0
    failed: bool = False
    error: str = ""


RESULT_FIELDS = ["dataset", "mode", "seed", "best_accuracy", "best_test_accuracy", "best_pipeline",
                 "mean_pipeline_length", "episodes_to_best", "episodes_to_95", "failed", "error"]


def episodes_to_fraction(curve: Sequence[float], fraction: float = 0.95) -> int:
    """1-based episode at which the best-so-far first reaches ``fraction`` of its final value."""
    c = np.asarray(curve, dtype=np.float64)
    if len(c) == 0:
        return 0
    target = fraction * c[-1]
    return int(np.flatnonzero(c >= target - 1e-12)[0]) + 1


def summarize(dataset: str, mode: str, seed: int, res: SearchResult, seconds: float) -> ResultRow:
    curve = res.best_so_far
    return ResultRow(dataset, mode, seed, res.best_reward, res.best_test_reward,
                     json.dumps(res.best_pipeline), float(np.mean([r.length for r in res.records])),
                     episodes_to_fraction(curve, 1.0), episodes_to_fraction(curve, 0.95), seconds)


def write_results(rows: Sequence[ResultRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_FIELDS)
        for r in rows:
            w.writerow([r.dataset, r.mode, r.seed, repr(r.best_accuracy), repr(r.best_test_accuracy),
                        r.best_pipeline, repr(r.mean_pipeline_length), r.episodes_to_best,
                        r.episodes_to_95, int(r.failed), r.error])


def rank_table(rows: Sequence[ResultRow]) -> dict[str, float]:
    """Average rank of each mode across datasets (1 = best; ties share the mean rank).

    Per dataset, a mode's score is its mean best accuracy over seeds.
    """
    modes = sorted({r.mode for r in rows}, key=lambda m: [r.mode for r in rows].index(m))
    datasets = sorted({r.dataset for r in rows}, key=lambda d: [r.dataset for r in rows].index(d))
    ranks = {m: [] for m in modes}
    for d in datasets:
        scores = []
        for m in modes:
            vals = [r.best_accuracy for r in rows if r.dataset == d and r.mode == m]
            scores.append(np.mean(vals) if vals else -np.inf)
        for m, rk in zip(modes, rankdata(-np.asarray(scores), method="average")):
            ranks[m].append(float(rk))
    return {m: float(np.mean(v)) for m, v in ranks.items()}


def write_rank_table(rows: Sequence[ResultRow], path) -> dict[str, float]:
    table = rank_table(rows)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "mean_best_accuracy", "average_rank"])
        for m, rk in table.items():
            acc = np.mean([r.best_accuracy for r in rows if r.mode == m])
            w.writerow([m, repr(float(acc)), repr(rk)])
    return table


def _slug(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", s).strip("_")


def emit_learning_curves(runs: dict[tuple[str, str, int], SearchResult], out_dir) -> list[Path]:
    """One CSV per (dataset, mode, seed) plus a merged mean/std file per (dataset, mode)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    merged: dict[tuple[str, str], list[list[float]]] = {}
    for (dataset, mode, seed), res in runs.items():
        p = out_dir / f"curve_{_slug(dataset)}_{_slug(mode)}_seed{seed}.csv"
        best = res.best_so_far
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "reward", "best_so_far"])
            for i, (rec, b) in enumerate(zip(res.records, best), start=1):
                w.writerow([i, repr(rec.reward), repr(float(b))])
        written.append(p)
        merged.setdefault((dataset, mode), []).append(best)
    for (dataset, mode), curves in merged.items():
        n = min(len(c) for c in curves)
        arr = np.array([c[:n] for c in curves])
        p = out_dir / f"curve_{_slug(dataset)}_{_slug(mode)}_merged.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "mean_best_so_far", "std_best_so_far", "n_seeds"])
            for i in range(n):
                w.writerow([i + 1, repr(float(arr[:, i].mean())), repr(float(arr[:, i].std())), len(curves)])
        written.append(p)
    return written


# ------------------------------------------------------------------ running


def build_components(cfg: BenchmarkConfig, evaluator: PipelineEvaluator, seed: int, tag: str,
                     ltr: LTRModel | None = None, store: ExperienceStore | None = None,
                     states: dict | None = None) -> Components:
    if cfg.q_backend == "network":
        q = make_q("network", seed=seed, lr=cfg.network_lr, capacity=cfg.buffer_size,
                   batch_size=cfg.batch_size)
    else:
        q = make_q("tabular")
    comp = Components(evaluator=evaluator, planner=Planner(cfg.planner), q=q, ltr=ltr,
                      store=store, tag=tag)
    if states is not None:
        # states depend only on the prefix and ranker scores only on the state,
        # so runs on one dataset with one ranker can share both caches
        comp._states = states.setdefault("states", {})
        comp._ranks = states.setdefault("ranks", {})
    return comp


def run_one(cfg: BenchmarkConfig, mode: str, seed: int, evaluator: PipelineEvaluator, tag: str,
            ltr: LTRModel | None = None, store: ExperienceStore | None = None,
            states: dict | None = None) -> SearchResult:
    scfg = mode_config(cfg.search, mode, seed)
    if cfg.q_backend == "network" and "eta" not in parse_mode(mode)[1]:
        scfg = replace(scfg, eta=cfg.network_lr)
    return run_search(scfg, build_components(cfg, evaluator, seed, tag, ltr, store, states))


def _dataset_ltr(cfg: BenchmarkConfig, evaluator: PipelineEvaluator, tag: str) -> LTRModel | None:
    if cfg.ltr_model:
        return LTRModel.load(cfg.ltr_model)
    if cfg.ltr_oracle_prefixes > 0:
        exps = oracle_experiences(evaluator, cfg.ltr_oracle_prefixes, cfg.search.T,
                                  cfg.search.actions, seed=0, tag=tag)
        return train_ranker(exps)
    return None


def run_benchmark(cfg: BenchmarkConfig, write: bool = True):
    """Run every (dataset, mode, seed) and write results, curves and ranks.

    Returns ``(rows, runs)`` where ``runs`` maps (dataset, mode, seed) to the
    search result. A failing run becomes a row with ``failed`` set.
    """
    out = Path(cfg.output_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
    store = ExperienceStore(out / "experiences.csv" if write else None)
    rows: list[ResultRow] = []
    runs: dict[tuple[str, str, int], SearchResult] = {}
    timings = []
    for entry in cfg.datasets:
        try:
            raw = entry.load()
            evaluator = PipelineEvaluator(raw, cfg.split)
            ltr = _dataset_ltr(cfg, evaluator, entry.name)
            states: dict = {}
        except Exception as exc:  # noqa: BLE001 - recorded, harness continues
            logger.error("dataset %s unavailable: %s", entry.name, exc)
            for mode, seed in itertools.product(cfg.modes, cfg.seeds):
                rows.append(ResultRow(entry.name, mode, seed, 0.0, 0.0, "[]", 0.0, 0, 0,
                                      failed=True, error=str(exc)))
            continue
        for mode, seed in itertools.product(cfg.modes, cfg.seeds):
            start = time.perf_counter()
            try:
                res = run_one(cfg, mode, seed, evaluator, entry.name, ltr, store, states)
            except Exception as exc:  # noqa: BLE001
                logger.error("run %s/%s/%s failed: %s", entry.name, mode, seed, exc)
                rows.append(ResultRow(entry.name, mode, seed, 0.0, 0.0, "[]", 0.0, 0, 0,
                                      failed=True, error=str(exc)))
                continue
            seconds = time.perf_counter() - start
            rows.append(summarize(entry.name, mode, seed, res, seconds))
            timings.append((entry.name, mode, seed, seconds))
            runs[(entry.name, mode, seed)] = res
    if write:
        write_results(rows, out / "results.csv")
        write_rank_table([r for r in rows if not r.failed], out / "ranks.csv")
        emit_learning_curves(runs, out / "curves")
        with (out / "timings.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "mode", "seed", "wall_seconds"])
            w.writerows([(d, m, s, f"{t:.3f}") for d, m, s, t in timings])
    return rows, runs


# ------------------------------------------------------------------ theory checks


def random_fusion_instance(rng: np.random.Generator, n_actions: int = 25):
    q = rng.random(n_actions)
    r = rng.random(n_actions)
    prior = rng.dirichlet(np.ones(n_actions)) + 1e-3
    return q, r, prior / prior.sum()


def check_closed_form(n_instances: int = 100, seed: int = 0, tol: float = 1e-6,
                      weights: FusionWeights = FusionWeights(1.0, 2.0, 2.0), restarts: int = 10):
    """Fusion policy vs projected-gradient ascent on the KL objective.

    ``passes`` counts instances where the fusion policy is within ``tol`` of the
    search optimum. ``exact_passes`` does the same for :func:`kl_optimal_policy`,
    which confirms the search itself is sound.
    """
    rng = np.random.default_rng(seed)
    passes, exact_passes, worst, worst_exact = 0, 0, -np.inf, -np.inf
    for _ in range(n_instances):
        q, r, prior = random_fusion_instance(rng)
        pi = softmax_policy(fusion_logits(q, r, prior, weights))
        f_policy = kl_objective(pi, q, r, prior, weights)
        f_exact = kl_objective(kl_optimal_policy(q, r, prior, weights), q, r, prior, weights)
        _, f_search = projected_gradient_ascent(q, r, prior, weights, rng, restarts=restarts)
        worst = max(worst, f_search - f_policy)
        worst_exact = max(worst_exact, f_search - f_exact)
        passes += f_search - f_policy <= tol
        exact_passes += f_search - f_exact <= tol
    return {"instances": n_instances, "passes": int(passes), "worst_search_excess": float(worst),
            "exact_passes": int(exact_passes), "worst_exact_excess": float(worst_exact)}


# action types of the 25-action library, used to lay out synthetic bandits
_ACTION_TYPES = [type_of(a) for a in ACTIONS]


def make_gap_bandit(rng: np.random.Generator, delta: float, uniform_prior: bool = False):
    """A 25-armed bandit whose best arm is hidden by type exclusion.

    The planted arm's whole operator type is masked. Allowed arms draw values in
    [0, 0.5]; the planted arm sits ``delta`` above the best allowed arm, and its
    masked type-mates lie between the two.
    """
    ops = [i for i, a in enumerate(ACTIONS) if a != END]
    star = int(rng.choice(ops))
    star_type = _ACTION_TYPES[star]
    mask = np.array([t != star_type for t in _ACTION_TYPES])
    Q = rng.uniform(0.0, 0.5, len(ACTIONS))
    v_hard = Q[mask].max()
    Q[star] = v_hard + delta
    mates = [i for i in range(len(ACTIONS)) if not mask[i] and i != star]
    Q[mates] = rng.uniform(v_hard, v_hard + delta, len(mates))
    if uniform_prior:
        prior = np.full(len(ACTIONS), 1.0 / len(ACTIONS))
    else:
        prior = rng.dirichlet(np.ones(len(ACTIONS))) + 1e-3
        prior /= prior.sum()
    return Q, prior, mask, star


def bandit_gap(Q, prior, mask, star, alpha: float = 1.0, beta: float = 2.0):
    """Exact values of the soft and hard policies and the gap bound."""
    w = FusionWeights(alpha, beta, 0.0)
    zeros = np.zeros(len(Q))
    pi_soft = softmax_policy(fusion_logits(Q, zeros, prior, w))
    pi_hard = constrained_policy(Q, zeros, prior, w, mask)
    delta = float(Q.max() - Q[mask].max())
    c = prior_constant(prior, star)
    return {
        "delta": delta,
        "c": c,
        "v_soft": float(pi_soft @ Q),
        "v_hard_policy": float(pi_hard @ Q),
        "v_hard_best": float(Q[mask].max()),
        "bound": gap_lower_bound(delta, c, alpha, beta),
    }


def check_gap_bound(n_instances: int = 50, seed: int = 0, delta_range=(0.1, 0.5),
                    alpha: float = 1.0, beta: float = 2.0, uniform_prior: bool = False):
    rng = np.random.default_rng(seed)
    passes, passes_vs_best, worst = 0, 0, np.inf
    for _ in range(n_instances):
        delta = float(rng.uniform(*delta_range))
        g = bandit_gap(*make_gap_bandit(rng, delta, uniform_prior), alpha, beta)
        margin = g["v_soft"] - g["v_hard_policy"] - g["bound"]
        worst = min(worst, margin)
        passes += margin >= 0
        passes_vs_best += g["v_soft"] - g["v_hard_best"] >= g["bound"]
    return {"instances": n_instances, "passes": int(passes), "worst_margin": float(worst),
            "passes_vs_best_constrained_arm": int(passes_vs_best)}


def verify_theory(n_instances: int = 100, seed: int = 0) -> dict:
    t1 = check_closed_form(n_instances, seed)
    t2 = check_gap_bound(max(n_instances // 2, 1), seed)
    t2_uniform = check_gap_bound(max(n_instances // 2, 1), seed + 2, (0.5, 0.5), uniform_prior=True)
    zero = check_gap_bound(10, seed + 3, (0.0, 0.0))
    return {"closed_form": t1, "gap_bound": t2, "gap_bound_uniform_prior": t2_uniform,
            "zero_gap": zero}


# ------------------------------------------------------------------ datasets


def fetch_openml(name: str, out_dir, session=None) -> Path:
    """Download an OpenML dataset as CSV (needs network access)."""
    import requests

    session = session or requests
    did, _ = OPENML[name]
    meta = session.get(f"https://www.openml.org/api/v1/json/data/{did}", timeout=60)
    meta.raise_for_status()
    file_id = meta.json()["data_set_description"]["file_id"]
    resp = session.get(f"https://www.openml.org/data/get_csv/{file_id}", timeout=300)
    resp.raise_for_status()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    path.write_text(resp.text.replace("'", ""))
    return path


TOY_LIBRARY = (1, 4, 6, 9, 13, 24)


def toy_constrained_table(n: int = 600, seed: int = 0) -> Table:
    """Two-feature task whose best pipeline repeats an operator type.

    Features are badly scaled copies of a standard normal pair; the label marks
    points inside a cone around the first axis. Separating a cone needs the
    direction of the centred point, i.e. centring then row normalization, and
    both operators are of the preprocessing type.
    """
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 2))
    y = np.where(np.abs(np.arctan2(z[:, 1], z[:, 0])) < np.pi / 4, "in", "out")
    x1 = 100.0 + 5.0 * z[:, 0]
    x2 = -50.0 + 0.1 * z[:, 1]
    return Table((Column.numeric("x1", x1), Column.numeric("x2", x2), Column.categorical("y", y)), "y")


def type_counts(actions: Sequence[int] = ACTIONS) -> dict[str, int]:
    return {t.value: sum(type_of(a) == t for a in actions) for t in TYPES}


def read_experience_file(path) -> list[Experience]:
    return list(read_experiences(path))
