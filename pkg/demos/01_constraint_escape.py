"""Why masking repeated operator types can cost accuracy, and how soft guidance recovers it.

The toy task labels points by the angle of their centred coordinates. The two
features live on very different scales, so a good pipeline first standardizes
and then L2-normalizes each row. Both steps are preprocessing operators, which
a rule forbidding repeated types will never allow together.

Run:  python demos/01_constraint_escape.py
"""

from __future__ import annotations

import itertools

from softpipe.bench import TOY_LIBRARY, toy_constrained_table
from softpipe.evaluator import PipelineEvaluator
from softpipe.operators import spec, type_of
from softpipe.search import Components, SearchConfig, run_search


def names(p):
    return " -> ".join(spec(a).name for a in p) or "(raw data)"


def main():
    evaluator = PipelineEvaluator(toy_constrained_table())
    print("operators available:", ", ".join(f"{a}:{spec(a).name}" for a in TOY_LIBRARY))

    # brute force every pipeline up to length 3
    scores = {p: evaluator.evaluate(list(p)).accuracy
              for n in range(4) for p in itertools.product(TOY_LIBRARY, repeat=n)}
    best = max(scores, key=lambda p: (scores[p], -len(p)))
    allowed = {p: v for p, v in scores.items() if len({type_of(a) for a in p}) == len(p)}
    best_allowed = max(allowed, key=lambda p: (allowed[p], -len(p)))
    print(f"\nbest pipeline overall:        {names(best)}  acc={scores[best]:.4f}")
    print(f"best without repeated types:  {names(best_allowed)}  acc={allowed[best_allowed]:.4f}")

    print("\n100 episodes per seed, T=3:")
    for mode in ("softpipe", "hard_constraint"):
        found = []
        for seed in range(5):
            cfg = SearchConfig(T=3, episodes=100, seed=seed, mode=mode, actions=TOY_LIBRARY)
            res = run_search(cfg, Components(evaluator=evaluator))
            found.append(res.best_reward)
        print(f"  {mode:>16}: best per seed {[round(v, 4) for v in found]}")


if __name__ == "__main__":
    main()
