"""Operator-pipeline search guided by a fused value, ranker and type-prior policy."""

from .dataset import Column, SplitSpec, Table, load_csv
from .evaluator import EvalResult, PipelineEvaluator, evaluate_pipeline
from .operators import ACTIONS, END, N_ACTIONS, OperatorType, apply_pipeline, fit_pipeline
from .policy import FusionWeights, fusion_logits, softmax_policy
from .search import SearchConfig, SearchResult, run_search, search

__version__ = "0.1.0"
