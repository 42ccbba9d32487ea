"""Find data slices where a model's metric differs significantly.

Typical use::

    raw = load_dataset("data.csv", "label")
    preds = [load_predictions("model.csv", raw.num_rows)]
    data = encode(raw, preds, infer_schema(raw))
    report = run_search(SearchConfig(strategy="priority"), data)
"""

from .evaluator import DiffMode, EvaluationRequest, SliceEvaluation, SliceEvaluator
from .lattice import OVERALL, PruneIndex, conjoin, enumerate_layer, expand, is_subslice, parse, render
from .metrics import Metric, MetricAccumulator, MetricName
from .schema import (EncodedDataset, FeatureSchema, PredictionSet, RawDataset, encode, infer_schema,
                     load_dataset, load_predictions)
from .search import SearchConfig, SearchReport, Strategy, maximal_filter, run_search
from .stats import SliceStat, WantedDirection, classify, p_value, t_statistic

__version__ = "0.1.0"
