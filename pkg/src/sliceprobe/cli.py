"""Command-line entry point: ingest, search, report."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, fields
from typing import List, Optional, Sequence

from .evaluator import DiffMode
from .lattice import render, search_space_size
from .metrics import Metric, MetricName
from .schema import IngestError, encode, infer_schema, load_dataset, load_predictions
from .search import SearchConfig, SearchReport, SliceResult, SliceSearch, Strategy
from .stats import WantedDirection

log = logging.getLogger("sliceprobe")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    data: Optional[str] = None
    label_column: str = "label"
    predictions: Optional[str] = None
    baseline_predictions: Optional[str] = None
    metric: str = "accuracy"
    threshold: float = 0.5
    auc_buckets: int = 128
    strategy: str = "iterative"
    max_cross_size: int = 3
    min_slice_size: int = 1
    alpha: float = 0.01
    replicates: int = 20
    top_j: int = 100
    num_bins: int = 10
    k_per_iter: Optional[float] = None
    iterations: int = 5
    direction: str = "lower"
    seed: int = 0
    workers: int = 1
    output: str = "slices.jsonl"
    verbose: bool = False
    progress: bool = False

    @property
    def mode(self) -> DiffMode:
        return DiffMode.VS_BASELINE if self.baseline_predictions else DiffMode.VS_OVERALL

    def validate(self) -> "RunConfig":
        def check(name, ok, msg):
            if not ok:
                raise ConfigError(name, msg)

        check("data", bool(self.data), "a dataset path is required")
        check("predictions", bool(self.predictions), "a predictions path is required")
        check("metric", self.metric in {m.value for m in MetricName},
              f"unknown metric {self.metric!r}")
        check("threshold", 0.0 < self.threshold < 1.0, "must be in (0, 1)")
        check("auc_buckets", self.auc_buckets >= 2, "must be >= 2")
        check("strategy", self.strategy in {s.value for s in Strategy},
              f"unknown strategy {self.strategy!r}")
        check("max_cross_size", self.max_cross_size >= 1, "must be >= 1")
        check("min_slice_size", self.min_slice_size >= 1, "must be >= 1")
        check("alpha", 0.0 < self.alpha < 1.0, "must be in (0, 1)")
        check("replicates", self.replicates >= 2, "must be >= 2")
        check("top_j", self.top_j >= 1, "must be >= 1")
        check("num_bins", self.num_bins >= 1, "must be >= 1")
        check("k_per_iter", self.k_per_iter is None or self.k_per_iter >= 1, "must be >= 1")
        check("iterations", self.iterations >= 1, "must be >= 1")
        check("direction", self.direction in {d.value for d in WantedDirection},
              f"unknown direction {self.direction!r}")
        check("workers", self.workers >= 1, "must be >= 1")
        return self

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            strategy=Strategy(self.strategy),
            max_cross_size=self.max_cross_size,
            min_slice_size=self.min_slice_size,
            alpha=self.alpha,
            replicates=self.replicates,
            k_per_iter=self.k_per_iter,
            iterations=self.iterations,
            seed=self.seed,
            mode=self.mode,
            metric=Metric(MetricName(self.metric), self.threshold, self.auc_buckets),
            direction=WantedDirection(self.direction),
            workers=self.workers,
        )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sliceprobe",
        description="Find data slices where a model's metric differs significantly.",
        argument_default=argparse.SUPPRESS,
    )
    p.add_argument("--config", help="JSON file with any of the options below (flags win)")
    p.add_argument("--data", help="delimited dataset with a header row")
    p.add_argument("--label-column")
    p.add_argument("--predictions", help="row_index,score file for the model under test")
    p.add_argument("--baseline-predictions", help="compare against this model instead of the overall slice")
    p.add_argument("--metric", choices=[m.value for m in MetricName])
    p.add_argument("--threshold", type=float, help="decision threshold for thresholded metrics")
    p.add_argument("--auc-buckets", type=int)
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--max-cross-size", type=int)
    p.add_argument("--min-slice-size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--replicates", type=int, help="Poisson bootstrap replicates")
    p.add_argument("--top-j", type=int, help="categories kept per feature before OTHER")
    p.add_argument("--num-bins", type=int, help="quantile bins per numeric feature")
    p.add_argument("--k-per-iter", type=float, help="priority: target nonempty candidates per iteration")
    p.add_argument("--iterations", type=int, help="priority: number of iterations")
    p.add_argument("--direction", choices=[d.value for d in WantedDirection])
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output", help="line-delimited JSON report path")
    p.add_argument("--verbose", action="store_true", help="report every evaluated slice")
    p.add_argument("--progress", action="store_true", help="per-iteration progress on stderr")
    return p


def parse_config(argv: Optional[Sequence[str]] = None) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    values = {}
    known = {f.name for f in fields(RunConfig)}
    path = args.pop("config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from None
        for key, value in file_values.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(key, "unknown option")
            values[key] = value
    values.update(args)
    try:
        return RunConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


def _num(x) -> Optional[float]:
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.9g}")


def report_record(res: SliceResult, schema, model_id: str, reference_id: str) -> dict:
    ev, st = res.evaluation, res.stat
    return {
        "slice": render(schema, res.predicate),
        "cross_size": len(res.predicate),
        "size": ev.size,
        "metrics": {model_id: _num(ev.metric), reference_id: _num(ev.reference_metric)},
        "delta": _num(ev.point_delta),
        "replicate_mean": _num(st.mean),
        "t": _num(st.t),
        "degenerate": st.degenerate,
        "p_value": _num(st.p_value),
        "usable_replicates": st.usable_replicates,
        "direction": st.direction.value,
        "significant": st.significant,
        "testable": st.testable,
        "iteration": res.iteration,
    }


def _records(report: SearchReport, schema, model_id, reference_id, verbose: bool):
    if verbose:
        results = sorted(report.evaluated.values(),
                         key=lambda r: (r.stat.p_value, -r.size, len(r.predicate), r.predicate))
    else:
        results = report.significant
    return [report_record(r, schema, model_id, reference_id) for r in results]


def write_report(path, records: List[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _summary(report: SearchReport, cfg: RunConfig, schema, k, out=None):
    out = out or sys.stdout
    print(f"strategy:              {report.strategy.value}", file=out)
    print(f"search space (L={cfg.max_cross_size}):   {search_space_size(schema, cfg.max_cross_size)}", file=out)
    if report.strategy is Strategy.PRIORITY:
        print(f"target per iteration:  {k:g}", file=out)
    print(f"significant slices:    {len(report.significant)}", file=out)
    print(f"candidate slices:      {report.candidates_evaluated}", file=out)
    print(f"cpu seconds:           {report.cpu_seconds:.3f}", file=out)
    print(f"wall seconds:          {report.wall_seconds:.3f}", file=out)
    overall = report.overall.metric
    print(f"overall {cfg.metric}:".ljust(23) + (f"{overall:.6g}" if overall is not None else "undefined"),
          file=out)
    for res in report.significant[:20]:
        st = res.stat
        print(f"  p={st.p_value:.3g}  delta={res.evaluation.point_delta:+.4f}  n={res.size:<6d} "
              f"{render(schema, res.predicate)}", file=out)
    if len(report.significant) > 20:
        print(f"  ... {len(report.significant) - 20} more in {cfg.output}", file=out)


def run(cfg: RunConfig) -> int:
    try:
        raw = load_dataset(cfg.data, cfg.label_column)
        preds = [load_predictions(cfg.predictions, raw.num_rows)]
        if cfg.baseline_predictions:
            preds.append(load_predictions(cfg.baseline_predictions, raw.num_rows))
            if preds[1].model_id == preds[0].model_id:
                preds[1].model_id += "_baseline"
        schema = infer_schema(raw, cfg.top_j, cfg.num_bins)
        data = encode(raw, preds, schema)
        scfg = cfg.search_config()

        def progress(rec):
            print(json.dumps(asdict(rec)), file=sys.stderr, flush=True)

        report = SliceSearch(scfg, data, progress if cfg.progress else None).run()
        model_id = preds[0].model_id
        reference_id = preds[1].model_id if len(preds) > 1 else "OVERALL"
        write_report(cfg.output, _records(report, schema, model_id, reference_id, cfg.verbose))
    except (IngestError, ValueError) as exc:
        print(f"sliceprobe: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"sliceprobe: I/O error: {exc}", file=sys.stderr)
        return 1
    _summary(report, cfg, schema, scfg.resolved_k(schema))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"sliceprobe: config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
