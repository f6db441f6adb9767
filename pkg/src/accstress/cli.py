"""Command-line pipeline: synth, extract, observe, explore, evaluate.

Stages talk only through files in the output directory, so any stage can
be re-run on its own.  Every command writes ``<command>.log`` next to its
outputs (``evaluate_<scheme>_<classifier>.log`` for evaluate), mirroring
all warnings.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .evaluation import SCHEMES, EvalConfig, EvalReport, run_scheme
from .exploratory import WEEKDAYS, screen_frame, screen_observations, screen_windows, weekday_stress_summary
from .features import THREE_AXES_SOURCES, FeatureTable, read_feature_file, stream_features, write_feature_file
from .ingest import IngestError, build_sessions, parse_accel_file, parse_survey_file
from .models import CLASSIFIER_KINDS
from .observations import (
    DroppedSurvey,
    build_observations,
    class_counts,
    format_class_counts,
    read_observation_file,
    write_observation_file,
)
from .synth import CohortSpec, mirrored_archetypes, write_cohort

logger = logging.getLogger("accstress")

COMMANDS = ("synth", "extract", "observe", "explore", "evaluate")
SCREEN_LEVELS = ("aggregates", "windows")
# fields that locate files rather than change results; left out of report provenance
PATH_FIELDS = ("accel", "surveys", "features", "observations", "out")


@dataclass
class RunConfig:
    accel: str | None = None
    surveys: str | None = None
    features: str | None = None
    observations: str | None = None
    out: str = "out"
    window_length: int = 128
    rate_hz: float = 5.0
    gap_tolerance_ms: int = 1000
    lookback_hours: float = 2.0
    min_windows: int = 1
    utc_offset_min: int = 60
    three_axes: str = "pooled"
    classifier: str = "naive-bayes"
    scheme: str = "user-specific"
    max_features: int = 20
    patience: int = 1
    min_delta: float = 0.0
    folds: int = 5
    p: float = 50.0
    k_max: int = 5
    restarts: int = 10
    alpha: float = 0.01
    screen_level: str = "aggregates"  # or "windows"
    workers: int = 1
    seed: int = 0
    synth: dict = field(default_factory=dict)

    def validate(self) -> None:
        checks = [
            (self.window_length >= 8, "window_length must be >= 8"),
            (self.rate_hz > 0, "rate_hz must be positive"),
            (self.gap_tolerance_ms > 0, "gap_tolerance_ms must be positive"),
            (0 < self.lookback_hours <= 24, "lookback_hours must be in (0, 24]"),
            (self.min_windows >= 1, "min_windows must be >= 1"),
            (-14 * 60 <= self.utc_offset_min <= 14 * 60, "utc_offset_min out of range"),
            (self.three_axes in THREE_AXES_SOURCES, f"three_axes must be one of {THREE_AXES_SOURCES}"),
            (self.classifier in CLASSIFIER_KINDS, f"classifier must be one of {CLASSIFIER_KINDS}"),
            (self.scheme in SCHEMES, f"scheme must be one of {SCHEMES}"),
            (self.max_features >= 1 and self.patience >= 1, "max_features and patience must be >= 1"),
            (self.min_delta >= 0, "min_delta must be >= 0"),
            (self.folds >= 2, "folds must be >= 2"),
            (0 < self.p < 100, "p must be in (0, 100)"),
            (self.k_max >= 2 and self.restarts >= 1, "k_max must be >= 2 and restarts >= 1"),
            (0 < self.alpha < 1, "alpha must be in (0, 1)"),
            (self.screen_level in SCREEN_LEVELS, f"screen_level must be one of {SCREEN_LEVELS}"),
            (self.workers >= 1, "workers must be >= 1"),
            (isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid config: {msg}")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def path(self, name: str, default: str) -> Path:
        value = getattr(self, name)
        return Path(value) if value else self.out_dir / default

    def provenance(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in PATH_FIELDS}
        d["version"] = __version__
        return d

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            classifier=self.classifier,
            folds=self.folds,
            max_features=self.max_features,
            patience=self.patience,
            min_delta=self.min_delta,
            p=self.p,
            k_max=self.k_max,
            restarts=self.restarts,
            workers=self.workers,
        )

    def cohort_spec(self) -> CohortSpec:
        opts = dict(self.synth)
        n = int(opts.pop("users_per_archetype", 6))
        spec = CohortSpec.from_dict({**opts, "seed": self.seed, "rate_hz": self.rate_hz, "utc_offset_min": self.utc_offset_min})
        if "archetypes" not in opts:
            spec = dataclasses.replace(spec, archetypes=tuple((a, n) for a in mirrored_archetypes()))
        return spec


def load_config(path: str | None, overrides: dict) -> RunConfig:
    data = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"no such config file: {p}")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{p}: config must be a mapping")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {unknown}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**data)
    cfg.validate()
    return cfg


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set, frozenset)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")


# --- commands -------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> int:
    spec = cfg.cohort_spec()
    paths = write_cohort(spec, cfg.out_dir)
    _write_json({"config": cfg.provenance(), "cohort": spec.to_dict()}, cfg.out_dir / "synth_summary.json")
    print(f"wrote {spec.n_users} users x {spec.days} days to {cfg.out_dir}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def cmd_extract(cfg: RunConfig) -> int:
    accel_path = cfg.path("accel", "accel.csv")
    parsed = parse_accel_file(accel_path)
    surveys = []
    survey_path = cfg.path("surveys", "surveys.csv")
    if survey_path.exists():
        surveys = parse_survey_file(survey_path, utc_offset_min=cfg.utc_offset_min).surveys
    sessions = build_sessions(parsed.streams, surveys, cfg.rate_hz)
    tables, per_user = [], {}
    for user, session in sessions.items():
        table = stream_features(session.stream, cfg.rate_hz, cfg.window_length, cfg.gap_tolerance_ms, cfg.three_axes)
        tables.append(table)
        per_user[user] = {"samples": len(session.stream), "windows": len(table), "flags": list(session.flags)}
    table = FeatureTable.concat(tables)
    if len(table) == 0:
        logger.warning("%s: no windows extracted", accel_path)
    out = cfg.path("features", "features.csv")
    write_feature_file(table, out)
    summary = {
        "config": cfg.provenance(),
        "users": per_user,
        "windows": len(table),
        "samples": parsed.n_samples,
        "rejected_rows": [asdict(r) for r in parsed.rejected],
    }
    _write_json(summary, cfg.out_dir / "extract_summary.json")
    print(f"{len(table)} windows from {parsed.n_samples} samples ({len(parsed.rejected)} rows rejected) -> {out}")
    return 0


def cmd_observe(cfg: RunConfig) -> int:
    table = read_feature_file(cfg.path("features", "features.csv"))
    surveys = parse_survey_file(cfg.path("surveys", "surveys.csv"), utc_offset_min=cfg.utc_offset_min)
    dropped: list[DroppedSurvey] = []
    obs = build_observations(table, surveys.surveys, int(round(cfg.lookback_hours * 3600_000)), cfg.min_windows, dropped)
    if not obs:
        logger.warning("no observations built")
    for d in dropped:
        logger.warning("dropped survey %s@%d: %s", d.user_id, d.survey_ts, d.reason)
    out = cfg.path("observations", "observations.csv")
    write_observation_file(obs, out)
    counts = class_counts(obs)
    text = format_class_counts(counts)
    (cfg.out_dir / "class_counts.txt").write_text(text + "\n")
    _write_json(
        {"config": cfg.provenance(), "counts": counts, "dropped": [asdict(d) for d in dropped],
         "rejected_survey_rows": [asdict(r) for r in surveys.rejected]},
        cfg.out_dir / "observe_summary.json",
    )
    print(text)
    return 0


def cmd_explore(cfg: RunConfig) -> int:
    obs = read_observation_file(cfg.path("observations", "observations.csv"))
    surveys = parse_survey_file(cfg.path("surveys", "surveys.csv"), utc_offset_min=cfg.utc_offset_min).surveys
    if surveys:
        summary, flags = weekday_stress_summary(surveys, cfg.utc_offset_min)
    else:
        summary, flags = {}, ["no surveys"]
    for f in flags:
        logger.warning(f)
    rows = [(d, *summary[d]) if d in summary else (d, None, None, 0) for d in WEEKDAYS]
    pd.DataFrame(rows, columns=["weekday", "mean", "sem", "n"]).to_csv(
        cfg.out_dir / "weekday_summary.csv", index=False, lineterminator="\n", float_format="%.17g"
    )
    if cfg.screen_level == "windows":
        table = read_feature_file(cfg.path("features", "features.csv"))
        screens = screen_windows(table, surveys, int(round(cfg.lookback_hours * 3600_000)), cfg.alpha)
    else:
        screens = screen_observations(obs, cfg.alpha)
    frame = screen_frame(screens)
    frame.to_csv(cfg.out_dir / "screen.csv", index=False, lineterminator="\n", float_format="%.17g")
    lines = ["Weekday stress (mean, sem, n)"]
    lines += [f"  {d}: " + ("n/a" if m is None else f"{m:.3f} {s:.3f} {n}") for d, m, s, n in rows]
    lines.append(f"Per-user significant {cfg.screen_level} features (Bonferroni-corrected)")
    for s in screens:
        for f in s.flags:
            logger.warning("user %s: %s", s.user_id, f)
        sig = sum(1 for r in s.results if r.significant)
        lines.append(f"  {s.user_id}: {sig} significant of {len(s.results)} tests" + (f" [{', '.join(s.flags)}]" if s.flags else ""))
    text = "\n".join(lines) + "\n"
    (cfg.out_dir / "explore_report.txt").write_text(text)
    print(text, end="")
    return 0


def _fmt(v) -> str:
    return "n/a" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.3f}"


def format_report(report: EvalReport) -> str:
    """Per-class rows then scalar metric rows, pooled and macro-averaged."""
    m = report.pooled
    lines = [f"Scheme: {report.scheme}   Classifier: {report.classifier}   Seed: {report.seed}"]
    if m is None:
        lines.append("no predictions")
        return "\n".join(lines) + "\n"
    lines.append(f"{'':14s}{'Low':>8s}{'Medium':>8s}{'High':>8s}")
    for name, d in (("Sensitivity", m.sensitivity), ("Specificity", m.specificity), ("Precision", m.precision)):
        lines.append(f"{name:14s}" + "".join(f"{_fmt(d[k]):>8s}" for k in ("low", "medium", "high")))
    lines.append(f"{'':14s}{'pooled':>8s}{'macro':>8s}")
    for label, attr, key in (
        ("Accuracy", m.accuracy, "accuracy"),
        ("MAE", m.mae, "mae"),
        ("RMSE", m.rmse, "rmse"),
        ("Pearson", m.pearson, "pearson"),
        ("Spearman", m.spearman, "spearman"),
        ("ACC1", m.acc1, "acc1"),
    ):
        lines.append(f"{label:14s}{_fmt(attr):>8s}{_fmt(report.macro.get(key)):>8s}")
    lines.append(f"Predictions: {m.n}   Users: {len(report.per_user)}   Skipped: {len(report.skipped)}")
    for u, why in sorted(report.skipped.items()):
        lines.append(f"  skipped {u}: {why}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: RunConfig) -> int:
    obs = read_observation_file(cfg.path("observations", "observations.csv"))
    report = run_scheme(cfg.scheme, obs, cfg.seed, cfg.eval_config())
    out = cfg.out_dir
    stem = f"{cfg.scheme}_{cfg.classifier}"
    _write_json({"config": cfg.provenance(), **report.to_dict()}, out / f"report_{stem}.json")
    (out / f"report_{stem}.txt").write_text(format_report(report))
    pd.DataFrame(
        [asdict(r) for r in report.predictions], columns=["user_id", "survey_ts", "true", "predicted"]
    ).to_csv(out / f"predictions_{stem}.csv", index=False, lineterminator="\n")
    traces = [
        (u.name, r, name, acc)
        for u in report.units
        if u.trace is not None
        for r, name, acc in u.trace.rows()
    ]
    pd.DataFrame(traces, columns=["unit", "round", "feature_name", "accuracy"]).to_csv(
        out / f"selection_traces_{stem}.csv", index=False, lineterminator="\n", float_format="%.17g"
    )
    if cfg.scheme == "similar-users":
        rows = [
            (u.test_user, m["user_id"], m["cluster_id"], m["silhouette_width"], u.cluster["k"], m["user_id"] in u.similar_users)
            for u in report.units
            if u.cluster is not None
            for m in u.cluster["members"]
        ]
        pd.DataFrame(rows, columns=["test_user", "user_id", "cluster_id", "silhouette_width", "k", "selected"]).to_csv(
            out / f"clusters_{stem}.csv", index=False, lineterminator="\n", float_format="%.17g"
        )
    print(format_report(report), end="")
    return 0


HANDLERS = {"synth": cmd_synth, "extract": cmd_extract, "observe": cmd_observe, "explore": cmd_explore, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accstress", description="Accelerometer stress-level pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--scheme", choices=SCHEMES)
        p.add_argument("--classifier", choices=CLASSIFIER_KINDS)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--accel", help="accelerometer CSV (default <out>/accel.csv)")
        p.add_argument("--surveys", help="survey CSV (default <out>/surveys.csv)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: getattr(args, k) for k in ("seed", "scheme", "classifier", "workers", "out", "accel", "surveys")}
    try:
        cfg = load_config(args.config, overrides)
    except (OSError, ValueError, TypeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    # evaluate runs differ by scheme and classifier; keep one log per combination
    log_name = f"evaluate_{cfg.scheme}_{cfg.classifier}.log" if args.command == "evaluate" else f"{args.command}.log"
    handler = logging.FileHandler(cfg.out_dir / log_name, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.WARNING)
    root = logging.getLogger()
    root.addHandler(handler)
    root.addHandler(console)
    prev_level = root.level
    root.setLevel(logging.INFO)
    try:
        return HANDLERS[args.command](cfg)
    except (FileNotFoundError, IngestError, ValueError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    finally:
        root.removeHandler(handler)
        root.removeHandler(console)
        root.setLevel(prev_level)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
