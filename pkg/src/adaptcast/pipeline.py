"""Stage orchestration and artifact layout for a run directory.

Each stage reads only files written by earlier stages (or the raw input) and
records what it writes through the manifest router, so any single stage can
be re-run against an existing output directory.
"""

from __future__ import annotations

import contextlib
import logging
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np
import pandas as pd

from . import config as _cfg
from .adaptive import SELECTION_COLUMNS, decay_profile, run_selector, selections_frame, selections_from_frame
from .codes import model_code
from .common import PARTIAL_MARKER, StageError, ValidationError, read_csv, write_csv
from .evaluation import (
    CUM_PL_COLUMNS,
    REPORT_COLUMNS,
    PerfReport,
    baseline_report,
    cum_pl_frame,
    error_summary,
    evaluate_forecasts,
    rank_models,
    reports_frame,
    signal_report,
)
from .events import Category, Event
from .features import FEATURE_COLUMNS, compute_features, describe_brackets, features_frame
from .hypotest import TEST_COLUMNS, ClassQuery, results_frame, rolling_tests
from .market_data import BracketSeries, bracketize, gap_stats, parse_ticks, synth_ticks, write_ticks
from .model_zoo import FORECAST_COLUMNS, ForecastTable, run_fixed_grid
from .router import ManifestRouter
from .runconfig import RunConfig
from .stationarity import SCAN_COLUMNS, RollingAdfScan, nonstationary_times, rolling_adf

logger = logging.getLogger(__name__)

TICKS = "ticks.csv"
BRACKETS = "brackets.csv"
GAP_STATS = "gap_stats.csv"
FEATURES = "features.csv"
BRACKET_SUMMARY = "bracket_summary.csv"
ADF_SCAN = "adf_scan.csv"
FORECASTS = "forecasts.csv"
DECAY_PROFILE = "decay_profile.csv"
REPORT = "report.csv"
RANKING = "ranking.csv"
CUM_PL = "cum_pl.csv"
SIGNAL_REPORT = "signal_report.csv"
NONSTATIONARY_ERRORS = "nonstationary_errors.csv"

PLOT_KINDS = ("cumulative-pl", "adf-scan", "selection-histogram", "bf-series")
FACETS = ("w", "variables", "pdq", "method")
PLOT_COLUMNS = ("series", "x", "y")

__all__ = ["Pipeline", "emit_plotdata", "PLOT_KINDS", "FACETS"]


def selections_name(selector: str) -> str:
    return f"selections_{selector}.csv"


def tests_name(test: str) -> str:
    return f"tests_{test}.csv"


class Pipeline:
    """Runs stages of one configuration against one output directory."""

    def __init__(self, cfg: RunConfig, out_dir: Path | None = None, threads: int = _cfg.DEFAULT_THREADS) -> None:
        self.cfg = cfg
        self.out_dir = out_dir or cfg.out_dir
        self.threads = threads
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.router = ManifestRouter.load(self.out_dir)
        self.router.config_digest = cfg.digest()
        self._series: BracketSeries | None = None

    @property
    def source_stage(self) -> str:
        return "ingest" if self.cfg.input is not None else "synth"

    @property
    def stages(self) -> tuple[str, ...]:
        return (self.source_stage, "features", "adf", "grid", "select", "report", "test")

    # ------------------------------------------------------------------
    # Public entry points
    # ------------------------------------------------------------------
    def run(self, stages: Sequence[str] | None = None) -> dict:
        for name in stages or self.stages:
            self.run_stage(name)
        marker = self.out_dir / PARTIAL_MARKER
        if stages is None and marker.exists():
            marker.unlink()
        return self.router.manifest()

    def run_stage(self, name: str) -> None:
        handlers: dict[str, Callable[[], None]] = {
            "synth": self._stage_source,
            "ingest": self._stage_source,
            "features": self._stage_features,
            "adf": self._stage_adf,
            "grid": self._stage_grid,
            "select": self._stage_select,
            "report": self._stage_report,
            "test": self._stage_test,
        }
        if name not in handlers:
            raise ValidationError(f"unknown stage '{name}'")
        with self._stage(name):
            handlers[name]()

    # ------------------------------------------------------------------
    # Plumbing
    # ------------------------------------------------------------------
    @contextlib.contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        marker = self.out_dir / PARTIAL_MARKER
        self.router(Event(Category.STAGE, "start", {"stage": name}))
        try:
            yield
        except Exception as exc:
            self.router(Event(Category.STAGE, "failed", {"stage": name, "error": str(exc)}))
            marker.write_text(f"{name}\n")
            self.router.write()
            raise StageError(name, exc) from exc
        self.router(Event(Category.STAGE, "done", {"stage": name}))
        if marker.exists() and marker.read_text().strip() == name:
            marker.unlink()
        self.router.write()

    def _write(self, frame: pd.DataFrame, name: str, columns: Sequence[str] | None = None) -> Path:
        path = write_csv(frame, self.out_dir / name, columns)
        self.router(Event(Category.ARTIFACT, "written", {"path": str(path)}))
        return path

    def _warn(self, kind: str, message: str, **extra: object) -> None:
        self.router(Event(Category.WARNING, kind, {"message": message, **extra}))

    def _read(self, name: str, required: Sequence[str] = ()) -> pd.DataFrame:
        return read_csv(self.out_dir / name, required)

    def series(self) -> BracketSeries:
        if self._series is None:
            brackets = self._read(BRACKETS, ("date", "label", "y", "tick_count", "gap"))
            feats = self._read(FEATURES, FEATURE_COLUMNS)
            if len(feats) != len(brackets):
                raise ValidationError("features.csv and brackets.csv are not aligned")
            matrix = feats.loc[:, list(_cfg.FEATURE_NAMES)].to_numpy(dtype=float)
            self._series = BracketSeries.from_frame(brackets, matrix)
        return self._series

    def forecast_table(self) -> ForecastTable:
        return ForecastTable.from_frame(self._read(FORECASTS, FORECAST_COLUMNS), self.series())

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------
    def _stage_source(self) -> None:
        cfg = self.cfg
        if cfg.input is not None:
            batch = parse_ticks(cfg.input, cumulative_volume=cfg.cumulative_volume)
            ticks = batch.ticks
            if batch.dropped:
                self._warn("ticks-dropped", f"{batch.dropped} ticks outside session hours dropped", count=batch.dropped)
        else:
            ticks = synth_ticks(cfg.seed, cfg.days, cfg.synth)
        series = bracketize(ticks)
        write_ticks(ticks, self.out_dir / TICKS)
        self.router(Event(Category.ARTIFACT, "written", {"path": str(self.out_dir / TICKS)}))
        self._write(series.to_frame(), BRACKETS)
        if series.session_count() >= 2:
            self._write(gap_stats(series).rename_axis("kind").reset_index(), GAP_STATS)
        self._series = None

    def _stage_features(self) -> None:
        batch = parse_ticks(self.out_dir / TICKS)
        brackets = BracketSeries.from_frame(self._read(BRACKETS))
        series = compute_features(batch.ticks, brackets)
        self._write(features_frame(series), FEATURES, FEATURE_COLUMNS)
        self._write(describe_brackets(series).rename_axis("stat").reset_index(), BRACKET_SUMMARY)
        self._series = None

    def _stage_adf(self) -> None:
        y = BracketSeries.from_frame(self._read(BRACKETS)).y
        frames = []
        for w in self.cfg.adf_windows:
            scan = rolling_adf(y, w, d_max=self.cfg.d_max)
            if scan.off_grid:
                self._warn("adf-off-grid", f"rolling ADF window {w} is outside {_cfg.ADF_WINDOWS}", w=w)
            frames.append(scan.to_frame())
        self._write(pd.concat(frames, ignore_index=True), ADF_SCAN, SCAN_COLUMNS)

    def _stage_grid(self) -> None:
        specs = self.cfg.grid()
        table = run_fixed_grid(self.series(), specs, threads=self.threads)
        failed = int((table.status != "ok").sum())
        if failed:
            self._warn("fit-failures", f"{failed} grid cells without a forecast", count=failed)
        self._write(table.to_frame(), FORECASTS, FORECAST_COLUMNS)

    def _stage_select(self) -> None:
        table = self.forecast_table()
        for sel in self.cfg.selectors:
            records = run_selector(table, sel)
            fallbacks = sum(r.fallback for r in records)
            if fallbacks:
                self._warn("fallback", f"selector '{sel.name}' fell back to y_t {fallbacks} times", count=fallbacks)
            self._write(selections_frame(records), selections_name(sel.name), SELECTION_COLUMNS)
        lambdas = sorted({s.lam for s in self.cfg.selectors} | set(_cfg.LAMBDA_GRID))
        self._write(decay_profile(lambdas), DECAY_PROFILE)

    def _learnt_reports(self, series: BracketSeries) -> list[PerfReport]:
        reports = []
        for sel in self.cfg.selectors:
            frame = self._read(selections_name(sel.name), SELECTION_COLUMNS)
            reports.append(
                evaluate_forecasts(
                    sel.code, frame["t"].to_numpy(dtype=int), frame["forecast"].to_numpy(dtype=float), series
                )
            )
        return reports

    def _stage_report(self) -> None:
        series = self.series()
        table = self.forecast_table()
        fixed = [
            evaluate_forecasts(model_code(spec), table.times, table.forecasts[i], series)
            for i, spec in enumerate(table.specs)
        ]
        learnt = self._learnt_reports(series)
        baseline = baseline_report(series, table.times)
        self._write(reports_frame([baseline, *learnt, *fixed]), REPORT, REPORT_COLUMNS)

        k = self.cfg.top_k
        ranking = []
        for by in ("mse", "sr"):
            for rank, rep in enumerate(rank_models([*learnt, *fixed], by=by, k=k), start=1):
                ranking.append({"by": by, "rank": rank, "model_code": rep.model_code, "mse": rep.mse, "sr": rep.sr})
        self._write(pd.DataFrame(ranking, columns=["by", "rank", "model_code", "mse", "sr"]), RANKING)

        top_fixed = rank_models(fixed, by="mse", k=k)
        self._write(cum_pl_frame([baseline, *learnt, *top_fixed]), CUM_PL, CUM_PL_COLUMNS)

        signals = [signal_report(series, table.times, name) for name in self.cfg.signals]
        self._write(reports_frame([baseline, *signals]), SIGNAL_REPORT, REPORT_COLUMNS)

        if 12 in self.cfg.adf_windows:
            scan = RollingAdfScan.from_frame(self._read(ADF_SCAN, SCAN_COLUMNS), 12)
            hard = nonstationary_times(scan)
            codes = [model_code(s) for s in table.specs]
            errors = table.errors
            for sel, rep in zip(self.cfg.selectors, learnt):
                frame = self._read(selections_name(sel.name), SELECTION_COLUMNS)
                row = np.full(table.times.size, np.nan)
                col = {int(t): j for j, t in enumerate(table.times)}
                for t, f in zip(frame["t"], frame["forecast"]):
                    j = col.get(int(t))
                    if j is not None:
                        row[j] = table.realized[j] - f
                codes.append(rep.model_code)
                errors = np.vstack([errors, row])
            self._write(error_summary(codes, errors, table.times, hard), NONSTATIONARY_ERRORS)

    def _stage_test(self) -> None:
        universe = self.cfg.grid()
        for test in self.cfg.tests:
            sel = self.cfg.selector(test.selector)
            records = selections_from_frame(self._read(selections_name(sel.name), SELECTION_COLUMNS))
            query = ClassQuery.from_predicates(test.h1, test.h0, universe)
            results = rolling_tests(query, records, test.period, dependent=sel.mode == "group14")
            if not results:
                self._warn("no-test-period", f"test '{test.name}' has no full period of {test.period} selections")
            self._write(results_frame(results), tests_name(test.name), TEST_COLUMNS)


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------


def _facet_value(row: pd.Series, facet: str) -> str:
    if pd.isna(row["group"]):
        return "fallback"
    group = int(row["group"])
    if facet == "w":
        return str(int(row["w"]))
    if facet == "variables":
        names = [_cfg.FEATURE_NAMES[i] for i in _cfg.GROUP_FEATURES[group]]
        return "+".join(names) if names else "none"
    if facet == "pdq":
        return f"{int(row['p'])}{int(row['d'])}{int(row['q'])}"
    return "univariate" if group in _cfg.UNIVARIATE_GROUPS else "multivariate"


def emit_plotdata(artifact: Path, kind: str, facet: str = "w") -> pd.DataFrame:
    """Long ``series,x,y`` frame for one stage artifact."""
    if kind not in PLOT_KINDS:
        raise ValidationError(f"unknown plot kind '{kind}', expected one of {PLOT_KINDS}")
    if kind == "cumulative-pl":
        frame = read_csv(artifact, CUM_PL_COLUMNS)
        out = pd.DataFrame({"series": frame["model_code"], "x": frame["date"], "y": frame["cum_pl"]})
    elif kind == "adf-scan":
        frame = read_csv(artifact, SCAN_COLUMNS)
        out = pd.DataFrame(
            {
                "series": [f"w={w},d={d}" for w, d in zip(frame["w"], frame["d"])],
                "x": frame["t"],
                "y": frame["p_value"],
            }
        )
    elif kind == "selection-histogram":
        if facet not in FACETS:
            raise ValidationError(f"unknown facet '{facet}', expected one of {FACETS}")
        frame = read_csv(artifact, SELECTION_COLUMNS)
        values = frame.apply(_facet_value, axis=1, facet=facet) if len(frame) else pd.Series([], dtype=str)
        counts = values.value_counts().sort_index()
        out = pd.DataFrame({"series": facet, "x": counts.index.astype(str), "y": counts.to_numpy()})
    else:
        frame = read_csv(artifact, TEST_COLUMNS)
        out = pd.concat(
            [
                pd.DataFrame({"series": "bayes_factor", "x": frame["period_start"], "y": frame["bayes_factor"]}),
                pd.DataFrame({"series": "p_value", "x": frame["period_start"], "y": frame["p_value"]}),
            ],
            ignore_index=True,
        )
    return out.loc[:, list(PLOT_COLUMNS)].reset_index(drop=True)
