"""Run files: a flat INI with one section per concern.

Example::

    [synth]
    seed = 7
    days = 10

    [grid]
    reduced = group=0,2,8; w=48,96; p<=1; d=1; q<=1

    [selector.g13]
    mode = group13
    lambda = 0.9
    c1 = 0.5
    c2 = 0.75

    [test.long-window]
    selector = g13
    h1 = w=96
    h0 = all
    period = 1d

Everything is validated by :meth:`RunConfig.validate` before any stage runs.
"""

from __future__ import annotations

import configparser
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import date
from pathlib import Path

from . import config as _cfg
from .adaptive import SelectorConfig
from .common import AdaptcastError, ConfigError, sha256_text
from .hypotest import ClassQuery
from .market_data import SynthParams
from .model_zoo import ModelSpec, enumerate_models
from .predicates import PredicateParseError, parse_predicate

logger = logging.getLogger(__name__)

SESSION_SAMPLES_PER_DAY = _cfg.ELIGIBLE_PER_SESSION * len(_cfg.SESSIONS)

__all__ = ["RunConfig", "TestQueryConfig", "load_run_config", "parse_run_config", "parse_period"]


@dataclass(frozen=True, slots=True)
class TestQueryConfig:
    __test__ = False

    name: str
    selector: str
    h1: str
    h0: str = "all"
    period: int = 5 * SESSION_SAMPLES_PER_DAY


@dataclass(slots=True)
class RunConfig:
    input: Path | None = None
    cumulative_volume: bool = False
    seed: int = 0
    days: int = 10
    synth: SynthParams = field(default_factory=SynthParams)
    groups: tuple[int, ...] | None = None
    windows: tuple[int, ...] | None = None
    reduced: str | None = None
    adf_windows: tuple[int, ...] = _cfg.ADF_WINDOWS
    d_max: int = 2
    selectors: list[SelectorConfig] = field(default_factory=list)
    top_k: int = 10
    signals: tuple[str, ...] = ("oib_mean", "ofi_mean")
    tests: list[TestQueryConfig] = field(default_factory=list)
    out_dir: Path = _cfg.DEFAULT_OUT_DIR

    def grid(self) -> list[ModelSpec]:
        specs = enumerate_models(self.groups, self.windows)
        if self.reduced:
            specs = parse_predicate(self.reduced).filter(specs)
        return specs

    def selector(self, name: str) -> SelectorConfig:
        for sel in self.selectors:
            if sel.name == name:
                return sel
        raise ConfigError(f"unknown selector '{name}'")

    def validate(self) -> None:
        """Raise :class:`ConfigError` for anything that would fail a later stage."""
        if self.input is not None and not self.input.exists():
            raise ConfigError(f"input file not found: {self.input}")
        if self.days < 1:
            raise ConfigError("[synth] days must be at least 1")
        try:
            specs = self.grid()
        except PredicateParseError as exc:
            raise ConfigError(f"[grid] reduced: {exc}") from exc
        if not specs:
            raise ConfigError("model grid is empty")
        if self.d_max not in (0, 1, 2):
            raise ConfigError("[adf] d_max must be 0, 1 or 2")
        if any(w < _cfg.ADF_MIN_LENGTH for w in self.adf_windows):
            raise ConfigError(f"[adf] windows must be at least {_cfg.ADF_MIN_LENGTH}")
        names = [s.name for s in self.selectors]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate selector names")
        bad = [s for s in self.signals if s not in ("oib_mean", "ofi_mean")]
        if bad:
            raise ConfigError(f"[evaluation] unknown signal {bad[0]!r}")
        if self.top_k < 1:
            raise ConfigError("[evaluation] top_k must be positive")

        for test in self.tests:
            if test.selector not in names:
                raise ConfigError(f"[test.{test.name}] unknown selector '{test.selector}'")
            if test.period < 1:
                raise ConfigError(f"[test.{test.name}] period must be positive")
            try:
                ClassQuery.from_predicates(test.h1, test.h0, specs)
            except AdaptcastError as exc:
                raise ConfigError(f"[test.{test.name}] {exc}") from exc
        logger.debug("Run config valid: %d models, %d selectors, %d tests", len(specs), len(names), len(self.tests))

    def digest(self) -> str:
        """Content hash of everything that affects results (not the output directory)."""
        data = asdict(self)
        data.pop("out_dir")
        return sha256_text(json.dumps(data, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_period(text: str) -> int:
    """Selection count of a test period: a plain integer or ``<n>d`` trading days."""
    raw = text.strip().lower()
    try:
        if raw.endswith("d"):
            return int(raw[:-1]) * SESSION_SAMPLES_PER_DAY
        return int(raw)
    except ValueError:
        raise ConfigError(f"invalid period {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _optional_float(section: configparser.SectionProxy, key: str) -> float | None:
    return section.getfloat(key) if key in section else None


def _synth_params(section: configparser.SectionProxy) -> SynthParams:
    kwargs: dict[str, object] = {}
    for f in fields(SynthParams):
        if f.name not in section:
            continue
        raw = section[f.name]
        if f.name == "start":
            kwargs[f.name] = date.fromisoformat(raw)
        elif f.name == "ticks_per_bracket":
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = float(raw)
    return SynthParams(**kwargs)


def _selector(name: str, section: configparser.SectionProxy) -> SelectorConfig:
    mode = section.get("mode", "group13")
    default_type = "0" if mode == "group13" else "1"
    warmup = section.getint("warmup") if "warmup" in section else None
    return SelectorConfig(
        name=name,
        mode=mode,
        penalty_type=int(section.get("type", default_type)),
        lam=section.getfloat("lambda", 1.0),
        c1=section.getfloat("c1", 0.25),
        c2=section.getfloat("c2", 0.75),
        c3_frac=_optional_float(section, "c3_frac"),
        c4_frac=_optional_float(section, "c4_frac"),
        c5_frac=_optional_float(section, "c5_frac"),
        loss_window=section.getint("loss_window", _cfg.LOSS_WINDOW),
        filter_band=section.getfloat("filter_band", _cfg.FILTER_BAND),
        warmup=warmup,
    )


def parse_run_config(text: str, base_dir: Path | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable run file: {exc}") from exc

    cfg = RunConfig()
    try:
        if parser.has_section("data"):
            data = parser["data"]
            if "input" in data:
                path = Path(data["input"])
                cfg.input = path if path.is_absolute() or base_dir is None else base_dir / path
            cfg.cumulative_volume = data.getboolean("cumulative_volume", False)
        if parser.has_section("synth"):
            synth = parser["synth"]
            cfg.seed = synth.getint("seed", 0)
            cfg.days = synth.getint("days", 10)
            cfg.synth = _synth_params(synth)
        if parser.has_section("grid"):
            grid = parser["grid"]
            cfg.groups = _ints(grid["groups"]) if "groups" in grid else None
            cfg.windows = _ints(grid["windows"]) if "windows" in grid else None
            cfg.reduced = grid.get("reduced") or None
        if parser.has_section("adf"):
            adf = parser["adf"]
            cfg.adf_windows = _ints(adf.get("windows", ",".join(map(str, _cfg.ADF_WINDOWS))))
            cfg.d_max = adf.getint("d_max", 2)
        if parser.has_section("evaluation"):
            ev = parser["evaluation"]
            cfg.top_k = ev.getint("top_k", 10)
            if "signals" in ev:
                cfg.signals = tuple(s.strip() for s in ev["signals"].split(",") if s.strip())
        if parser.has_section("output") and "dir" in parser["output"]:
            cfg.out_dir = Path(parser["output"]["dir"])
        for name in parser.sections():
            if name.startswith("selector."):
                cfg.selectors.append(_selector(name.split(".", 1)[1], parser[name]))
            elif name.startswith("test."):
                sec = parser[name]
                if "h1" not in sec or "selector" not in sec:
                    raise ConfigError(f"[{name}] needs h1 and selector")
                cfg.tests.append(
                    TestQueryConfig(
                        name=name.split(".", 1)[1],
                        selector=sec["selector"],
                        h1=sec["h1"],
                        h0=sec.get("h0", "all"),
                        period=parse_period(sec.get("period", "5d")),
                    )
                )
    except ValueError as exc:
        raise ConfigError(f"invalid value in run file: {exc}") from exc
    return cfg


def load_run_config(path: Path) -> RunConfig:
    if not path.exists():
        raise ConfigError(f"run file not found: {path}")
    return parse_run_config(path.read_text(), base_dir=path.parent)
