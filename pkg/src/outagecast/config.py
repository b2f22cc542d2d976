"""Run configuration: one TOML file, every tunable constant defaulted."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .features import DEFAULT_LAGS, LagSpec
from .optimize import METHODS, OptimOptions
from .pipeline import CORRELATION_CEILING, VARIANCE_FLOOR, ForecastConfig
from .quality import DEFAULT_NAME_PATTERNS
from .sarimax import ModelOrder
from .selection import SelectionConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    output: str = "out"
    schema: dict[str, str] = field(default_factory=dict)
    horizons: tuple[int, ...] = (24, 48)
    seed: int = 0
    jobs: int = 1
    name_patterns: tuple[str, ...] = DEFAULT_NAME_PATTERNS
    repair_timestamps: tuple[str, ...] | None = None
    selection: SelectionConfig = SelectionConfig()
    selection_report: str | None = None
    order: ModelOrder = ModelOrder()
    optimizer: OptimOptions = OptimOptions()
    methods: tuple[str, ...] = METHODS
    intercept: bool = True
    naive_window: int | None = None
    aggregate: bool = True
    variance_floor: float = VARIANCE_FLOOR
    correlation_ceiling: float = CORRELATION_CEILING
    lags: tuple[LagSpec, ...] = DEFAULT_LAGS
    top_weather: tuple[str, ...] | None = None
    cutoffs: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.horizons or any(int(h) < 1 for h in self.horizons):
            raise ConfigError("horizons must be a non-empty list of positive integers")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for name in ("variance_floor", "correlation_ceiling"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.selection.prune_threshold <= 1:
            raise ConfigError("selection prune_threshold must lie in (0, 1]")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigError(f"unknown optimizer method(s): {unknown}")

    def forecast_config(self) -> ForecastConfig:
        return ForecastConfig(
            order=self.order,
            opts=self.optimizer,
            lags=self.lags,
            top_weather=self.top_weather,
            intercept=self.intercept,
            naive_window=self.naive_window,
            aggregate=self.aggregate,
            var_floor=self.variance_floor,
            corr_ceiling=self.correlation_ceiling,
            methods=self.methods,
        )

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "seed" in kw:
            kw["selection"] = replace(kw.get("selection", self.selection), seed=kw["seed"])
        return replace(self, **kw)


def _section(data: dict, name: str) -> dict:
    value = data.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    base_dir = base_dir or Path(".")
    resolve = lambda p: None if not p else str((base_dir / p) if not Path(p).is_absolute() else p)  # noqa: E731
    cleaning = _section(data, "cleaning")
    sel = _section(data, "selection")
    model = _section(data, "model")
    opt = _section(data, "optimizer")
    pre = _section(data, "preprocess")
    bt = _section(data, "backtest")
    kw: dict = {}
    try:
        if "input" in data:
            kw["input"] = resolve(data["input"])
        if "output" in data:
            kw["output"] = resolve(data["output"])
        if "schema" in data:
            kw["schema"] = dict(_section(data, "schema"))
        for key in ("seed", "jobs"):
            if key in data:
                kw[key] = int(data[key])
        if "horizons" in data:
            kw["horizons"] = tuple(int(h) for h in data["horizons"])
        if "name_patterns" in cleaning:
            kw["name_patterns"] = tuple(cleaning["name_patterns"])
        if cleaning.get("repair_timestamps"):
            kw["repair_timestamps"] = tuple(cleaning["repair_timestamps"])
        seed = int(data.get("seed", 0))
        kw["selection"] = SelectionConfig(
            k=int(sel.get("k", 40)),
            pca_components=int(sel.get("pca_components", 20)),
            pca_picks=int(sel.get("pca_picks", 3)),
            pca_per_pc=int(sel.get("pca_per_pc", 1)),
            prune_threshold=float(sel.get("prune_threshold", 0.95)),
            seed=int(sel.get("seed", seed)),
            kmeans_restarts=int(sel.get("kmeans_restarts", 10)),
            use_pca=bool(sel.get("use_pca", True)),
        )
        if sel.get("report"):
            kw["selection_report"] = resolve(sel["report"])
        if "top_weather" in sel:
            kw["top_weather"] = tuple(sel["top_weather"])
        p, d, q = model.get("order", (1, 0, 1))
        kw["order"] = ModelOrder(int(p), int(d), int(q), tuple(model.get("seasonal", (0, 0, 0, 0))))
        if "intercept" in model:
            kw["intercept"] = bool(model["intercept"])
        if "aggregate" in model:
            kw["aggregate"] = bool(model["aggregate"])
        if model.get("naive_window"):
            kw["naive_window"] = int(model["naive_window"])
        kw["optimizer"] = OptimOptions(
            max_iter=int(opt.get("max_iter", 100)),
            tol=float(opt.get("tol", 1e-5)),
            gradient_step=float(opt.get("gradient_step", 1e-6)),
        )
        if "methods" in opt:
            kw["methods"] = tuple(opt["methods"])
        if "variance_floor" in pre:
            kw["variance_floor"] = float(pre["variance_floor"])
        if "correlation_ceiling" in pre:
            kw["correlation_ceiling"] = float(pre["correlation_ceiling"])
        if "lags" in data:
            kw["lags"] = tuple(
                LagSpec(e["source"], tuple(e["lags"]), e.get("feature")) for e in data["lags"]
            )
        if "cutoffs" in bt:
            kw["cutoffs"] = tuple(str(c) for c in bt["cutoffs"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {str(path)!r}: {exc}") from exc
    return config_from_dict(data, path.parent)


EXAMPLE_CONFIG = """\
# outagecast run configuration; every key is optional.
input = "panel.csv"
output = "out"
horizons = [24, 48]
seed = 0
jobs = 1

[schema]              # canonical name -> CSV column
timestamp = "timestamp"
county = "county"
outages = "outages"
tracked = "tracked"

[cleaning]
name_patterns = ["unknown*"]
repair_timestamps = []   # empty: detect all-zero weather hours automatically

[selection]
k = 40
pca_components = 20
pca_picks = 3
prune_threshold = 0.95
kmeans_restarts = 10
# report = "out/selection_report.json"   # used by forecast/backtest

[preprocess]
variance_floor = 1e-8
correlation_ceiling = 0.95

[model]
order = [1, 0, 1]
seasonal = [0, 0, 0, 0]
intercept = true
naive_window = 0         # 0: mean over the full history
aggregate = true         # write statewide per-step sums

[optimizer]
max_iter = 100
tol = 1e-5
gradient_step = 1e-6
methods = ["lbfgsb", "bfgs", "nelder_mead"]

[[lags]]
source = "outage"
lags = [1, 24]

[[lags]]
source = "tracked"
lags = [1, 24]

[[lags]]
source = "weather"       # no feature: applies to the top weather features
lags = [1, 6]

[backtest]
cutoffs = []             # empty: hold out the last max(horizons) hours
"""
