"""County-level power outage forecasting from hourly weather panels."""

__version__ = "0.1.0"

from .panel import PanelDataset, load_panel_csv, write_panel_csv, validate_grid  # noqa: E402
from .quality import clean_panel  # noqa: E402
from .selection import SelectionConfig, select_features  # noqa: E402
from .features import build_design_matrix  # noqa: E402
from .sarimax import ModelOrder, fit, forecast  # noqa: E402
from .pipeline import ForecastConfig, run_all  # noqa: E402
from .evaluation import backtest, gen_panel, SyntheticSpec  # noqa: E402

__all__ = [
    "PanelDataset", "load_panel_csv", "write_panel_csv", "validate_grid", "clean_panel",
    "SelectionConfig", "select_features", "build_design_matrix", "ModelOrder", "fit",
    "forecast", "ForecastConfig", "run_all", "backtest", "gen_panel", "SyntheticSpec",
]
