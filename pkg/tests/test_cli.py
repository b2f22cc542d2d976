import json

import numpy as np
import pandas as pd
import pytest

from conftest import make_panel
from outagecast import __version__
from outagecast.cli import main
from outagecast.config import EXAMPLE_CONFIG, ConfigError, RunConfig, config_from_dict, load_config
from outagecast.evaluation import SyntheticSpec, gen_panel
from outagecast.panel import load_panel_csv, write_panel_csv

FAST = """\
horizons = [6, 12]
[selection]
k = 3
pca_components = 4
kmeans_restarts = 3
[optimizer]
max_iter = 40
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    panel = gen_panel(SyntheticSpec(counties=3, hours=200, seed=4))
    write_panel_csv(panel, d / "panel.csv")
    (d / "run.toml").write_text(FAST)
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


# -- clean -------------------------------------------------------------------------

def test_clean_writes_artifacts(workdir, tmp_path):
    assert run("clean", "--input", workdir / "panel.csv", "--out", tmp_path) == 0
    for name in ("cleaned.csv", "cleaning_report.json", "validation_report.json"):
        assert (tmp_path / name).is_file()
    json.loads((tmp_path / "cleaning_report.json").read_text())
    cleaned = load_panel_csv(tmp_path / "cleaned.csv")
    assert cleaned.counties == load_panel_csv(workdir / "panel.csv").counties


def test_clean_missing_file_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run("clean", "--input", missing, "--out", tmp_path) != 0
    assert str(missing) in capsys.readouterr().err


def test_clean_explicit_timestamps(tmp_path):
    T = 10
    w = np.tile(np.arange(1.0, T + 1)[:, None], (1, 3))
    w[3] = 0.0
    w[6] = 0.0
    write_panel_csv(make_panel(w), tmp_path / "raw.csv")
    stamp = "2023-04-01T03:00:00Z"
    assert run("clean", "--input", tmp_path / "raw.csv", "--out", tmp_path / "o",
               "--timestamps", stamp) == 0
    cleaned = load_panel_csv(tmp_path / "o" / "cleaned.csv")
    assert np.all(cleaned.weather[0, 3] != 0)
    np.testing.assert_array_equal(cleaned.weather[0, 6], 0.0)
    report = json.loads((tmp_path / "o" / "cleaning_report.json").read_text())
    assert json.dumps(report).count("03:00") >= 1


# -- select ----------------------------------------------------------------------------

def test_select_report_and_rerun_identical(workdir, tmp_path):
    args = ["select", "--config", workdir / "run.toml", "--input", workdir / "panel.csv"]
    assert run(*args, "--out", tmp_path / "a", "--plots") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    a = (tmp_path / "a" / "selection_report.json").read_bytes()
    assert a == (tmp_path / "b" / "selection_report.json").read_bytes()
    report = json.loads(a)
    assert set(report["provenance"]) == set(report["kept"])
    assert set(report["provenance"].values()) <= {"clustering-consensus", "pca-pick", "both"}
    dropped = {d["feature"] for d in report["dropped"]}
    assert dropped.isdisjoint(report["kept"])
    assert dropped | set(report["kept"]) == {"t2m", "sdlwrf", "slhtf", "noise_1", "noise_2", "noise_3"}
    assert (tmp_path / "a" / "pca_loadings.csv").is_file()
    assert (tmp_path / "a" / "pca_explained_variance.svg").read_text().lstrip().startswith("<?xml")


def test_select_k_too_large_fails(workdir, tmp_path, capsys):
    assert run("select", "--input", workdir / "panel.csv", "--out", tmp_path) != 0
    assert "error" in capsys.readouterr().err


# -- forecast ---------------------------------------------------------------------------

def test_forecast_every_cell_and_rerun_identical(workdir, tmp_path):
    base = ["forecast", "--config", workdir / "run.toml", "--input", workdir / "panel.csv"]
    assert run(*base, "--out", tmp_path / "a", "--plots", "--dump-design") == 0
    assert run(*base, "--out", tmp_path / "b", "--jobs", "3") == 0
    frame = pd.read_csv(tmp_path / "a" / "forecasts.csv")
    assert list(frame.columns) == ["county", "horizon", "step", "timestamp", "prediction"]
    expected = {(c, h, s) for c in ("county_1", "county_2", "county_3") for h in (6, 12)
                for s in range(1, h + 1)}
    assert set(zip(frame.county, frame.horizon, frame.step)) == expected
    assert (frame.prediction >= 0).all()
    for name in ("forecasts.csv", "statewide.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "county_1_6.svg").is_file()
    assert (tmp_path / "a" / "design" / "county_2.csv").is_file()
    audit = json.loads((tmp_path / "a" / "model_audit.json").read_text())
    assert len(audit) == 6 and all("level" in m and "attempts" in m for m in audit)


def test_forecast_audit_flags_degenerate_county(tmp_path):
    T = 120
    rng = np.random.default_rng(1)
    w = rng.normal(size=(2, T, 3)).cumsum(axis=1)
    y = np.vstack([np.full(T, 4.0), 30 + 5 * np.sin(np.arange(T) / 3) + rng.normal(size=T)])
    write_panel_csv(make_panel(w, outages=np.round(y)), tmp_path / "p.csv")
    cfg = tmp_path / "c.toml"
    cfg.write_text("horizons = [6]\n[model]\naggregate = false\n[optimizer]\nmax_iter = 30\n")
    assert run("forecast", "--config", cfg, "--input", tmp_path / "p.csv", "--out", tmp_path / "o") == 0
    audit = {m["county"]: m for m in json.loads((tmp_path / "o" / "model_audit.json").read_text())}
    assert audit["c0"]["level"] == "NAIVE"
    assert audit["c0"]["naive_mean"] == 4.0
    assert not (tmp_path / "o" / "statewide.csv").exists()


def test_forecast_with_selection_report(workdir, tmp_path):
    assert run("select", "--config", workdir / "run.toml", "--input", workdir / "panel.csv",
               "--out", tmp_path) == 0
    assert run("forecast", "--config", workdir / "run.toml", "--input", workdir / "panel.csv",
               "--out", tmp_path, "--selection", tmp_path / "selection_report.json",
               "--horizons", "3") == 0
    frame = pd.read_csv(tmp_path / "forecasts.csv")
    assert set(frame.horizon) == {3}


def test_forecast_bad_selection_report(workdir, tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    code = run("forecast", "--input", workdir / "panel.csv", "--out", tmp_path,
               "--selection", tmp_path / "bad.json")
    assert code != 0
    assert "bad.json" in capsys.readouterr().err


# -- backtest ------------------------------------------------------------------------------

def test_backtest_one_cutoff_two_row_table(workdir, tmp_path, capsys):
    code = run("backtest", "--config", workdir / "run.toml", "--input", workdir / "panel.csv",
               "--out", tmp_path, "--horizons", "12", "--cutoff", "2023-04-08T00:00:00Z", "--plots")
    assert code == 0
    table = (tmp_path / "scores.txt").read_text()
    body = [ln for ln in table.splitlines() if ln and not ln.startswith(("#", "Method"))]
    assert len(body) == 2
    assert body[0].startswith("Baseline (predict all zeros)")
    assert body[1].split()[-1].endswith("%")
    assert table in capsys.readouterr().out + "\n"
    for c in ("county_1", "county_2", "county_3"):
        assert (tmp_path / f"{c}_12.svg").is_file()
    scores = json.loads((tmp_path / "scores.json").read_text())
    assert scores[0]["horizon"] == 12


def test_backtest_infeasible_cutoff(workdir, tmp_path, capsys):
    code = run("backtest", "--input", workdir / "panel.csv", "--out", tmp_path,
               "--cutoff", "2023-04-01T05:00:00Z")
    assert code != 0
    assert "cutoff" in capsys.readouterr().err


# -- simulate -------------------------------------------------------------------------------

def test_simulate_row_count_and_determinism(tmp_path):
    spec = tmp_path / "sim.toml"
    spec.write_text("[simulate]\ncounties = 10\nhours = 2000\nseed = 3\n")
    assert run("simulate", spec, "--out", tmp_path / "a.csv") == 0
    assert run("simulate", spec, "--out", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    frame = pd.read_csv(tmp_path / "a.csv")
    assert len(frame) == 20000
    assert run("simulate", spec, "--out", tmp_path / "c.csv", "--seed", "4") == 0
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_simulate_directory_target(tmp_path):
    spec = tmp_path / "sim.toml"
    spec.write_text("counties = 1\nhours = 60\n")
    assert run("simulate", spec, "--out", tmp_path / "d") == 0
    assert (tmp_path / "d" / "synthetic_panel.csv").is_file()


@pytest.mark.parametrize("body", ["phi = 1.0\n", "theta = -1.5\n", "bogus = 1\n", "hours = [\n"])
def test_simulate_invalid_spec(tmp_path, capsys, body):
    spec = tmp_path / "sim.toml"
    spec.write_text(body)
    assert run("simulate", spec, "--out", tmp_path / "x.csv") != 0
    assert str(spec) in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


# -- configuration ------------------------------------------------------------------------------

def test_example_config_matches_defaults(tmp_path):
    path = tmp_path / "example.toml"
    path.write_text(EXAMPLE_CONFIG)
    cfg = load_config(path)
    default = RunConfig()
    for name in ("horizons", "seed", "jobs", "order", "optimizer", "methods", "intercept",
                 "variance_floor", "correlation_ceiling", "lags", "selection", "aggregate"):
        assert getattr(cfg, name) == getattr(default, name), name
    assert cfg.input == str(tmp_path / "panel.csv")


def test_config_default_constants():
    cfg = RunConfig()
    assert cfg.horizons == (24, 48)
    assert cfg.optimizer.max_iter == 100 and cfg.optimizer.tol == 1e-5
    assert cfg.selection.k == 40 and cfg.selection.pca_components == 20
    assert cfg.selection.pca_picks == 3 and cfg.selection.prune_threshold == 0.95
    assert cfg.variance_floor == 1e-8 and cfg.correlation_ceiling == 0.95
    assert (cfg.order.p, cfg.order.d, cfg.order.q, cfg.order.seasonal) == (1, 0, 1, (0, 0, 0, 0))


@pytest.mark.parametrize("data", [
    {"horizons": []},
    {"horizons": [0]},
    {"jobs": 0},
    {"preprocess": {"variance_floor": -1.0}},
    {"selection": {"prune_threshold": 1.5}},
    {"optimizer": {"methods": ["newton"]}},
    {"model": {"order": [1, 0]}},
    {"selection": 3},
])
def test_config_validation(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_flag_overrides_and_seed_propagation():
    cfg = RunConfig().with_overrides(seed=9, jobs=None, horizons=(5,))
    assert cfg.seed == 9 and cfg.selection.seed == 9 and cfg.jobs == 1 and cfg.horizons == (5,)


def test_bad_config_file_exit(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("horizons = [0]\n")
    assert run("forecast", "--config", bad, "--input", tmp_path / "x.csv") != 0
    assert "horizons" in capsys.readouterr().err
