"""Config parsing, runners, artifact emission and the command line."""

import json
from pathlib import Path

import numpy as np
import pytest

from magscatter import cli
from magscatter.analysis import NormTrace, fit_power_law
from magscatter.cli import ExperimentConfig
from magscatter.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
ACCEPTANCE = sorted((ROOT / "configs" / "acceptance").glob("*.toml"))

SMALL_CONSERVATION = """
[experiment]
name = "small_conservation"
kind = "conservation"
criteria = ["C1"]
seed = 0

[grid]
dim = 3
n = 16
L = 12.0

[potential]
kind = "curl-gaussian"
sigma = 1.0

[integrator]
dt = 5e-3

[params]
t_end = 0.2
state_sigma = 1.5

[[rules]]
id = "C1.l2_drift"
criterion = "C1"
metric = "relative_l2_drift"
max = 1e-9
"""

SMALL_DECAY = """
[experiment]
name = "small_decay"
kind = "wave-decay"
criteria = ["C3"]

[potential]
kind = "curl-gaussian"
sigma = 1.0

[times]
start = 2.0
stop = 10.0
samples = 6

[norms]
list = ["Linf"]

[fit]
A_Linf = [2.0, 10.0]

[params]
side = "A"

[[rules]]
id = "C3.linf_exponent"
criterion = "C3"
fit = "A_Linf"
min = -1.1
max = -0.9
"""


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestConfig:
    @pytest.mark.parametrize("path", ACCEPTANCE, ids=lambda p: p.stem)
    def test_acceptance_configs_round_trip(self, path):
        cfg = ExperimentConfig.load(path)
        again = ExperimentConfig.from_toml(cfg.to_toml())
        assert again.to_dict() == cfg.to_dict()
        assert again.to_toml() == cfg.to_toml()

    def test_every_criterion_has_a_config(self):
        crits = {c for p in ACCEPTANCE for c in ExperimentConfig.load(p).criteria}
        assert {f"C{i}" for i in range(1, 14)} <= crits

    @pytest.mark.parametrize("edit,path", [
        (("A_Linf = [2.0, 10.0]", "A_Linf = [1.0, 10.0]"), "fit.A_Linf"),
        (('kind = "wave-decay"', 'kind = "bogus"'), "experiment.kind"),
        (('side = "A"', 'side = "C"'), "params.side"),
        (("samples = 6", "samples = 1"), "times.samples"),
        (('list = ["Linf"]', 'list = ["Lx"]'), "norms.list[0]"),
        (("min = -1.1", ""), None),
        (("[params]", "[extras]"), "extras"),
    ])
    def test_malformed(self, edit, path):
        text = SMALL_DECAY.replace(*edit)
        if path is None:
            text = text.replace("max = -0.9", "")
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_toml(text)
        if path is not None:
            assert info.value.path == path

    @pytest.mark.parametrize("n", [7, 2])
    def test_grid_size(self, n):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_toml(SMALL_CONSERVATION.replace("n = 16", f"n = {n}"))
        assert info.value.path == "grid.n"

    def test_not_toml(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_toml("[experiment\nname=")

    @pytest.mark.parametrize("key,value", [("b_sampling", "cubic"), ("remainder_method", "stencil")])
    def test_modified_profile_choices(self, key, value):
        text = (ROOT / "configs/acceptance/c12_modified_profile.toml").read_text()
        lines = [ln if not ln.startswith(f"{key} =") else f'{key} = "{value}"' for ln in text.splitlines()]
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_toml("\n".join(lines))
        assert info.value.path == f"params.{key}"

    def test_w_side_needs_three_dimensions(self):
        text = (ROOT / "configs/acceptance/c10_support_remainder.toml").read_text()
        with pytest.raises(ConfigError) as info:
            ExperimentConfig.from_toml(text.replace("dim = 3", "dim = 2"))
        assert info.value.path == "grid.dim"


def _report(traces, fits=None):
    cfg = ExperimentConfig.from_toml(SMALL_DECAY)
    fits = fits or {}
    return cli.RunReport(cfg, traces, fits, {}, cli.evaluate_rules(
        ExperimentConfig.from_toml(SMALL_DECAY.split("[[rules]]")[0]), traces, fits, {}))


class TestEmit:
    def test_csv_schema(self):
        t = np.geomspace(1, 4, 5)
        tr = NormTrace("a", t, t ** -1)
        text = cli.traces_csv({"a": tr})
        lines = text.splitlines()
        assert lines[0] == "trace,t,value"
        assert len(lines) == 6
        fits = cli.fits_csv({"a": fit_power_law(tr)}).splitlines()
        assert fits[0] == "trace,exponent,log_amplitude,r_squared,t_min,t_max"

    def test_empty_trace_list(self):
        assert cli.traces_csv({}) == "trace,t,value\n"
        assert cli.rates_svg({}, {}).count("<polyline") == 0

    def test_svg_two_traces(self):
        t = np.geomspace(1, 4, 5)
        traces = {"a": NormTrace("a", t, t ** -1), "b": NormTrace("b", t, 2 * t ** 0.5)}
        fits = {k: fit_power_law(v) for k, v in traces.items()}
        svg = cli.rates_svg(traces, fits)
        assert svg.count("<polyline") == 2
        assert svg.count("<line") == 2

    def test_json_round_trip(self, tmp_path):
        t = np.geomspace(1, 4, 5)
        tr = NormTrace("A_Linf", t, t ** -1)
        report = _report({"A_Linf": tr}, {"A_Linf": fit_power_law(tr)})
        text = cli.report_json(report)
        assert json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n" == text
        written = cli.emit(report, tmp_path)
        assert {p.name for p in written} == {"traces.csv", "fits.csv", "rates.svg", "report.json",
                                              "timing.json"}
        assert "wall_clock" not in json.loads((tmp_path / "report.json").read_text())


class TestRules:
    def test_bounds(self):
        cfg = ExperimentConfig.from_toml(SMALL_CONSERVATION)
        ok = cli.evaluate_rules(cfg, {}, {}, {"relative_l2_drift": 1e-12})
        bad = cli.evaluate_rules(cfg, {}, {}, {"relative_l2_drift": 1e-3})
        nan = cli.evaluate_rules(cfg, {}, {}, {"relative_l2_drift": float("nan")})
        assert ok[0].passed and not bad[0].passed and not nan[0].passed

    def test_missing_metric(self):
        cfg = ExperimentConfig.from_toml(SMALL_CONSERVATION)
        with pytest.raises(ConfigError):
            cli.evaluate_rules(cfg, {}, {}, {})


class TestCommandLine:
    def test_conservation_passes(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMALL_CONSERVATION)
        code = cli.main(["run", str(cfg), "--out", str(tmp_path / "out")])
        out = capsys.readouterr().out
        assert code == cli.EXIT_OK
        assert "PASS" in out
        report = json.loads((tmp_path / "out/small_conservation/report.json").read_text())
        assert report["metrics"]["relative_l2_drift"] < 1e-9

    def test_wave_decay_fit(self, tmp_path):
        cfg = _write(tmp_path, SMALL_DECAY)
        assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_OK
        rows = (tmp_path / "small_decay/fits.csv").read_text().splitlines()
        assert rows[1].startswith("A_Linf,")
        assert abs(float(rows[1].split(",")[1]) + 1) < 0.1

    def test_failing_rule_exit_one(self, tmp_path):
        cfg = _write(tmp_path, SMALL_DECAY.replace("max = -0.9", "max = -1.5").replace("min = -1.1", "min = -2.0"))
        assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_FAIL

    def test_config_error_exit_two(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMALL_DECAY.replace("A_Linf = [2.0, 10.0]", "A_Linf = [2.0, 20.0]"))
        assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert "fit.A_Linf" in capsys.readouterr().err

    def test_numerical_error_exit_three(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMALL_CONSERVATION.replace("dt = 5e-3", "dt = 0.5"))
        assert cli.main(["run", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_NUMERICAL
        err = json.loads(capsys.readouterr().err)
        assert err["reason"] == "stability"

    def test_deterministic(self, tmp_path):
        cfg = _write(tmp_path, SMALL_CONSERVATION)
        for sub in ("a", "b"):
            cli.main(["run", str(cfg), "--out", str(tmp_path / sub)])
        for name in ("traces.csv", "fits.csv", "report.json"):
            a = (tmp_path / "a/small_conservation" / name).read_bytes()
            assert a == (tmp_path / "b/small_conservation" / name).read_bytes()

    def test_seed_override(self, tmp_path):
        cfg = _write(tmp_path, SMALL_DECAY)
        cli.main(["run", str(cfg), "--out", str(tmp_path), "--seed", "7"])
        report = json.loads((tmp_path / "small_decay/report.json").read_text())
        assert report["config"]["experiment"]["seed"] == 7

    def test_verify_table(self, tmp_path, capsys):
        suite = tmp_path / "suite"
        suite.mkdir()
        _write(suite, SMALL_DECAY, "a.toml")
        _write(suite, SMALL_CONSERVATION, "b.toml")
        code = cli.main(["verify", str(suite), "--out", str(tmp_path / "out")])
        out = capsys.readouterr().out.splitlines()
        assert code == cli.EXIT_OK
        assert out[0].split()[:2] == ["config", "rule"]
        assert sum(line.endswith("PASS") for line in out) == 2

    def test_verify_reports_errors(self, tmp_path, capsys):
        suite = tmp_path / "suite"
        suite.mkdir()
        _write(suite, SMALL_DECAY.replace('side = "A"', 'side = "Z"'), "bad.toml")
        assert cli.main(["verify", str(suite), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
        assert "ERROR" in capsys.readouterr().out

    def test_thread_cap(self, tmp_path, monkeypatch):
        seen = {}

        def fake(args):
            seen["jobs"] = args.jobs
            return 0

        monkeypatch.setenv("MAGSCATTER_THREADS", "1")
        parser = cli.build_parser()
        monkeypatch.setattr(cli, "build_parser", lambda: parser)
        for action in parser._subparsers._group_actions[0].choices.values():
            action.set_defaults(func=fake)
        cli.main(["verify", str(tmp_path), "--jobs", "4"])
        assert seen["jobs"] == 1
