"""Experiment configs, runners and artifact emission.

A config is a TOML document with the sections ``experiment``, ``grid``,
``potential``, ``integrator``, ``times``, ``norms``, ``fit``, ``params`` and an
array ``rules``.  ``magscatter run`` executes one config and writes
``traces.csv``, ``fits.csv``, ``report.json`` and ``rates.svg``;
``magscatter verify`` runs every config in a directory.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import tomlkit

from . import __version__
from . import analysis as an
from . import field as fld
from . import magschrod as ms
from . import pctransform as pc
from . import scatter as sc
from . import wavefield as wf
from .analysis import NormTrace, RateFit, fit_power_law
from .errors import ConfigError, MagScatterError, NumericalError
from .field import Grid, NormSpec, ScalarField

KINDS = ("wave-decay", "dispersive", "transform-check", "conservation", "wave-operator",
         "q-construction", "modified-profile", "gronwall", "sobolev-scan")
SPACINGS = ("geometric", "linear")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


# --- config -----------------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int
    L: float

    def build(self) -> Grid:
        return Grid(self.dim, self.n, self.L)


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "none"
    amplitude: float = 1.0
    sigma: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    axis: tuple = (0.0, 0.0, 1.0)

    def wave_data(self) -> wf.WaveData:
        if self.kind != "curl-gaussian":
            raise ConfigError("potential.kind", "this experiment needs a curl-gaussian potential")
        return wf.WaveData(wf.CurlGaussian(self.amplitude, self.sigma, self.center, self.axis))


@dataclass(frozen=True)
class TimeSpec:
    start: float
    stop: float
    samples: int
    spacing: str = "geometric"

    def values(self) -> list:
        if self.spacing == "geometric":
            ts = np.geomspace(self.start, self.stop, self.samples)
        else:
            ts = np.linspace(self.start, self.stop, self.samples)
        ts[0], ts[-1] = self.start, self.stop
        return [float(t) for t in ts]


@dataclass(frozen=True)
class RuleSpec:
    """One pass/fail rule: a fitted exponent, a metric or a trace extremum within bounds."""

    id: str
    criterion: str
    source: str  # "fit", "metric", "trace_max" or "trace_min"
    name: str
    min: float | None = None
    max: float | None = None

    def to_dict(self) -> dict:
        out = {"id": self.id, "criterion": self.criterion, self.source: self.name}
        if self.min is not None:
            out["min"] = self.min
        if self.max is not None:
            out["max"] = self.max
        return out


RULE_SOURCES = ("fit", "metric", "trace_max", "trace_min")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    kind: str
    criteria: tuple = ()
    seed: int = 0
    description: str = ""
    grid: GridSpec | None = None
    potential: PotentialSpec = PotentialSpec()
    dt: float | None = None
    eta: float = 0.0
    times: TimeSpec | None = None
    norms: tuple = ()
    fits: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    rules: tuple = ()

    # -- serialization --

    def to_dict(self) -> dict:
        out: dict = {"experiment": {"name": self.name, "kind": self.kind,
                                    "criteria": list(self.criteria), "seed": self.seed}}
        if self.description:
            out["experiment"]["description"] = self.description
        if self.grid is not None:
            out["grid"] = {"dim": self.grid.dim, "n": self.grid.n, "L": self.grid.L}
        p = self.potential
        out["potential"] = {"kind": p.kind}
        if p.kind != "none":
            out["potential"].update(amplitude=p.amplitude, sigma=p.sigma, center=list(p.center),
                                    axis=list(p.axis))
        if self.dt is not None:
            out["integrator"] = {"dt": self.dt, "eta": self.eta}
        if self.times is not None:
            t = self.times
            out["times"] = {"start": t.start, "stop": t.stop, "samples": t.samples,
                            "spacing": t.spacing}
        if self.norms:
            out["norms"] = {"list": list(self.norms)}
        if self.fits:
            out["fit"] = {k: list(v) for k, v in self.fits.items()}
        if self.params:
            out["params"] = copy.deepcopy(self.params)
        if self.rules:
            out["rules"] = [r.to_dict() for r in self.rules]
        return out

    def to_toml(self) -> str:
        doc = tomlkit.document()
        for key, value in self.to_dict().items():
            if key == "rules":
                aot = tomlkit.aot()
                for r in value:
                    aot.append(tomlkit.item(r))
                doc.add(key, aot)
            else:
                doc.add(key, tomlkit.item(value))
        return tomlkit.dumps(doc)

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            raw = tomlkit.parse(text).unwrap()
        except Exception as exc:  # tomlkit raises several parse error types
            raise ConfigError("<document>", f"not valid TOML: {exc}") from exc
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        return cls.from_toml(text)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {"experiment", "grid", "potential", "integrator", "times", "norms", "fit",
                 "params", "rules"}
        for key in raw:
            if key not in known:
                raise ConfigError(key, "unknown section")
        exp = _table(raw, "experiment", required=True)
        kind = _get(exp, "experiment.kind", str)
        if kind not in KINDS:
            raise ConfigError("experiment.kind", f"must be one of {', '.join(KINDS)}")
        criteria = tuple(_get(exp, "experiment.criteria", list, default=[]))
        for i, c in enumerate(criteria):
            if not isinstance(c, str):
                raise ConfigError(f"experiment.criteria[{i}]", "must be a string")
        seed = _get(exp, "experiment.seed", int, default=0)
        if seed < 0:
            raise ConfigError("experiment.seed", "must be nonnegative")

        grid = None
        if "grid" in raw:
            g = _table(raw, "grid")
            dim = _get(g, "grid.dim", int)
            n = _get(g, "grid.n", int)
            L = _get(g, "grid.L", float)
            if dim not in (1, 2, 3):
                raise ConfigError("grid.dim", "must be 1, 2 or 3")
            if n < 4 or n % 2:
                raise ConfigError("grid.n", "must be an even integer >= 4")
            if not L > 0:
                raise ConfigError("grid.L", "must be positive")
            grid = GridSpec(dim, n, L)

        potential = PotentialSpec()
        if "potential" in raw:
            p = _table(raw, "potential")
            pk = _get(p, "potential.kind", str)
            if pk not in ("none", "curl-gaussian"):
                raise ConfigError("potential.kind", "must be 'none' or 'curl-gaussian'")
            if pk == "curl-gaussian":
                sigma = _get(p, "potential.sigma", float)
                if not sigma > 0:
                    raise ConfigError("potential.sigma", "must be positive")
                center = _vector(p, "potential.center", (0.0, 0.0, 0.0))
                axis = _vector(p, "potential.axis", (0.0, 0.0, 1.0))
                if not any(axis):
                    raise ConfigError("potential.axis", "must be nonzero")
                potential = PotentialSpec(pk, _get(p, "potential.amplitude", float, default=1.0),
                                          sigma, center, axis)

        dt, eta = None, 0.0
        if "integrator" in raw:
            it = _table(raw, "integrator")
            dt = _get(it, "integrator.dt", float)
            eta = _get(it, "integrator.eta", float, default=0.0)
            if not dt > 0:
                raise ConfigError("integrator.dt", "must be positive")
            if not 0 <= eta <= 1:
                raise ConfigError("integrator.eta", "must lie in [0, 1]")

        times = None
        if "times" in raw:
            t = _table(raw, "times")
            start = _get(t, "times.start", float)
            stop = _get(t, "times.stop", float)
            samples = _get(t, "times.samples", int)
            spacing = _get(t, "times.spacing", str, default="geometric")
            if spacing not in SPACINGS:
                raise ConfigError("times.spacing", f"must be one of {', '.join(SPACINGS)}")
            if not stop > start:
                raise ConfigError("times.stop", "must exceed times.start")
            if spacing == "geometric" and not start > 0:
                raise ConfigError("times.start", "geometric spacing needs a positive start")
            if samples < 2:
                raise ConfigError("times.samples", "need at least two samples")
            times = TimeSpec(start, stop, samples, spacing)

        norms = ()
        if "norms" in raw:
            nl = _get(_table(raw, "norms"), "norms.list", list)
            for i, label in enumerate(nl):
                try:
                    _parse_norm(label)
                except ValueError as exc:
                    raise ConfigError(f"norms.list[{i}]", str(exc)) from None
            norms = tuple(nl)

        fits = {}
        for key, win in _table(raw, "fit").items() if "fit" in raw else ():
            path = f"fit.{key}"
            if (not isinstance(win, list) or len(win) != 2
                    or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in win)):
                raise ConfigError(path, "must be a two-element numeric window [t_min, t_max]")
            lo, hi = float(win[0]), float(win[1])
            if not hi > lo:
                raise ConfigError(path, "window must have t_max > t_min")
            fits[key] = (lo, hi)

        params = dict(_table(raw, "params")) if "params" in raw else {}

        rules = []
        for i, r in enumerate(raw.get("rules", [])):
            path = f"rules[{i}]"
            if not isinstance(r, dict):
                raise ConfigError(path, "must be a table")
            sources = [s for s in RULE_SOURCES if s in r]
            if len(sources) != 1:
                raise ConfigError(path, f"needs exactly one of {', '.join(RULE_SOURCES)}")
            lo = r.get("min")
            hi = r.get("max")
            for bound, val in (("min", lo), ("max", hi)):
                if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
                    raise ConfigError(f"{path}.{bound}", "must be a number")
            if lo is None and hi is None:
                raise ConfigError(path, "needs a min or a max bound")
            rid = r.get("id")
            if not isinstance(rid, str):
                raise ConfigError(f"{path}.id", "must be a string")
            crit = r.get("criterion", "")
            if not isinstance(crit, str):
                raise ConfigError(f"{path}.criterion", "must be a string")
            if sources[0] == "fit" and r["fit"] not in fits:
                raise ConfigError(f"{path}.fit", f"no fit window named {r['fit']!r}")
            rules.append(RuleSpec(rid, crit, sources[0], str(r[sources[0]]),
                                  None if lo is None else float(lo),
                                  None if hi is None else float(hi)))

        cfg = cls(_get(exp, "experiment.name", str), kind, criteria, seed,
                  _get(exp, "experiment.description", str, default=""), grid, potential, dt, eta,
                  times, norms, fits, params, tuple(rules))
        _validate_kind(cfg)
        return cfg


def _table(raw: dict, key: str, required: bool = False) -> dict:
    if key not in raw:
        if required:
            raise ConfigError(key, "missing section")
        return {}
    val = raw[key]
    if not isinstance(val, dict):
        raise ConfigError(key, "must be a table")
    return val


_MISSING = object()


def _get(table: dict, path: str, kind, default=_MISSING):
    key = path.rsplit(".", 1)[-1]
    if key not in table:
        if default is _MISSING:
            raise ConfigError(path, "missing")
        return default
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if isinstance(val, bool) and kind is not bool or not isinstance(val, kind):
        raise ConfigError(path, f"must be of type {kind.__name__}")
    if kind is float and not math.isfinite(val):
        raise ConfigError(path, "must be finite")
    return val


def _vector(table: dict, path: str, default: tuple) -> tuple:
    val = table.get(path.rsplit(".", 1)[-1], list(default))
    if (not isinstance(val, list) or len(val) != 3
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)):
        raise ConfigError(path, "must be a list of three numbers")
    return tuple(float(v) for v in val)


def _parse_norm(label: str) -> NormSpec:
    """``L<r>`` or ``Linf``."""
    if not isinstance(label, str) or not label.startswith("L"):
        raise ValueError(f"unknown norm {label!r}; use L<r> or Linf")
    body = label[1:]
    if body == "inf":
        return NormSpec.lebesgue(math.inf)
    try:
        r = float(body)
    except ValueError:
        raise ValueError(f"unknown norm {label!r}; use L<r> or Linf") from None
    if r < 1:
        raise ValueError(f"norm exponent must be at least 1 in {label!r}")
    return NormSpec.lebesgue(r)


# per-kind requirements: sections and params (name -> type)
_REQUIRED = {
    "wave-decay": (("potential", "times", "norms"), {"side": str}),
    "dispersive": (("grid", "times", "norms"), {"state_sigma": float}),
    "transform-check": (("grid",), {"mode": str}),
    "conservation": (("grid", "potential", "integrator"), {"t_end": float, "state_sigma": float}),
    "wave-operator": (("grid", "potential", "times"), {"mode": str, "state_sigma": float}),
    "q-construction": (("grid", "potential", "integrator"), {"state_sigma": float,
                                                            "t_end": float}),
    "modified-profile": (("grid", "potential", "integrator", "times"), {"state_sigma": float}),
    "gronwall": ((), {"instances": int, "absorption_instances": int}),
    "sobolev-scan": (("grid",), {"j": float, "k": float, "p": float, "q": float, "r": float}),
}

_MODES = {
    "transform-check": ("round-trip", "factorization", "equivalence"),
    "wave-operator": ("direct", "remainder"),
}


def _param(cfg: ExperimentConfig, key: str, kind=float, default=_MISSING):
    return _get(cfg.params, f"params.{key}", kind, default)


def _validate_kind(cfg: ExperimentConfig) -> None:
    sections, params = _REQUIRED[cfg.kind]
    present = {"grid": cfg.grid is not None, "potential": cfg.potential.kind != "none",
               "integrator": cfg.dt is not None, "times": cfg.times is not None,
               "norms": bool(cfg.norms)}
    for s in sections:
        if not present[s]:
            raise ConfigError(s, f"required for {cfg.kind} experiments")
    for key, kind in params.items():
        _param(cfg, key, kind)
    if cfg.kind in _MODES:
        mode = _param(cfg, "mode", str)
        if mode not in _MODES[cfg.kind]:
            raise ConfigError("params.mode", f"must be one of {', '.join(_MODES[cfg.kind])}")
    if cfg.kind == "wave-decay" and _param(cfg, "side", str) not in ("A", "B"):
        raise ConfigError("params.side", "must be 'A' or 'B'")
    if cfg.kind in ("wave-operator", "q-construction", "modified-profile") and _param(
            cfg, "b_sampling", str, "nodal") not in ("nodal", "spectral"):
        raise ConfigError("params.b_sampling", "must be 'nodal' or 'spectral'")
    if cfg.kind == "modified-profile" and _param(cfg, "remainder_method", str, "expanded") not in (
            "expanded", "analytic"):
        raise ConfigError("params.remainder_method", "must be 'expanded' or 'analytic'")
    if cfg.kind in ("wave-operator", "q-construction", "modified-profile") and cfg.grid.dim != 3:
        raise ConfigError("grid.dim", "w-side experiments are three dimensional")
    if cfg.kind == "conservation" and cfg.grid.dim != 3:
        raise ConfigError("grid.dim", "magnetic evolution is three dimensional")
    for key, win in cfg.fits.items():
        lo, hi = _sample_range(cfg, key)
        if win[0] < lo * (1 - 1e-12) or win[1] > hi * (1 + 1e-12):
            raise ConfigError(f"fit.{key}", f"window [{win[0]:g}, {win[1]:g}] lies outside the "
                                            f"sampled times [{lo:g}, {hi:g}]")


def _sample_range(cfg: ExperimentConfig, trace: str) -> tuple:
    """Time range over which ``trace`` is sampled."""
    if cfg.times is None:
        raise ConfigError(f"fit.{trace}", "fits need a [times] section")
    lo, hi = cfg.times.start, cfg.times.stop
    if cfg.kind == "wave-operator" and trace.startswith(("utilde", "x2_utilde")):
        return 1.0 / hi, 1.0 / lo
    return lo, hi


# --- reports ----------------------------------------------------------------------------------


@dataclass
class RuleResult:
    id: str
    criterion: str
    value: float
    min: float | None
    max: float | None
    passed: bool


@dataclass
class RunReport:
    config: ExperimentConfig
    traces: dict
    fits: dict
    metrics: dict
    rules: list
    wall_clock: float = 0.0
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rules)

    def to_json_dict(self, include_timing: bool = False) -> dict:
        out = {
            "version": self.version,
            "config": self.config.to_dict(),
            "traces": {k: {"t": [float(x) for x in tr.times], "value": [float(v) for v in tr.values]}
                       for k, tr in sorted(self.traces.items())},
            "fits": {k: {"exponent": f.exponent, "log_amplitude": f.log_amplitude,
                         "r_squared": f.r_squared, "t_min": f.window[0], "t_max": f.window[1]}
                     for k, f in sorted(self.fits.items())},
            "metrics": {k: float(v) for k, v in sorted(self.metrics.items())},
            "rules": [{"id": r.id, "criterion": r.criterion, "value": r.value, "min": r.min,
                       "max": r.max, "passed": r.passed} for r in self.rules],
            "passed": self.passed,
        }
        if include_timing:
            out["wall_clock"] = self.wall_clock
        return out


def evaluate_rules(cfg: ExperimentConfig, traces: dict, fits: dict, metrics: dict) -> list:
    out = []
    for rule in cfg.rules:
        if rule.source == "fit":
            if rule.name not in fits:
                raise ConfigError(f"fit.{rule.name}", "no trace of that name was produced")
            value = fits[rule.name].exponent
        elif rule.source == "metric":
            if rule.name not in metrics:
                raise ConfigError(f"rules.{rule.id}", f"no metric named {rule.name!r}; "
                                                      f"available: {', '.join(sorted(metrics))}")
            value = float(metrics[rule.name])
        else:
            if rule.name not in traces:
                raise ConfigError(f"rules.{rule.id}", f"no trace named {rule.name!r}")
            vals = traces[rule.name].values
            value = float(np.max(vals) if rule.source == "trace_max" else np.min(vals))
        ok = math.isfinite(value)
        if rule.min is not None:
            ok = ok and value >= rule.min
        if rule.max is not None:
            ok = ok and value <= rule.max
        out.append(RuleResult(rule.id, rule.criterion, value, rule.min, rule.max, bool(ok)))
    return out


# --- emission ---------------------------------------------------------------------------------


def _num(x) -> str:
    return repr(float(x))


def traces_csv(traces: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace", "t", "value"])
    for name in sorted(traces):
        tr = traces[name]
        for t, v in zip(tr.times, tr.values):
            w.writerow([name, _num(t), _num(v)])
    return buf.getvalue()


def fits_csv(fits: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trace", "exponent", "log_amplitude", "r_squared", "t_min", "t_max"])
    for name in sorted(fits):
        f = fits[name]
        w.writerow([name, _num(f.exponent), _num(f.log_amplitude), _num(f.r_squared),
                    _num(f.window[0]), _num(f.window[1])])
    return buf.getvalue()


def report_json(report: RunReport, include_timing: bool = False) -> str:
    return json.dumps(report.to_json_dict(include_timing), indent=2, sort_keys=True) + "\n"


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")


def rates_svg(traces: dict, fits: dict, width: int = 640, height: int = 420) -> str:
    """Log-log polyline per trace with the fitted power law overlaid (dashed)."""
    pad = 50
    pts = {}
    for name in sorted(traces):
        tr = traces[name]
        keep = [(float(t), float(v)) for t, v in zip(tr.times, tr.values) if t > 0 and v > 0]
        if keep:
            pts[name] = keep
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n')
    if not pts:
        return head + "</svg>\n"
    lx = [math.log10(t) for p in pts.values() for t, _ in p]
    ly = [math.log10(v) for p in pts.values() for _, v in p]
    x0, x1 = min(lx), max(lx)
    y0, y1 = min(ly), max(ly)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(t):
        return pad + (math.log10(t) - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (math.log10(v) - y0) / (y1 - y0) * (height - 2 * pad)

    lines = [head, f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" '
                   f'height="{height - 2 * pad}" fill="none" stroke="#999"/>\n']
    for i, (name, p) in enumerate(pts.items()):
        color = _COLORS[i % len(_COLORS)]
        path = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in p)
        lines.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{path}"><title>{name}</title></polyline>\n')
        fit = fits.get(name)
        if fit is not None:
            ta, tb = fit.window
            va, vb = fit.predict(ta), fit.predict(tb)
            if va > 0 and vb > 0:
                lines.append(f'<line x1="{sx(ta):.2f}" y1="{sy(va):.2f}" x2="{sx(tb):.2f}" '
                             f'y2="{sy(vb):.2f}" stroke="{color}" stroke-dasharray="5,3"/>\n')
        lines.append(f'<text x="{pad + 6}" y="{pad + 14 + 14 * i}" font-size="11" '
                     f'fill="{color}">{name}</text>\n')
    lines.append("</svg>\n")
    return "".join(lines)


def emit(report: RunReport, out_dir, formats=("csv", "svg", "json")) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        (out_dir / "traces.csv").write_text(traces_csv(report.traces))
        (out_dir / "fits.csv").write_text(fits_csv(report.fits))
        written += [out_dir / "traces.csv", out_dir / "fits.csv"]
    if "svg" in formats:
        (out_dir / "rates.svg").write_text(rates_svg(report.traces, report.fits))
        written.append(out_dir / "rates.svg")
    if "json" in formats:
        (out_dir / "report.json").write_text(report_json(report))
        (out_dir / "timing.json").write_text(
            json.dumps({"wall_clock": report.wall_clock}, indent=2) + "\n")
        written += [out_dir / "report.json", out_dir / "timing.json"]
    return written


# --- runners -----------------------------------------------------------------------------------


def _trace(name, times, values) -> NormTrace:
    return NormTrace(name, [float(t) for t in times], [float(v) for v in values])


def _state_field(cfg: ExperimentConfig, grid: Grid) -> ScalarField:
    center = _param(cfg, "state_center", list, default=[0.0] * grid.dim)
    momentum = _param(cfg, "state_momentum", list, default=[0.0] * grid.dim)
    if len(center) != grid.dim or len(momentum) != grid.dim:
        raise ConfigError("params.state_center", f"needs {grid.dim} entries")
    return fld.gaussian(grid, _param(cfg, "state_sigma"), center=center, momentum=momentum)


def _times_param(cfg: ExperimentConfig, key: str) -> list:
    vals = _param(cfg, key, list)
    if not vals or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals):
        raise ConfigError(f"params.{key}", "must be a nonempty list of numbers")
    return [float(v) for v in vals]


def run_wave_decay(cfg: ExperimentConfig):
    data = cfg.potential.wave_data()
    times = cfg.times.values()
    side = _param(cfg, "side", str)
    specs = [_parse_norm(lbl) for lbl in cfg.norms]
    traces = {}
    if side == "A":
        prof = wf.decay_profile(data, specs, times)
        for lbl, spec in zip(cfg.norms, specs):
            tr = prof[spec.label]
            traces[f"A_{lbl}"] = _trace(f"A_{lbl}", tr.times, tr.values)
    else:
        rs = [s.r for s in specs]
        vals = {lbl: [] for lbl in cfg.norms}
        for t in times:
            got = pc.b_norms_quadrature(data, t, rs)
            for lbl, r in zip(cfg.norms, rs):
                vals[lbl].append(got[r])
        for lbl in cfg.norms:
            traces[f"B_{lbl}"] = _trace(f"B_{lbl}", times, vals[lbl])
    return traces, {}


def run_dispersive(cfg: ExperimentConfig):
    grid = cfg.grid.build()
    f = _state_field(cfg, grid)
    method = _param(cfg, "method", str, default="grid")
    xi_step = _param(cfg, "xi_step", float, default=0.25)
    traces, metrics = {}, {}
    for lbl in cfg.norms:
        spec = _parse_norm(lbl)
        rep = an.dispersive_check(f, spec.r, cfg.times.values(), None, method, xi_step,
                                  name=f"U_{lbl}")
        traces[f"U_{lbl}"] = _trace(f"U_{lbl}", rep.trace.times, rep.trace.values)
        traces[f"bound_{lbl}"] = _trace(f"bound_{lbl}", rep.bound.times, rep.bound.values)
        metrics[f"max_ratio_{lbl}"] = rep.max_ratio
    return traces, metrics


def run_transform_check(cfg: ExperimentConfig):
    mode = _param(cfg, "mode", str)
    return {"round-trip": _round_trip, "factorization": _factorization,
            "equivalence": _equivalence}[mode](cfg)


def _round_trip(cfg: ExperimentConfig):
    u_grid = cfg.grid.build()
    t_u = _param(cfg, "t_u")
    u = _state_field(cfg, u_grid)
    pair = pc.u_to_w(u, t_u)
    back = pc.w_to_u(pair.w, pair.t_w, u_grid).u
    un = fld.lebesgue_norm(u.physical(), u_grid, 2)
    rt = fld.lebesgue_norm(back.physical() - u.physical(), u_grid, 2) / un
    ident = pc.identity_1_19(u, pair.w, t_u)
    return {}, {"round_trip_error": rt, "identity_ft_vs_wtilde": ident["ft_vs_wtilde"],
                "identity_wtilde_vs_wstar": ident["wtilde_vs_wstar"],
                "identity_max": max(ident.values())}


def _factorization(cfg: ExperimentConfig):
    t = _param(cfg, "t")
    n_coarse = _param(cfg, "n_coarse", int)
    g = cfg.grid.build()
    fine = pc.factorization_check(_state_field(cfg, g), t).relative
    gc = Grid(g.dim, n_coarse, g.L)
    coarse = pc.factorization_check(_state_field(cfg, gc), t).relative
    return {}, {"relative_error": fine, "relative_error_coarse": coarse,
                "reduction": coarse / fine if fine > 0 else math.inf}


def free_gaussian(points: np.ndarray, t: float, sigma: float):
    """``U(t)`` applied to ``exp(-|x|^2 / 2 sigma^2)`` and its time derivative, in closed form."""
    dim = points.shape[0]
    r2 = np.sum(points ** 2, axis=0)
    z = sigma ** 2 + 1j * t
    u = (sigma ** 2 / z) ** (dim / 2) * np.exp(-r2 / (2 * z))
    du = u * (-0.5j * dim / z + 0.5j * r2 / z ** 2)
    return u, du


def manufactured_w(data: wf.WaveData, w_grid: Grid, s: float, sigma: float):
    """Transport the free Gaussian ``u`` at ``t = 1/s`` to the w-side.

    Returns ``w(s)`` and the image ``g(s) = t^2 conj(D^{-1} M(-t) f_u)`` of the
    source ``f_u = i du/dt + (1/2) Delta_A u`` of the magnetic u-equation.  Since
    ``u`` is free and ``div A = 0``, ``f_u = -i A.grad u - |A|^2 u / 2`` in closed
    form, which keeps spectral round-off out of the support of ``f_u``.
    """
    t = 1.0 / s
    u_grid = pc.natural_grid(w_grid, t)
    pts = u_grid.points()
    u, _ = free_gaussian(pts, t, sigma)
    a = wf.eval_analytic(data, t, pts, derivatives=()).a
    grad_u = -pts * u / (sigma ** 2 + 1j * t)
    f_u = -1j * np.sum(a * grad_u, axis=0) - 0.5 * np.sum(a * a, axis=0) * u
    w = pc.u_to_w(ScalarField(u_grid, u), t, w_grid).w
    g = pc.u_to_w(ScalarField(u_grid, f_u), t, w_grid).w
    return w, ScalarField(w_grid, t ** 2 * g.physical())


def equivalence_residuals(data: wf.WaveData, w_grid: Grid, s: float, sigma: float,
                          deltas) -> list:
    """``||i dw/ds + (1/2) Delta_B w + Bcheck w - g||_2`` with a centered difference of step delta."""
    w_mid, g = manufactured_w(data, w_grid, s, sigma)
    bs = pc.B_from_A(data, s, w_grid)
    spatial = sc.half_delta_b_plus_bcheck(w_mid.physical(), w_grid, bs) - g.physical()
    out = []
    for d in deltas:
        wp, _ = manufactured_w(data, w_grid, s + d, sigma)
        wm, _ = manufactured_w(data, w_grid, s - d, sigma)
        ddt = 1j * (wp.physical() - wm.physical()) / (2 * d)
        out.append(fld.lebesgue_norm(ddt + spatial, w_grid, 2))
    return out


def _equivalence(cfg: ExperimentConfig):
    data = cfg.potential.wave_data()
    g = cfg.grid.build()
    s = _param(cfg, "s")
    deltas = _times_param(cfg, "deltas")
    res = equivalence_residuals(data, g, s, _param(cfg, "state_sigma"), deltas)
    orders = [math.log(res[i] / res[i + 1]) / math.log(deltas[i] / deltas[i + 1])
              for i in range(len(res) - 1)]
    traces = {"residual": _trace("residual", deltas[::-1], res[::-1])}
    return traces, {"min_order": min(orders), "finest_residual": res[-1]}


def _potential_track_u(data: wf.WaveData, grid: Grid, mode: str) -> ms.PotentialTrack:
    if mode == "analytic":
        pts = grid.points()
        return ms.PotentialTrack(lambda t: wf.eval_analytic(data, t, pts, derivatives=()).a)
    sampled = wf.sample_curl_gaussian(data, grid)
    return ms.PotentialTrack(lambda t: wf.propagate_grid(sampled, t).a.physical().real)


def run_conservation(cfg: ExperimentConfig):
    grid = cfg.grid.build()
    data = cfg.potential.wave_data()
    u0 = _state_field(cfg, grid)
    t_end = _param(cfg, "t_end")
    track = _potential_track_u(data, grid, _param(cfg, "potential_eval", str, default="grid"))
    ic = ms.IntegratorConfig(cfg.dt, eta=cfg.eta)
    res = ms.evolve(ms.SchrodState(0.0, u0), track, ic, t_end, record_identity=True)
    rec = res.identity
    norms = np.sqrt(np.asarray(rec.norm2))
    traces = {"l2_norm": _trace("l2_norm", rec.times, norms)}
    metrics = {"relative_l2_drift": abs(norms[-1] - norms[0]) / norms[0]}
    if cfg.eta > 0:
        rep = ms.eta_dissipation_check(rec)
        metrics["dissipation_excess"] = rep.discrepancy
        metrics["strictly_decreasing"] = float(bool(np.all(np.diff(rec.norm2) < 0)))
        traces["cov_grad2"] = _trace("cov_grad2", rec.times, rec.cov_grad2)
    else:
        rep = ms.l2_identity_check(rec)
        metrics["identity_discrepancy"] = rep.discrepancy
    return traces, metrics


def _w_setup(cfg: ExperimentConfig, project: bool = True):
    grid = cfg.grid.build()
    data = cfg.potential.wave_data()
    project = _param(cfg, "project_b", bool, default=project)
    sampling = _param(cfg, "b_sampling", str, default="nodal")
    return grid, data, sc.BTrack(data, grid, project=project, sampling=sampling)


def _asymptotic_state(cfg: ExperimentConfig, grid: Grid) -> sc.AsymptoticState:
    state = sc.AsymptoticState(_state_field(cfg, grid))
    eta = _param(cfg, "annulus_eta", float, default=0.0)
    return sc.make_annular_state(state, eta) if eta > 0 else state


def run_wave_operator(cfg: ExperimentConfig):
    mode = _param(cfg, "mode", str)
    # remainders are pointwise products with B, so raw nodal samples are used there
    grid, data, bt = _w_setup(cfg, project=(mode != "remainder"))
    times = cfg.times.values()
    if mode == "remainder":
        traces = {}
        masked = _asymptotic_state(cfg, grid)
        raw = sc.AsymptoticState(_state_field(cfg, grid))
        for name, st in (("R_masked", masked), ("R_unmasked", raw)):
            prof = sc.SimpleProfile(st.w_plus)
            vals = [fld.lebesgue_norm(prof.remainder(t, bt(t)).physical(), grid, 2) for t in times]
            traces[name] = _trace(name, times, vals)
        win = cfg.fits.get("R_masked", (times[0], times[-1]))
        gap = (fit_power_law(traces["R_masked"], win).exponent
               - fit_power_law(traces["R_unmasked"], cfg.fits.get("R_unmasked", win)).exponent)
        return traces, {"exponent_gap": gap}
    state = _asymptotic_state(cfg, grid)
    t0 = _param(cfg, "t0")
    ic = ms.IntegratorConfig(_stable_dt(cfg, grid))
    run = sc.solve_w_direct(state, bt, t0, ic, t_end=times[-1], observe_times=times,
                            store_times=times, init=_param(cfg, "init", str, default="conj"))
    traces = {k: _trace(k, tr.times, tr.values) for k, tr in run.traces.items()}
    traj = {t: run.trajectories[t] for t in times}
    tr, xtr, _ = sc.compare_asymptotics_u(traj, state, [1.0 / t for t in times])
    traces[tr.name] = tr
    traces[xtr.name] = xtr
    return traces, {}


def _stable_dt(cfg: ExperimentConfig, grid: Grid) -> float:
    """Configured ``dt``, or the largest step the RK4 stability guard admits (times 0.9)."""
    if cfg.dt is not None:
        return cfg.dt
    return 0.9 * 2 * ms.STABILITY_LIMIT / (grid.dim * grid.k_nyquist ** 2)


def run_q_construction(cfg: ExperimentConfig):
    grid, data, bt = _w_setup(cfg)
    state = _asymptotic_state(cfg, grid)
    prof = sc.SimpleProfile(state.w_plus)
    t_end = _param(cfg, "t_end")
    t0s = _times_param(cfg, "t0_list")
    t0_fit = _param(cfg, "t0")
    ic = ms.IntegratorConfig(cfg.dt)
    samples = _param(cfg, "samples", int, default=9)
    traces, metrics = {}, {}
    diffs = []
    for t0 in sorted(set(t0s + [t0_fit]), reverse=True):
        obs = [float(t) for t in np.geomspace(2 * t0, t_end, samples)] if t0 == t0_fit else []
        runs = sc.solve_q_many(prof, bt, t0, ("zero", "resolvent"), ic, t_end,
                               observe_times=obs)
        zero, res = runs["zero"], runs["resolvent"]
        qz = zero.trajectories["final"].physical()
        qr = res.trajectories["final"].physical()
        d = fld.lebesgue_norm(qz - qr, grid, 2)
        if t0 in t0s:
            diffs.append((t0, d))
        bound_ratio = res.config["q0_norm"] / (t0 * res.config["R_t0_norm"])
        metrics[f"q0_bound_ratio_t0_{t0:g}"] = bound_ratio
        metrics[f"init_difference_t0_{t0:g}"] = d
        if t0 == t0_fit:
            tr = zero.traces["q_norm"]
            traces["q_norm"] = _trace("q_norm", tr.times, tr.values)
            tr = zero.traces["R_norm"]
            traces["R_norm"] = _trace("R_norm", tr.times, tr.values)
    diffs.sort()
    traces["init_difference"] = _trace("init_difference", [t for t, _ in diffs],
                                       [d for _, d in diffs])
    vals = [d for _, d in diffs]
    metrics["init_difference_monotone"] = float(all(a < b for a, b in zip(vals, vals[1:])))
    metrics["max_q0_bound_ratio"] = max(v for k, v in metrics.items()
                                        if k.startswith("q0_bound_ratio"))
    return traces, metrics


def run_modified_profile(cfg: ExperimentConfig):
    grid, data, bt = _w_setup(cfg)
    moments = wf.check_moments(data, grid)
    state = _asymptotic_state(cfg, grid)
    times = cfg.times.values()
    t_from = _param(cfg, "t_from", float, default=1.0)
    ic = ms.IntegratorConfig(cfg.dt)
    v1 = pc.free_prop_U(state.w_plus.conj(), t_from)
    w0run = sc.solve_W0(v1, bt, times[0], ic, t_from=t_from, store_times=times,
                        observe_times=times + [t_from])
    h, hc, dh, dhc, residuals, _ = sc.corrector_tracks(bt, times)
    w0_traj = {t: w0run.trajectories[t] for t in times}
    prof = sc.build_modified_profile(w0_traj, h, hc, bt, dh, dhc)
    method = _param(cfg, "remainder_method", str, default="expanded")
    r_vals = [fld.lebesgue_norm(prof.remainder(t, bt(t), method).physical(), grid, 2) for t in times]
    simple = sc.SimpleProfile(state.w_plus)
    r_simple = [fld.lebesgue_norm(simple.remainder(t, bt(t)).physical(), grid, 2) for t in times]
    n0 = w0run.traces["W0_norm"]
    traces = {"R_modified": _trace("R_modified", times, r_vals),
              "R_simple": _trace("R_simple", times, r_simple),
              "W0_norm": _trace("W0_norm", n0.times, n0.values)}
    for key in ("dtW0_norm", "lapW0_norm", "gradlapW0_norm"):
        tr = w0run.traces[key]
        traces[key] = _trace(key, tr.times, tr.values)
    nv = np.asarray(n0.values)
    metrics = {"poisson_residual": max(residuals.values()),
               "W0_norm_drift": float(np.max(np.abs(nv - nv[-1])) / nv[-1]),
               "max_moment": moments.max_moment}
    return traces, metrics


def _gronwall_task(seed: int):
    rng = np.random.default_rng(seed)
    inst = an.random_gronwall_instance(rng, signed_a0=bool(seed % 2))
    return an.gronwall_bound(inst, inst.t1) - an.saturated_solution(inst, inst.t1)


def run_gronwall(cfg: ExperimentConfig, jobs: int = 1):
    n = _param(cfg, "instances", int)
    m = _param(cfg, "absorption_instances", int)
    seeds = [cfg.seed * 1_000_003 + i for i in range(n)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            margins = list(ex.map(_gronwall_task, seeds, chunksize=16))
    else:
        margins = [_gronwall_task(s) for s in seeds]
    # separable case y' = c sqrt(y): the bound is the exact solution
    c, y0, t0, t1 = 1.7, 0.6, 0.0, 2.5
    sep = an.GronwallInstance([0.5], [lambda t: c + 0 * t], lambda t: 0 * t, y0, t0, t1)
    exact = (math.sqrt(y0) + c * (t1 - t0) / 2) ** 2
    tight = abs(an.gronwall_bound(sep, t1) - exact)
    rng = np.random.default_rng(cfg.seed + 7919)
    slack = []
    for _ in range(m):
        k = int(rng.integers(1, 4))
        alphas = list(rng.uniform(0.0, 0.95, k))
        a = list(rng.uniform(0.0, 3.0, k))
        bound = an.absorption_bound(a, alphas)
        best = an.absorption_scan(a, alphas, y_max=2 * bound + 1)
        slack.append(bound - best)
    traces = {"bound_margin": _trace("bound_margin", range(n), margins),
              "absorption_slack": _trace("absorption_slack", range(m), slack)}
    return traces, {"min_margin": float(min(margins)), "separable_error": tight,
                    "min_absorption_slack": float(min(slack))}


def run_sobolev_scan(cfg: ExperimentConfig):
    g = cfg.grid.build()
    scales = _times_param(cfg, "scales")
    base = _param(cfg, "state_sigma", float, default=1.0)
    family = [fld.gaussian(g, base * s) for s in scales]
    j, k, p, q, r = (_param(cfg, x) for x in ("j", "k", "p", "q", "r"))
    sigma = _param(cfg, "sigma", float, default=None)
    if sigma is None:
        # n/p - j = (1 - sigma) n/q + sigma (n/r - k)
        d = g.dim
        sigma = (d / p - j - d / q) / (d / r - k - d / q)
    rep = an.sobolev_ratio_scan(family, j, k, p, q, r, sigma)
    ratios = np.asarray(rep.ratios)
    traces = {"ratio": _trace("ratio", scales, ratios)}
    return traces, {"max_ratio": rep.max_ratio, "sigma": sigma,
                    "ratio_spread": float((ratios.max() - ratios.min()) / ratios.max())}


RUNNERS: dict = {
    "wave-decay": run_wave_decay,
    "dispersive": run_dispersive,
    "transform-check": run_transform_check,
    "conservation": run_conservation,
    "wave-operator": run_wave_operator,
    "q-construction": run_q_construction,
    "modified-profile": run_modified_profile,
    "gronwall": run_gronwall,
    "sobolev-scan": run_sobolev_scan,
}


def run(cfg: ExperimentConfig, jobs: int = 1, seed: int | None = None) -> RunReport:
    """Execute ``cfg`` and evaluate its rules."""
    if seed is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seed": seed})
    start = time.perf_counter()
    runner: Callable = RUNNERS[cfg.kind]
    traces, metrics = runner(cfg, jobs) if cfg.kind == "gronwall" else runner(cfg)
    fits = {}
    for name, window in cfg.fits.items():
        if name not in traces:
            raise ConfigError(f"fit.{name}", f"no trace of that name; produced: "
                                             f"{', '.join(sorted(traces))}")
        fits[name] = fit_power_law(traces[name], window)
    rules = evaluate_rules(cfg, traces, fits, metrics)
    return RunReport(cfg, traces, fits, metrics, rules, time.perf_counter() - start)


def run_path(path, out: str | None = None, jobs: int = 1, seed: int | None = None) -> RunReport:
    cfg = ExperimentConfig.load(path)
    report = run(cfg, jobs, seed)
    target = Path(out) if out else Path("runs")
    emit(report, target / cfg.name)
    return report


# --- command line ----------------------------------------------------------------------------


def _format_rules(report: RunReport) -> list:
    lines = []
    for r in report.rules:
        bounds = f"[{'' if r.min is None else f'{r.min:g}'}, {'' if r.max is None else f'{r.max:g}'}]"
        lines.append(f"{report.config.name:<28} {r.id:<28} {r.value:>12.5g} {bounds:<18} "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return lines


def _cmd_run(args) -> int:
    try:
        report = run_path(args.config, args.out, args.jobs, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(json.dumps({"error": type(exc).__name__, "reason": exc.reason}), file=sys.stderr)
        return EXIT_NUMERICAL
    for line in _format_rules(report):
        print(line)
    return EXIT_OK if report.passed else EXIT_FAIL


def _verify_one(path: str, out: str | None):
    try:
        report = run_path(path, out)
        return path, report, None
    except MagScatterError as exc:
        return path, None, exc


def _cmd_verify(args) -> int:
    paths = sorted(str(p) for p in Path(args.suite).glob("*.toml"))
    if not paths:
        print(f"no configs in {args.suite}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_verify_one, paths, [args.out] * len(paths)))
    else:
        results = [_verify_one(p, args.out) for p in paths]
    code = EXIT_OK
    print(f"{'config':<28} {'rule':<28} {'value':>12} {'bounds':<18} result")
    for path, report, exc in results:
        if report is None:
            print(f"{Path(path).stem:<28} {'-':<28} {'-':>12} {'-':<18} ERROR {exc}")
            code = max(code, EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_NUMERICAL)
            continue
        for line in _format_rules(report):
            print(line)
        if not report.passed and code == EXIT_OK:
            code = EXIT_FAIL
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magscatter",
                                     description="Magnetic scattering experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default: ./runs)")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)
    p_ver = sub.add_parser("verify", help="run every config in a directory")
    p_ver.add_argument("suite")
    p_ver.add_argument("--out", default=None)
    p_ver.add_argument("--jobs", type=int, default=1)
    p_ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("MAGSCATTER_THREADS")
    if threads is not None and args.jobs > int(threads):
        args.jobs = int(threads)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
