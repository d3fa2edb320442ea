"""Command-line front end: ``qsl <command> [options]``.

Every command writes CSV (to ``--out`` or stdout).  Exit codes: 0 success,
1 bad arguments or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .boson import DriveParams, boson_report
from .chain import ChainParams, PerturbativeChain
from .core import (
    BoundReport,
    TimeGrid,
    find_extrema,
    make_report,
    ml_denominator,
    mt_denominator,
    scan_R,
    stationarity_check,
)
from .errors import NumericalConsistencyError, ParameterError, QSLError
from .exact import MAX_SITES, exact_observables

MODELS = ("boson", "chain", "chain-exact")
BOUNDS = ("both", "mt", "ml")
COLUMNS = ("tau", "omega_abs", "C", "dE_mt", "dE_ml", "R_mt", "R_ml")
COMPARE_COLUMNS = ("tau", "Omega_pert", "Omega_exact", "abs_err", "R_ml_pert",
                   "R_ml_exact", "rel_err", "S1", "S2", "S3")

BOSON_KEYS = ("A", "omega", "V0")
CHAIN_KEYS = ("N", "J", "gamma", "h0", "h1", "tauH")
RUN_KEYS = ("tau", "tau_max", "tau_steps", "bound", "dt", "out", "preset", "tolerance")

DEFAULTS = {
    "boson": {"A": 1.0, "omega": 2.0, "V0": 0.475},
    "chain": {"N": 100, "J": 1.0, "gamma": 0.2, "h0": 1.0, "h1": 1.0, "tauH": 0.01},
    "chain-exact": {"N": 8, "J": 1.0, "gamma": 0.2, "h0": 1.0, "h1": 1.0, "tauH": 0.01},
    "compare": {"N": 8, "J": 1.0, "gamma": 0.2, "h0": 1.0, "h1": 1.0, "tauH": 0.01},
}
DEFAULT_TAUS = {"boson": (50.0, 100.0, 150.0, 200.0)}


class UsageError(QSLError):
    """Bad command line or configuration file (exit code 1)."""


@dataclass(frozen=True)
class RunConfig:
    model: str
    params: tuple[tuple[str, float], ...]
    taus: tuple[float, ...]
    bound: str = "both"
    dt: Optional[float] = None
    out: Optional[str] = None
    preset: str = "custom"
    tolerance: float = 0.05
    tags: tuple[tuple[str, float], ...] = field(default=())

    def param_dict(self) -> dict:
        return dict(self.params)

    def canonical(self) -> str:
        p = ",".join(f"{k}={_fmt_param(v)}" for k, v in self.params)
        taus = ";".join(_fmt_param(t) for t in self.taus)
        extra = f",dt={_fmt_param(self.dt)}" if self.dt is not None else ""
        return f"model={self.model},{p},tau={taus},bound={self.bound}{extra}"


def _fmt_param(v) -> str:
    if isinstance(v, int) and not isinstance(v, bool):
        return str(v)
    return repr(float(v))


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{v:.9g}"


# --- model construction ------------------------------------------------------

def _param_keys(model: str):
    return BOSON_KEYS if model == "boson" else CHAIN_KEYS


def build_params(config: RunConfig):
    p = config.param_dict()
    if config.model == "boson":
        return DriveParams(**p)
    params = ChainParams(**p)
    if config.model in ("chain-exact", "compare") and params.N > MAX_SITES:
        raise ParameterError(f"N must be <= {MAX_SITES} for exact evaluation, got {params.N}")
    return params


def _validate(config: RunConfig) -> RunConfig:
    if config.bound not in BOUNDS:
        raise ParameterError(f"bound must be one of {BOUNDS}, got {config.bound!r}")
    if not config.taus or any(not (math.isfinite(t) and t > 0) for t in config.taus):
        raise ParameterError("tau values must be finite and > 0")
    if any(b <= a for a, b in zip(config.taus, config.taus[1:])):
        raise ParameterError("tau values must be strictly increasing")
    if config.dt is not None and not config.dt > 0:
        raise ParameterError("dt must be > 0")
    build_params(config)
    return config


# --- presets -----------------------------------------------------------------

def _chain(N=100, J=1.0, gamma=0.2, h0=1.0, h1=1.0, tauH=0.01):
    return (("N", N), ("J", J), ("gamma", gamma), ("h0", h0), ("h1", h1), ("tauH", tauH))


def presets() -> dict[str, list[RunConfig]]:
    boson_taus = (50.0, 100.0, 150.0, 200.0)
    fig1 = [
        RunConfig("chain", _chain(gamma=g, tauH=th), (25.0, 50.0, 75.0, 100.0), preset="fig1",
                  tags=(("gamma", g), ("tauH", th), ("h1", 1.0)))
        for g in (0.2, 0.5, 0.8) for th in (0.001, 0.01)
    ]
    table1 = [
        RunConfig("chain", _chain(gamma=g, tauH=th, h1=h1), (100.0,), preset="table1",
                  tags=(("gamma", g), ("tauH", th), ("h1", h1)))
        for g, th, h1 in ((0.1, 0.01, 1.0), (0.2, 0.01, 1.0), (0.5, 0.01, 2.0))
    ]
    return {
        "fig1": fig1,
        "fig2": [RunConfig("boson", (("A", 1.0), ("omega", 2.0), ("V0", 0.475)), boson_taus,
                           preset="fig2")],
        "fig3": [RunConfig("boson", (("A", 6.0), ("omega", 4.0), ("V0", 3.0)), boson_taus,
                           preset="fig3")],
        "table1": table1,
        "compare": [RunConfig("compare", _chain(N=8, gamma=0.2), (100.0,), preset="compare")],
    }


# --- evaluation --------------------------------------------------------------

def evaluate(config: RunConfig) -> list[BoundReport]:
    params = build_params(config)
    dt = config.dt
    if config.model == "boson":
        def one(tau):
            grid = TimeGrid.for_tau(tau, max_dt=dt) if dt else None
            return boson_report(params, tau, grid, config.bound)
    elif config.model == "chain":
        engine = PerturbativeChain(params)

        def one(tau):
            grid = _chain_grid(params, tau, dt)
            return engine.report(tau, grid, config.bound)
    else:
        def one(tau):
            obs = exact_observables(params, tau, grid=_chain_grid(params, tau, dt))
            return make_report(tau, obs.omega_abs, mt_denominator(obs.std),
                               ml_denominator(obs.energy, obs.e0), config.bound)
    return scan_R(one, config.taus)


def _chain_grid(params: ChainParams, tau: float, dt: Optional[float]) -> TimeGrid:
    grid = params.quadrature_grid(tau)
    if dt is not None and dt < grid.dt:
        grid = TimeGrid.for_tau(tau, max_dt=dt)
    return grid


def report_rows(reports: Sequence[BoundReport]) -> list[list[str]]:
    return [[_fmt(r.tau), _fmt(r.omega_abs), _fmt(r.bures_angle), _fmt(r.dE_mt),
             _fmt(r.dE_ml), _fmt(r.R_mt), _fmt(r.R_ml)] for r in reports]


def compare_rows(config: RunConfig) -> tuple[list[list[str]], float]:
    """Perturbative vs exact chain; returns rows and the largest relative error."""
    params = build_params(config)
    engine = PerturbativeChain(params)
    sf = engine.strength_factors()
    rows, worst = [], 0.0
    for tau in config.taus:
        grid = _chain_grid(params, tau, config.dt)
        _, om_p = engine.overlap(tau)
        r_p = engine.report(tau, grid).R_ml
        obs = exact_observables(params, tau, grid=grid)
        om_e = obs.omega_abs
        r_e = make_report(tau, om_e, mt_denominator(obs.std), ml_denominator(obs.energy, obs.e0)).R_ml
        abs_err = abs(om_p - om_e)
        rel = [abs_err / om_e if om_e else (0.0 if abs_err == 0 else math.inf)]
        if r_p is not None and r_e is not None:
            rel.append(abs(r_p - r_e) / abs(r_e) if r_e else (0.0 if r_p == 0 else math.inf))
        elif (r_p is None) != (r_e is None):
            rel.append(math.inf)
        rel_err = max(rel)
        worst = max(worst, rel_err)
        rows.append([_fmt(tau), _fmt(om_p), _fmt(om_e), _fmt(abs_err), _fmt(r_p), _fmt(r_e),
                     _fmt(rel_err), _fmt(sf.s1), _fmt(sf.s2), _fmt(sf.s3)])
    return rows, worst


# --- output ------------------------------------------------------------------

def header_line(preset: str, canonical: str) -> str:
    return f"# qsl-lab v{__version__} preset={preset} params={canonical}"


def render(headers: list[str], columns: Sequence[str], rows: list[list[str]]) -> str:
    lines = list(headers) + [",".join(columns)] + [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def write_output(text: str, out: Optional[str]) -> None:
    """Write atomically; a failed write leaves no partial file behind."""
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".qsl-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def run(config: RunConfig) -> str:
    """CSV text for a single model configuration."""
    if config.model == "compare":
        rows, _ = compare_rows(config)
        return render([header_line(config.preset, config.canonical())], COMPARE_COLUMNS, rows)
    rows = report_rows(evaluate(config))
    return render([header_line(config.preset, config.canonical())], COLUMNS, rows)


def run_preset(name: str) -> str:
    configs = presets()[name]
    if len(configs) == 1:
        return run(configs[0])
    headers = [header_line(name, ";".join(f"[{c.canonical()}]" for c in configs))]
    tag_names = [k for k, _ in configs[0].tags]
    rows = []
    for c in configs:
        tags = [_fmt(v) for _, v in c.tags]
        rows.extend(tags + r for r in report_rows(evaluate(c)))
    return render(headers, tag_names + list(COLUMNS), rows)


# --- configuration parsing ---------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qsl", description="Quantum speed-limit ratios for driven systems.")
    parser.add_argument("--version", action="version", version=f"qsl-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    for flag in ("--A", "--omega", "--V0", "--J", "--gamma", "--h0", "--h1", "--tauH",
                 "--tau-max", "--dt"):
        common.add_argument(flag, type=float)
    common.add_argument("--N", type=int)
    common.add_argument("--tau", type=str, help="comma-separated final times")
    common.add_argument("--tau-steps", type=int)
    common.add_argument("--bound", choices=BOUNDS)
    common.add_argument("--out")
    common.add_argument("--config")
    common.add_argument("--preset")
    common.add_argument("--dump-config", action="store_true")
    common.add_argument("--strict", action="store_true")
    for name in ("boson", "chain", "chain-exact", "compare"):
        sub.add_parser(name, parents=[common])
    ex = sub.add_parser("extrema")
    ex.add_argument("--input", required=True)
    ex.add_argument("--bound", choices=("ml", "mt"), default="ml")
    ex.add_argument("--out")
    pr = sub.add_parser("preset")
    pr.add_argument("name", choices=("fig1", "fig2", "fig3", "table1", "compare"))
    pr.add_argument("--out")
    return parser


def _number(key: str, raw: str):
    try:
        return int(raw) if key in ("N", "tau_steps") else float(raw)
    except ValueError:
        raise UsageError(f"{key}: expected a number, got {raw!r}") from None


def _parse_taus(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())
    except ValueError:
        raise UsageError(f"tau: expected comma-separated numbers, got {raw!r}") from None


def read_config_file(path: str, model: str) -> dict:
    """Flat dict of settings from an INI file, validated against ``model``."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except (OSError, UnicodeDecodeError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from None
    known = {m: set(_param_keys(m)) for m in MODELS + ("compare",)}
    known["run"] = set(RUN_KEYS)
    values = {}
    # a chain section also feeds chain-exact and compare; their own sections win
    order = ["run", "chain", model] if model in ("chain-exact", "compare") else ["run", model]
    for section in cp.sections():
        if section not in known:
            raise UsageError(f"unknown config section [{section}]")
        for key in cp[section]:
            if key not in known[section]:
                raise UsageError(f"unknown config key {key!r} in [{section}]")
    for section in order:
        if cp.has_section(section):
            values.update(cp[section])
    return values


def parse_config(argv: Sequence[str]) -> tuple[str, argparse.Namespace, Optional[RunConfig]]:
    ns = _make_parser().parse_args(list(argv))
    if ns.command in ("extrema", "preset"):
        return ns.command, ns, None
    model = ns.command
    settings: dict = {}
    base = None
    if ns.preset:
        table = presets()
        if ns.preset not in table or len(table[ns.preset]) != 1:
            raise UsageError(f"preset {ns.preset!r} is not a single {model} configuration")
        base = table[ns.preset][0]
        if base.model != model:
            raise UsageError(f"preset {ns.preset!r} belongs to '{base.model}', not '{model}'")
        settings.update(base.params)
        settings["tau"] = base.taus
        settings["preset"] = base.preset
    if ns.config:
        settings.update(read_config_file(ns.config, model))
    flags = {"A": ns.A, "omega": ns.omega, "V0": ns.V0, "N": ns.N, "J": ns.J,
             "gamma": ns.gamma, "h0": ns.h0, "h1": ns.h1, "tauH": ns.tauH, "tau": ns.tau,
             "tau_max": ns.tau_max, "tau_steps": ns.tau_steps, "bound": ns.bound,
             "dt": ns.dt, "out": ns.out}
    allowed = set(_param_keys(model)) | set(RUN_KEYS)
    for key, value in flags.items():
        if value is None:
            continue
        if key not in allowed:
            raise UsageError(f"--{key} does not apply to '{model}'")
        settings[key] = value
        if key in ("tau_max", "tau_steps"):
            settings.pop("tau", None)
        elif key == "tau":
            settings.pop("tau_max", None)
            settings.pop("tau_steps", None)
    return model, ns, config_from_settings(model, settings)


def config_from_settings(model: str, settings: dict) -> RunConfig:
    params = []
    for key in _param_keys(model):
        raw = settings.get(key, DEFAULTS[model][key])
        params.append((key, _number(key, raw) if isinstance(raw, str) else raw))
    params = tuple((k, int(v) if k == "N" else float(v)) for k, v in params)
    tau = settings.get("tau")
    if isinstance(tau, str):
        taus = _parse_taus(tau)
    elif tau is not None:
        taus = tuple(float(t) for t in tau)
    elif "tau_max" in settings or "tau_steps" in settings:
        tmax = settings.get("tau_max")
        steps = settings.get("tau_steps")
        if tmax is None or steps is None:
            raise UsageError("tau_max and tau_steps must be given together")
        tmax = _number("tau_max", tmax) if isinstance(tmax, str) else float(tmax)
        steps = _number("tau_steps", steps) if isinstance(steps, str) else int(steps)
        if steps < 1:
            raise UsageError("tau_steps must be >= 1")
        taus = tuple(float(x) for x in np.linspace(tmax / steps, tmax, steps))
    else:
        taus = DEFAULT_TAUS.get(model, (100.0,))
    dt = settings.get("dt")
    dt = None if dt in (None, "") else float(dt)
    cfg = RunConfig(
        model=model, params=params, taus=taus,
        bound=str(settings.get("bound", "both")), dt=dt,
        out=settings.get("out") or None,
        preset=str(settings.get("preset", "custom")),
        tolerance=float(settings.get("tolerance", 0.05)),
    )
    return _validate(cfg)


def dump_config(config: RunConfig) -> str:
    """INI text that :func:`parse_config` maps back to ``config``."""
    lines = [f"[{config.model}]"]
    lines += [f"{k} = {_fmt_param(v)}" for k, v in config.params]
    lines += ["", "[run]", "tau = " + ", ".join(_fmt_param(t) for t in config.taus),
              f"bound = {config.bound}", f"preset = {config.preset}",
              f"tolerance = {_fmt_param(config.tolerance)}"]
    if config.dt is not None:
        lines.append(f"dt = {_fmt_param(config.dt)}")
    if config.out:
        lines.append(f"out = {config.out}")
    return "\n".join(lines) + "\n"


# --- extrema -----------------------------------------------------------------

def read_csv_columns(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise UsageError(f"cannot read {path!r}: {exc}") from None
    if not lines:
        raise UsageError(f"{path!r} has no data")
    names = lines[0].split(",")
    cols = {n: [] for n in names}
    for ln in lines[1:]:
        fields = ln.split(",")
        if len(fields) != len(names):
            raise UsageError(f"malformed row in {path!r}: {ln!r}")
        for n, f in zip(names, fields):
            cols[n].append(float(f) if f else math.nan)
    return {n: np.array(v) for n, v in cols.items()}


def extrema_text(path: str, bound: str) -> str:
    cols = read_csv_columns(path)
    for needed in ("tau", "C", f"R_{bound}", f"dE_{bound}"):
        if needed not in cols:
            raise UsageError(f"{path!r} lacks column {needed!r}")
    taus, C = cols["tau"], cols["C"]
    R, dE = cols[f"R_{bound}"], cols[f"dE_{bound}"]
    found = find_extrema(taus, R, C, dE)
    points = stationarity_check(taus, C, dE)
    h = float(taus[1] - taus[0])
    rows = []
    for e in found:
        near = [p for p in points if abs(p.tau_star - e.tau_star) <= h]
        p = near[0] if near else None
        rows.append([_fmt(e.tau_star), e.kind, _fmt(e.R_value), _fmt(e.C_value),
                     _fmt(p.ratio_lhs if p else None), _fmt(p.ratio_rhs if p else None),
                     _fmt(p.mismatch if p else None)])
    head = f"# qsl-lab v{__version__} extrema input={os.path.basename(path)} bound={bound}"
    return render([head], ("tau_star", "kind", "R", "C", "dlogC", "dlogE", "mismatch"), rows)


# --- entry point -------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, ns, config = parse_config(argv)
        if command == "extrema":
            write_output(extrema_text(ns.input, ns.bound), ns.out)
            return 0
        if command == "preset":
            write_output(run_preset(ns.name), ns.out)
            return 0
        if ns.dump_config:
            write_output(dump_config(config), ns.out if ns.out else None)
            return 0
        if command == "compare":
            rows, worst = compare_rows(config)
            text = render([header_line(config.preset, config.canonical())], COMPARE_COLUMNS, rows)
            write_output(text, config.out)
            if ns.strict and worst > config.tolerance:
                print(f"qsl: relative error {worst:.3g} exceeds {config.tolerance:g}",
                      file=sys.stderr)
                return 2
            return 0
        write_output(run(config), config.out)
        return 0
    except (UsageError, ParameterError) as exc:
        print(f"qsl: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalConsistencyError, FloatingPointError, ArithmeticError) as exc:
        print(f"qsl: numerical failure: {exc}", file=sys.stderr)
        return 2
    except QSLError as exc:
        print(f"qsl: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
