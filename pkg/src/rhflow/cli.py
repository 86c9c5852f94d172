"""Command-line experiment runner.

Configuration is a plain ``key = value`` file with ``[section]`` headers; every
key has a default, ``print-config`` dumps them all.  Each run writes CSV/JSON
reports plus ``manifest.json`` (content hashes, per-check status) into the
output directory.  Exit status: 0 all checks pass, 2 the hypotheses of some bound
fail (flag), 1 some check fails or errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path
from typing import Optional

import numpy as np

from . import inequalities as ineq
from .flow import (
    BlowUpError,
    FlowConfig,
    FlowHistory,
    distance_derivative_residual,
    history_to_text,
    metric_at,
    run,
    sy_nonnegative,
)
from .functionals import A_PARAMS, EntropyReport, monotonicity_trace
from .geometry import DomainError, MetricState
from .heat import HeatSolution, fundamental_solution, solve_forward
from .inequalities import PASS, FLAG, FAIL, GaussianReport, SobolevReport, VerificationReport

log = logging.getLogger("rhflow")

KINDS = ("flow", "kernel", "entropy", "sobolev", "gaussian", "verify-all")
EXIT = {PASS: 0, FLAG: 2, FAIL: 1}
_SEVERITY = {PASS: 0, FLAG: 1, FAIL: 2}
ENTROPY_TOL = 1e-2
MONO_TOL = 1e-6
MASS_TOL = 1e-4


class ConfigError(ValueError):
    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _optional_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


# runner defaults: snapshots every 4th step, flow steps capped at 1e-4
FLOW_DEFAULTS = {"stride": 4, "dt_max": 1e-4}
HISTORY_MAX_SNAPSHOTS = 200


@dataclass
class HeatParams:
    T: Optional[float] = None  # defaults to the flow end time
    t_stop: float = 0.0
    width: Optional[float] = None  # defaults to 4 max(a) h
    dt: Optional[float] = None  # defaults to 1e-5 (256/N)^2
    record_every: Optional[int] = None  # defaults to a 1e-4 recording interval


@dataclass
class CheckParams:
    c1: float = 1.0 / 16.0
    eps_list: tuple = (0.25, 0.5, 1.0, 2.0)
    delta_list: tuple = (0.5, 1.0, 2.0)
    a_params: tuple = A_PARAMS
    family_size: int = 100
    seed: int = 0
    sobolev_times: tuple = (0.0, 0.1, 0.18)
    mean_value_r: float = 0.3


@dataclass
class ExperimentConfig:
    kind: str
    flow: FlowConfig = field(default_factory=lambda: FlowConfig(**FLOW_DEFAULTS))
    heat: HeatParams = field(default_factory=HeatParams)
    checks: CheckParams = field(default_factory=CheckParams)
    out: str = "out"
    s_override: Optional[float] = None

    def to_text(self) -> str:
        lines = ["[experiment]", f"kind = {self.kind}", f"out = {self.out}",
                 f"s_override = {_fmt(self.s_override)}", "", "[flow]"]
        lines += [f"{k} = {_fmt(getattr(self.flow, k))}" for k, _ in _FLOW_KEYS]
        lines += ["", "[heat]"] + [f"{f.name} = {_fmt(getattr(self.heat, f.name))}" for f in fields(HeatParams)]
        lines += ["", "[checks]"] + [f"{f.name} = {_fmt(getattr(self.checks, f.name))}" for f in fields(CheckParams)]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_FLOW_KEYS = (
    ("N", int), ("t_end", float), ("cfl", float), ("family", str), ("r0", float),
    ("eps", float), ("phi_amp", float), ("stride", int), ("dt_max", _optional_float),
    ("curvature_cap", float), ("coupling", _bool),
)
_SCHEMA = {
    "experiment": {"kind": str, "out": str, "s_override": _optional_float},
    "flow": dict(_FLOW_KEYS),
    "heat": {"T": _optional_float, "t_stop": float, "width": _optional_float,
             "dt": _optional_float, "record_every": _optional_int},
    "checks": {"c1": float, "eps_list": _floats, "delta_list": _floats, "a_params": _floats,
               "family_size": int, "seed": int, "sobolev_times": _floats, "mean_value_r": float},
}


def parse_config(text: str, kind: Optional[str] = None) -> ExperimentConfig:
    """Parse the line-oriented config; the first problem raises ``ConfigError`` with its line."""
    values: dict = {s: {} for s in _SCHEMA}
    lines: dict = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]", n)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", n)
        if section is None:
            raise ConfigError("key outside any [section]", n)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]", n)
        try:
            values[section][key] = _SCHEMA[section][key](val)
        except ValueError as exc:
            raise ConfigError(f"type mismatch for '{key}': {exc}", n) from None
        lines[(section, key)] = n

    exp = values["experiment"]
    kind = exp.get("kind", kind)
    if kind is None:
        raise ConfigError("missing required key 'kind' in [experiment]")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}", lines.get(("experiment", "kind")))
    try:
        flow = FlowConfig(**{**FLOW_DEFAULTS, **values["flow"]})
    except (ValueError, DomainError) as exc:
        bad = [ln for (s, k), ln in lines.items() if s == "flow" and k in str(exc)]
        raise ConfigError(str(exc), bad[0] if bad else None) from None
    heat = HeatParams(**values["heat"])
    checks = CheckParams(**values["checks"])
    for key in ("family_size",):
        if getattr(checks, key) < 1:
            raise ConfigError(f"{key} must be positive", lines.get(("checks", key)))
    return ExperimentConfig(kind, flow, heat, checks, exp.get("out", "out"), exp.get("s_override"))


# ---------------------------------------------------------------------------
# plot data


def emit_plotdata(report, out_dir, name: Optional[str] = None) -> list[Path]:
    """Write the CSV (and JSON where defined) for a report; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(fname, text):
        p = out / fname
        p.write_text(text)
        written.append(p)

    if isinstance(report, EntropyReport):
        put(f"{name or 'entropy'}.csv", report.to_csv())
    elif isinstance(report, GaussianReport):
        put(f"{name or 'gaussian'}.csv", report.to_csv())
        put(f"{name or 'gaussian'}.json", report.to_report().to_json() + "\n")
    elif isinstance(report, SobolevReport):
        put(f"{name or 'sobolev'}.json", report.to_report().to_json() + "\n")
    elif isinstance(report, VerificationReport):
        put(f"{name or report.kind}.json", report.to_json() + "\n")
        if report.rows:
            put(f"{name or report.kind}.csv", report.to_csv())
    elif isinstance(report, HeatSolution):
        put(f"{name or 'kernel'}.csv", report.to_csv())
    elif isinstance(report, FlowHistory):
        put(f"{name or 'history'}.txt", history_to_text(report))
    else:
        raise TypeError(f"no plot data defined for {type(report).__name__}")
    return written


# ---------------------------------------------------------------------------
# experiments


@dataclass
class RunManifest:
    version: str
    config: str
    wall_clock: float
    checks: dict
    files: dict
    seed: int

    @property
    def status(self) -> str:
        return max(self.checks.values(), key=_SEVERITY.get, default=PASS)

    @property
    def exit_code(self) -> int:
        return EXIT[self.status]

    def to_json(self) -> str:
        return json.dumps(
            {"version": self.version, "config": self.config, "wall_clock_s": self.wall_clock,
             "seed": self.seed, "status": self.status, "exit_code": self.exit_code,
             "checks": self.checks, "files": self.files},
            indent=2, sort_keys=True,
        )


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


class _Run:
    """Shared state of one experiment: lazily computed flow, kernel and results."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.checks: dict = {}
        self.files: list[Path] = []
        self._hist = None
        self._G = None

    def record(self, name: str, status: str, report=None, **kw):
        self.checks[name] = status
        if report is not None:
            self.files.extend(emit_plotdata(report, self.out, **kw))
        log.info("%-22s %s", name, status)

    def write_json(self, fname: str, payload: dict):
        p = self.out / fname
        p.write_text(json.dumps(ineq._jsonable(payload), indent=2, sort_keys=True) + "\n")
        self.files.append(p)

    @property
    def hist(self) -> FlowHistory:
        if self._hist is None:
            hist = run(self.cfg.flow)
            if self.cfg.s_override is not None:
                hist = FlowHistory([m.with_override(self.cfg.s_override) for m in hist.states])
            self._hist = hist
        return self._hist

    def heat_dt(self) -> float:
        h = self.cfg.heat
        return h.dt if h.dt is not None else 1e-5 * (256.0 / self.cfg.flow.N) ** 2

    def record_every(self) -> int:
        h = self.cfg.heat
        return h.record_every if h.record_every is not None else max(1, round(1e-4 / self.heat_dt()))

    @property
    def T(self) -> float:
        return self.cfg.heat.T if self.cfg.heat.T is not None else self.hist.t_final

    @property
    def G(self) -> HeatSolution:
        if self._G is None:
            h = self.cfg.heat
            self._G = fundamental_solution(
                self.hist, self.T, h.t_stop, width=h.width, dt=self.heat_dt(), record_every=self.record_every()
            )
        return self._G


def _flow(r: _Run):
    hist = r.hist
    if r.cfg.kind == "flow":
        step = max(1, math.ceil(len(hist) / HISTORY_MAX_SNAPSHOTS))
        keep = hist.states[::step] if (len(hist) - 1) % step == 0 else hist.states[::step] + [hist.states[-1]]
        r.files.extend(emit_plotdata(FlowHistory(keep), r.out))
    m0, m1 = hist.states[0], hist.states[-1]
    summary = {"kind": "flow", "inputs": {"family": r.cfg.flow.family, "N": r.cfg.flow.N,
                                           "t_end": r.cfg.flow.t_end, "cfl": r.cfg.flow.cfl},
               "resolution": {"snapshots": len(hist), "t_final": hist.t_final}, "margins": {}}
    status = PASS
    bad = [k for k, m in enumerate(hist.states) if m.invariant_violations()]
    summary["margins"]["invariant_violations"] = len(bad)
    if bad:
        status = FAIL
    if r.cfg.flow.family == "round" and r.cfg.s_override is None:
        j = m0.grid.N // 2
        exact = np.array([r.cfg.flow.r0**2 - 4.0 * t for t in hist.times])
        got = np.array([m.f[j] ** 2 for m in hist.states])
        err = float(np.max(np.abs(got - exact) / np.abs(exact)))
        summary["margins"]["round_rel_error"] = err
        if err > 1e-6:
            status = FAIL
    sy = ineq.hypothesis_flags(hist)
    summary["margins"]["sy_nonnegative"] = sy["sy_nonnegative"]
    summary["status"] = status
    r.write_json("flow.json", summary)
    r.record("flow", status)


def _kernel(r: _Run):
    G = r.G
    r.record("kernel_mass", PASS if G.mass_defect(1.0) <= MASS_TOL and G.values.min() >= -1e-12 else FAIL, G)
    od = ineq.on_diagonal_check(r.hist, G)
    r.record("on_diagonal", od.status, od)


def _entropy(r: _Run):
    G = r.G
    w = G.width or 0.0
    rep = monotonicity_trace(r.hist, G, 0.5 * w * w, a_params=r.cfg.checks.a_params)
    sl = rep.interior()
    resF = float(rep.res_F[sl].max()) if rep.res_F[sl].size else float("nan")
    resW = float(rep.res_W[sl].max()) if rep.res_W[sl].size else float("nan")
    ok = resF <= ENTROPY_TOL and resW <= ENTROPY_TOL and not rep.flags()
    r.record("entropy", PASS if ok else FAIL, rep)
    gen = {}
    for a in rep.Wgen:
        bound = rep.prodWgen[a][sl]
        rel = (rep.dWgen_dt[a][sl] - bound) / np.maximum(1.0, np.abs(bound))
        gen[repr(float(a))] = float(rel.min()) if rel.size else float("nan")
    gen_ok = all(v >= -ENTROPY_TOL for v in gen.values())
    r.write_json("entropy.json", {
        "kind": "entropy", "inputs": {"tau_offset": 0.5 * w * w, "a_params": list(rep.Wgen)},
        "margins": {"res_F_max": resF, "res_W_max": resW, "rate_flags": rep.flags(),
                    "wgen_min_relative_margin": gen, "below_floor_max": int(rep.below_floor.max(initial=0)),
                    "note": "" if rep.res_F[sl].size else "no resolved times; refine the grid or lengthen T"},
        "resolution": {"N": G.grid.N, "width": w, "samples": len(rep.times)},
    })
    r.record("entropy_generalized", PASS if gen_ok else FAIL)


def _sobolev(r: _Run):
    c = r.cfg.checks
    hist = r.hist
    times = [t for t in c.sobolev_times if hist.t0 <= t <= hist.t_final]
    try:
        bests = [ineq.best_sobolev_constant(metric_at(hist, t), seed=c.seed) for t in times]
    except DomainError as exc:
        r.write_json("sobolev.json", {"kind": "sobolev", "status": FLAG, "margins": {"note": str(exc)}})
        r.record("sobolev", FLAG)
        return
    A, B = ineq.certified_pair(bests)
    A0 = bests[0].A_best
    worst, payload = PASS, {"kind": "sobolev", "inputs": {"A": A, "B": B, "times": times, "seed": c.seed},
                            "margins": {}, "resolution": {"N": hist.grid.N}}
    for t, b in zip(times, bests):
        s = ineq.verify_uniform_sobolev(hist, t, A, B, c.family_size, c.seed)
        ls = ineq.verify_log_sobolev(hist, t, c.eps_list, c.family_size, A0, 0.0, c.seed)
        nash = ineq.nash_check(metric_at(hist, t), A, B, c.family_size, c.seed)
        payload["margins"][repr(t)] = {
            "A_best": b.A_best, "certificate_min": b.certificate_min, "sobolev_min": s.margin_min,
            "log_sobolev_min": ls.margins["min"], "nash_min": nash.margins["min"],
        }
        for st in (s.status, ls.status, nash.status):
            worst = max(worst, st, key=_SEVERITY.get)
    payload["status"] = worst
    r.write_json("sobolev.json", payload)
    r.record("sobolev", worst)


def _gaussian(r: _Run):
    rep = ineq.gaussian_bound_check(r.hist, r.G, r.cfg.checks.c1)
    r.record("gaussian", rep.status, rep)


def _pointwise(r: _Run):
    hist = r.hist
    u0 = ineq.bump_solution_data(hist.states[0])
    u = solve_forward(hist, u0, hist.t0, hist.t_final, dt=1e-4, record_every=5)
    g = ineq.gradient_estimate_check(hist, u)
    r.record("gradient_estimate", g.status, g)
    ip = ineq.interpolation_check(hist, u, r.cfg.checks.delta_list)
    r.record("interpolation", ip.status, ip)
    rows, worst = [], PASS
    sy = all(sy_nonnegative(hist))
    for t in np.linspace(hist.t0, hist.t_final, 7)[1:-1]:
        for x in (math.pi / 4, math.pi / 2, math.pi):
            d = distance_derivative_residual(hist, float(t), x)
            rows.append({"t": float(t), "x": x, "rate": d.rate_fd, "identity": d.rate_identity, "residual": d.residual})
            if sy and not d.nonincreasing:
                worst = FAIL
    r.record("distance", worst if sy else FLAG,
             VerificationReport("distance", worst if sy else FLAG, {"sy_nonnegative": sy},
                                {"max_rate": max(x["rate"] for x in rows)}, {"N": hist.grid.N}, None, rows))
    G = r.G
    rad = r.cfg.checks.mean_value_r
    t0 = float(G.times[0])
    if t0 + rad * rad <= G.times[-1]:
        mv = ineq.mean_value_check(hist, G, rad, t0)
        r.record("mean_value", mv.status, mv)


_SUITES = {
    "flow": (_flow,),
    "kernel": (_flow, _kernel),
    "entropy": (_flow, _entropy),
    "sobolev": (_flow, _sobolev),
    "gaussian": (_flow, _kernel, _gaussian),
    "verify-all": (_flow, _kernel, _entropy, _sobolev, _gaussian, _pointwise),
}


def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Run the suite for ``cfg.kind``; errors become failed checks with context."""
    start = time.perf_counter()
    r = _Run(cfg)
    r.out.mkdir(parents=True, exist_ok=True)
    for stage in _SUITES[cfg.kind]:
        name = stage.__name__.lstrip("_")
        try:
            stage(r)
        except BlowUpError as exc:
            r.record(name, FAIL)
            r.write_json("error.json", {"stage": name, "error": str(exc), "t": exc.t})
            break
        except (DomainError, ValueError) as exc:
            r.record(name, FAIL)
            r.write_json(f"error_{name}.json", {"stage": name, "error": str(exc)})
    files = {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(set(r.files))}
    manifest = RunManifest(_version(), cfg.to_text(), time.perf_counter() - start, r.checks, files, cfg.checks.seed)
    (r.out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    defaults = ExperimentConfig("verify-all").to_text()
    p = argparse.ArgumentParser(
        prog="rhflow",
        description="Ricci-harmonic flow laboratory: flows, heat kernels and inequality checks.",
        epilog="config defaults (key = value):\n\n" + defaults,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", choices=KINDS + ("print-config",))
    p.add_argument("--config", type=Path, help="config file; missing keys take the defaults")
    p.add_argument("--out", help="output directory (overrides [experiment] out)")
    p.add_argument("--seed", type=int, help="seed for test-function families")
    p.add_argument("--grid", type=int, help="grid size N (overrides [flow] N)")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    kind = "verify-all" if args.command == "print-config" else args.command
    try:
        text = args.config.read_text() if args.config else ""
        cfg = parse_config(text, kind)
        if args.command != "print-config":
            cfg.kind = args.command
        if args.out:
            cfg.out = args.out
        if args.seed is not None:
            cfg.checks = replace(cfg.checks, seed=args.seed)
        if args.grid is not None:
            cfg.flow = replace(cfg.flow, N=args.grid)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"rhflow: {exc}", file=sys.stderr)
        return 1
    if args.command == "print-config":
        sys.stdout.write(cfg.to_text())
        return 0
    manifest = run_experiment(cfg)
    if not args.quiet:
        print(f"{cfg.kind}: {manifest.status} ({manifest.wall_clock:.1f} s) -> {cfg.out}/manifest.json")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
