"""Scenario files, run orchestration, report output and the command line.

A scenario is one TOML file.  Tables and keys (defaults in brackets)::

    name = "label"                    # [file stem]
    run = "index-fixed"               # shoot | solve | index-fixed | index-periodic | periodic-sweep
    seed = 0

    [chart]        name = "euclidean" | "polar-flat" | "sphere-polar" | "conformal"
                   dim [2], radius [1.0], phi = [[coeff, [e1, e2]], ...]
    [hypersurface] name = "hyperplane" | "circle" | "sphere-level" | "slab" | "polynomial"
                   boundary [false] plus the registry parameters (axis, offset, radius,
                   center, lower, upper, poly)
    [potential]    name ["zero"] | "harmonic" (k) | "polynomial" (poly)
                   | "piecewise-polynomial" (plus, minus)
    [initial]      x, v, T                      (shoot and index runs)
    [endpoints]    x, y, T, v_guess             (solve runs)
    [policy]       decisions [[]], overflow ["reflect"] | "transmit" | "error"
    [periodic]     base ["auto"] or a time, closure_tol [1e-7]
    [sweep]        draws [50], max_coeff [0.05], degree [3], x_range [0.5]
    [numerics]     method, rtol, atol, v_min, max_events, tol_y, k0, h, grid_dt,
                   tol_rank, rtol_eig, jump_samples, probes
    [expect]       index, nullity, periodic_index, event_count, conjugate_times,
                   conjugate_multiplicities, conjugate_tol

Polynomials are lists of ``[coeff, [exponents]]`` pairs; no code is evaluated.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import io
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import quad

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import (Decision, EventKind, EventPolicy, IntegratorOptions, Overflow, action,
                       criticality_residual, shoot, two_point_solve)
from .errors import (C1ViolationError, DegenerateError, InputError, NumericalError, ReflectedMorseError,
                     ScenarioParseError, ScenarioValidationError)
from .fields import random_admissible_field
from .geometry import (check_c1_matching, make_chart, make_hypersurface, make_potential, polynomial_from_terms,
                       unit_normal)
from .index_form import BC, assemble_index_form
from .jacobi import conjugate_points, fundamental, jump_residuals, propagate_jacobi
from .morse import (closure_defect, default_base_time, fixed_endpoint_index_theorem, periodic_index_theorem,
                    rebase, splitting_orthogonality_check)

BUILTIN_DIR = Path(__file__).with_name("scenarios")
RUN_TYPES = ("shoot", "solve", "index-fixed", "index-periodic", "periodic-sweep")

EXIT_OK, EXIT_FAILED, EXIT_DEGENERATE, EXIT_INPUT, EXIT_INCONCLUSIVE = 0, 2, 3, 4, 5

DEFAULT_NUMERICS = {
    "method": "DOP853",
    "rtol": 1e-10,
    "atol": 1e-12,
    "v_min": 1e-6,
    "max_events": 64,
    "tol_y": 1e-9,
    "k0": 8,
    "h": 1e-4,
    "grid_dt": None,
    "tol_rank": 1e-7,
    "rtol_eig": 1e-7,
    "jump_samples": 20,
    "probes": 20,
}
JUMP_BOUND = 1e-8
CRITICALITY_BOUND = 1e-6
SPLITTING_BOUND = 1e-7


# ----------------------------------------------------------------------------------
# loading


@dataclass
class Scenario:
    name: str
    run: str
    seed: int
    data: dict
    source: Optional[str] = None
    geom: object = None
    surf: object = None
    pot: object = None
    policy: EventPolicy = None
    options: IntegratorOptions = None

    @property
    def numerics(self) -> dict:
        return self.data["numerics"]

    @property
    def expect(self) -> dict:
        return self.data.get("expect", {})

    def echo(self) -> dict:
        return copy.deepcopy(self.data)

    def ks(self):
        k0 = int(self.numerics["k0"])
        return (k0, 2 * k0, 4 * k0)


def _line_of(text: str, key: str, table: Optional[str] = None) -> Optional[int]:
    """Best-effort line number of ``key`` (inside ``[table]`` when given)."""
    if text is None:
        return None
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]", line)
        if m:
            current = m.group(1)
            if key is None and current == table:
                return i
            continue
        if key is not None and current == table and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return None


def _invalid(msg, text, key=None, table=None, cls=ScenarioValidationError):
    line = _line_of(text, key, table)
    where = f" (line {line})" if line else ""
    err = cls(f"{msg}{where}")
    err.line = line
    return err


def _vector(value, dim, what, text, key, table):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise _invalid(f"{what} must be a list of numbers", text, key, table) from None
    if arr.shape != (dim,):
        raise _invalid(f"{what} must have {dim} components", text, key, table)
    return arr


def _require(table: dict, key: str, tname: str, text):
    if key not in table:
        raise _invalid(f"missing key {key!r} in [{tname}]", text, None, tname)
    return table[key]


def parse_scenario(text: str, name: str = "scenario", source: Optional[str] = None) -> Scenario:
    """Parse and validate scenario text (see the module docstring for the schema)."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"\s*\(at line (\d+), column \d+\)", str(exc))
        msg = str(exc)[:m.start()] if m else str(exc)
        raise ScenarioParseError(f"invalid TOML: {msg}", int(m.group(1)) if m else None) from None

    known = {"name", "run", "seed", "chart", "hypersurface", "potential", "initial", "endpoints", "policy",
             "periodic", "sweep", "numerics", "expect"}
    for key in raw:
        if key not in known:
            raise _invalid(f"unknown key {key!r}", text, key, None)

    data = {
        "name": str(raw.get("name", name)),
        "run": str(raw.get("run", "shoot")),
        "seed": raw.get("seed", 0),
    }
    if data["run"] not in RUN_TYPES:
        raise _invalid(f"run must be one of {', '.join(RUN_TYPES)}", text, "run")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
        raise _invalid("seed must be an integer", text, "seed")

    numerics = dict(DEFAULT_NUMERICS)
    for key, value in raw.get("numerics", {}).items():
        if key not in DEFAULT_NUMERICS:
            raise _invalid(f"unknown numeric override {key!r}", text, key, "numerics")
        numerics[key] = value
    data["numerics"] = numerics

    policy = {"decisions": [], "overflow": "reflect"}
    policy.update(raw.get("policy", {}))
    data["policy"] = policy

    if data["run"] == "periodic-sweep":
        sweep = {"draws": 50, "max_coeff": 0.05, "degree": 3, "x_range": 0.5}
        sweep.update(raw.get("sweep", {}))
        data["sweep"] = sweep
        data["expect"] = dict(raw.get("expect", {}))
        return Scenario(data["name"], data["run"], data["seed"], data, source)

    if "chart" not in raw:
        raise _invalid("missing [chart] table", text)
    chart = dict(raw["chart"])
    chart.setdefault("dim", 2)
    data["chart"] = chart
    try:
        params = {k: v for k, v in chart.items() if k != "name"}
        geom = make_chart(_require(chart, "name", "chart", text), **params)
    except KeyError as exc:
        raise _invalid(f"unknown chart or missing parameter: {exc}", text, "name", "chart") from None
    except (TypeError, ValueError) as exc:
        raise _invalid(f"bad chart parameters: {exc}", text, None, "chart") from None
    n = geom.dim
    chart["dim"] = n

    surf = None
    if "hypersurface" in raw:
        hs = dict(raw["hypersurface"])
        hs.setdefault("boundary", False)
        data["hypersurface"] = hs
        try:
            params = {k: v for k, v in hs.items() if k != "name"}
            surf = make_hypersurface(_require(hs, "name", "hypersurface", text), n, **params)
        except KeyError as exc:
            raise _invalid(f"unknown hypersurface or missing parameter: {exc}", text, "name", "hypersurface") from None
        except (TypeError, ValueError) as exc:
            raise _invalid(f"bad hypersurface parameters: {exc}", text, None, "hypersurface") from None

    pt = dict(raw.get("potential", {"name": "zero"}))
    pt.setdefault("name", "zero")
    data["potential"] = pt
    if pt["name"] == "piecewise-polynomial":
        if surf is None:
            raise _invalid("a piecewise potential needs a [hypersurface]", text, "name", "potential")
        try:
            plus = polynomial_from_terms(n, _require(pt, "plus", "potential", text))
            minus = polynomial_from_terms(n, _require(pt, "minus", "potential", text))
        except (TypeError, ValueError) as exc:
            raise _invalid(f"bad polynomial: {exc}", text, None, "potential") from None
        worst, ok = check_c1_matching(surf, plus, minus, np.random.default_rng(data["seed"]))
        if not ok:
            raise _invalid(f"piecewise potential is not C1 across the hypersurface (mismatch {worst:.3e})",
                           text, "minus", "potential", cls=C1ViolationError)
    try:
        params = {k: v for k, v in pt.items() if k != "name"}
        pot = make_potential(pt["name"], n, surf, **params)
    except KeyError as exc:
        raise _invalid(f"unknown potential or missing parameter: {exc}", text, "name", "potential") from None
    except (TypeError, ValueError) as exc:
        raise _invalid(f"bad potential parameters: {exc}", text, None, "potential") from None

    try:
        decisions = tuple(Decision(d) for d in policy["decisions"])
        overflow = Overflow(policy["overflow"])
    except ValueError as exc:
        raise _invalid(f"bad event policy: {exc}", text, None, "policy") from None
    ev_policy = EventPolicy(decisions, overflow)
    if surf is not None and surf.boundary:
        if Decision.TRANSMIT in decisions or overflow is Overflow.ALWAYS_TRANSMIT:
            raise _invalid("transmission is forbidden through a boundary hypersurface", text, "decisions", "policy")

    if data["run"] == "solve":
        if "endpoints" not in raw:
            raise _invalid("solve runs need an [endpoints] table", text)
        ep = dict(raw["endpoints"])
        for key in ("x", "y", "v_guess"):
            ep[key] = _vector(_require(ep, key, "endpoints", text), n, key, text, key, "endpoints").tolist()
        ep["T"] = float(_require(ep, "T", "endpoints", text))
        data["endpoints"] = ep
        T = ep["T"]
    else:
        if "initial" not in raw:
            raise _invalid("missing [initial] table", text)
        init = dict(raw["initial"])
        for key in ("x", "v"):
            init[key] = _vector(_require(init, key, "initial", text), n, key, text, key, "initial").tolist()
        init["T"] = float(_require(init, "T", "initial", text))
        data["initial"] = init
        T = init["T"]
        if surf is not None and abs(surf.rho(np.asarray(init["x"]))) < numerics["tol_y"]:
            raise _invalid("initial point lies on the hypersurface", text, "x", "initial")
    if not T > 0:
        raise _invalid("T must be positive", text, "T", "endpoints" if data["run"] == "solve" else "initial")

    if data["run"] == "index-periodic":
        per = {"base": "auto", "closure_tol": 1e-7}
        per.update(raw.get("periodic", {}))
        data["periodic"] = per
    data["expect"] = dict(raw.get("expect", {}))

    try:
        options = IntegratorOptions(method=str(numerics["method"]), rtol=float(numerics["rtol"]),
                                    atol=float(numerics["atol"]), v_min=float(numerics["v_min"]),
                                    max_events=int(numerics["max_events"]), tol_y=float(numerics["tol_y"]))
    except (TypeError, ValueError) as exc:
        raise _invalid(f"bad numeric override: {exc}", text, None, "numerics") from None
    return Scenario(data["name"], data["run"], data["seed"], data, source, geom, surf, pot, ev_policy, options)


def load_scenario(path) -> Scenario:
    """Read and validate one scenario file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from None
    return parse_scenario(text, name=path.stem, source=str(path))


def builtin_scenarios() -> list:
    return sorted(BUILTIN_DIR.glob("*.toml"))


# ----------------------------------------------------------------------------------
# reports


@dataclass
class RunReport:
    scenario: dict
    run: str
    status: str = "pass"
    exit_code: int = EXIT_OK
    sections: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    error: Optional[dict] = None
    timing: float = 0.0
    plot: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, lhs, rhs, relation: str = "=="):
        self.checks.append({"name": name, "passed": bool(passed), "lhs": lhs, "rhs": rhs, "relation": relation})
        return passed

    @property
    def passed(self) -> bool:
        return self.error is None and all(c["passed"] for c in self.checks)

    def finalize(self):
        if self.error is not None:
            return self
        if not all(c["passed"] for c in self.checks):
            self.status, self.exit_code = "fail", EXIT_FAILED
        elif self.status == "degenerate":
            self.exit_code = EXIT_DEGENERATE
        return self

    def to_dict(self, timing: bool = False) -> dict:
        out = {"scenario": self.scenario, "run": self.run, "status": self.status, "exit_code": self.exit_code,
               "checks": self.checks, "results": self.sections}
        if self.error is not None:
            out["error"] = self.error
        if timing:
            out["timing_seconds"] = self.timing
        return out


def _encode_error(report: RunReport, exc: Exception):
    if isinstance(exc, InputError):
        status, code = "input-error", EXIT_INPUT
    elif isinstance(exc, DegenerateError):
        status, code = "degenerate", EXIT_DEGENERATE
    elif isinstance(exc, NumericalError):
        status, code = "inconclusive", EXIT_INCONCLUSIVE
    else:
        status, code = "inconclusive", EXIT_INCONCLUSIVE
    report.status, report.exit_code = status, code
    report.error = {"type": type(exc).__name__, "message": str(exc)}
    table = getattr(exc, "table", None)
    if table is not None:
        report.error["table"] = table


def _angle(geom, surf, e):
    """Angle between the incoming velocity and the normal line, in degrees."""
    G = geom.g(e.point)
    nrm = unit_normal(geom, surf, e.point)
    speed = np.sqrt(float(e.v_in @ G @ e.v_in))
    c = abs(float(nrm @ G @ e.v_in)) / speed
    return float(np.degrees(np.arccos(min(c, 1.0))))


def path_summary(path) -> dict:
    events = []
    for e in path.events:
        events.append({
            "time": e.time,
            "kind": e.kind.value,
            "point": e.point.tolist(),
            "incidence_deg": _angle(path.geom, path.surf, e),
            "normal_speed": e.normal_speed,
        })
    xT, vT = path.final_state
    return {
        "events": events,
        "event_count": len(events),
        "reflections": sum(e.kind is EventKind.REFLECTION for e in path.events),
        "energy_drift": path.energy_drift(),
        "continuity_gap": path.continuity_gap(),
        "action": action(path),
        "x0": np.asarray(path.x0).tolist(),
        "v0": np.asarray(path.v0).tolist(),
        "xT": xT.tolist(),
        "vT": vT.tolist(),
    }


def _jump_check(report, path, rng, samples):
    n = path.dim
    res = jump_residuals(propagate_jacobi(path, rng.standard_normal((n, samples)), rng.standard_normal((n, samples))))
    worst = max(res.values())
    report.sections["jump_residuals"] = res
    report.check("jump_residuals", worst < JUMP_BOUND, worst, JUMP_BOUND, "<")


def _conjugate_list(cps):
    return [{"time": c.time, "multiplicity": c.multiplicity, "sigma_ratio": c.sigma_ratio} for c in cps]


def _expect_conjugates(report, sc, cps):
    exp = sc.expect
    if "conjugate_times" not in exp:
        return
    times = list(exp["conjugate_times"])
    mults = list(exp.get("conjugate_multiplicities", [1] * len(times)))
    tol = float(exp.get("conjugate_tol", 1e-8))
    report.check("expected_conjugate_count", len(cps) == len(times), len(cps), len(times))
    for i, (t, m) in enumerate(zip(times, mults)):
        if i >= len(cps):
            break
        err = abs(cps[i].time - t)
        report.check(f"conjugate_time_{i}", err < tol, err, tol, "<")
        report.check(f"conjugate_multiplicity_{i}", cps[i].multiplicity == m, cps[i].multiplicity, int(m))


def _shoot(sc: Scenario):
    init = sc.data["initial"]
    return shoot(sc.geom, sc.surf, sc.pot, init["x"], init["v"], init["T"], sc.policy, sc.options)


def _run_shoot(sc, report, rng):
    path = _shoot(sc)
    report.sections["path"] = path_summary(path)
    probes = random_admissible_field(path, rng, int(sc.numerics["probes"]), "fixed")
    crit = criticality_residual(path, probes)
    report.sections["criticality_residual"] = crit
    report.check("criticality", crit < CRITICALITY_BOUND, crit, CRITICALITY_BOUND, "<")
    if "event_count" in sc.expect:
        report.check("event_count", len(path.events) == int(sc.expect["event_count"]), len(path.events),
                     int(sc.expect["event_count"]))
    return path


def _run_solve(sc, report, rng):
    ep = sc.data["endpoints"]
    path = two_point_solve(sc.geom, sc.surf, sc.pot, ep["x"], ep["y"], ep["v_guess"], ep["T"], sc.policy, sc.options)
    report.sections["path"] = path_summary(path)
    miss = float(np.max(np.abs(path.final_state[0] - np.asarray(ep["y"]))))
    report.sections["endpoint_miss"] = miss
    report.check("endpoint_miss", miss < 1e-8, miss, 1e-8, "<")
    return path


def _grid_dt(sc, path):
    gd = sc.numerics["grid_dt"]
    return None if gd is None else float(gd)


def _run_index_fixed(sc, report, rng):
    path = _shoot(sc)
    report.sections["path"] = path_summary(path)
    ks = sc.ks()
    cps = conjugate_points(path, _grid_dt(sc, path), float(sc.numerics["tol_rank"]))
    T = path.total_time
    interior = [c for c in cps if c.time < T - 1e-9]
    report.sections["conjugate_points"] = _conjugate_list(cps)
    fixed = fixed_endpoint_index_theorem(path, ks=ks)
    table = fixed.scan
    report.sections["index_table"] = table
    report.sections["index"] = fixed.index
    report.sections["nullity"] = fixed.nullity
    report.sections["endpoint_multiplicity"] = sum(c.multiplicity for c in cps if c.time >= T - 1e-9)
    count = sum(c.multiplicity for c in interior)
    report.check("fixed_index_theorem", fixed.index == count, fixed.index, count)
    report.check("index_stable_in_k", len({r["index"] for r in table}) == 1,
                 min(r["index"] for r in table), max(r["index"] for r in table))
    report.check("nullity_stable_in_k", len({r["nullity"] for r in table}) == 1,
                 min(r["nullity"] for r in table), max(r["nullity"] for r in table))
    exp = sc.expect
    if "index" in exp:
        report.check("expected_index", fixed.index == int(exp["index"]), fixed.index, int(exp["index"]))
    if "nullity" in exp:
        report.check("expected_nullity", fixed.nullity == int(exp["nullity"]), fixed.nullity, int(exp["nullity"]))
    if "event_count" in exp:
        report.check("event_count", len(path.events) == int(exp["event_count"]), len(path.events),
                     int(exp["event_count"]))
    _expect_conjugates(report, sc, interior)
    _jump_check(report, path, rng, int(sc.numerics["jump_samples"]))
    return path


def _periodic_path(sc):
    path = _shoot(sc)
    per = sc.data["periodic"]
    gap = closure_defect(path)
    if gap > float(per["closure_tol"]):
        raise ScenarioValidationError(f"orbit does not close (defect {gap:.3e})")
    base = default_base_time(path) if per["base"] == "auto" else float(per["base"])
    return rebase(path, base) if base != 0.0 else path


def _periodic_checks(report, path, ks, h, rng, expect=None):
    rep = periodic_index_theorem(path, ks=ks, h=h)
    report.sections["closure_defect"] = rep.closure
    report.sections["base_point"] = np.asarray(path.x0).tolist()
    if rep.self_conjugate:
        report.status = "degenerate"
        report.sections["degenerate"] = rep.notes
        return rep
    report.sections["periodic_index"] = rep.periodic_index
    report.sections["periodic_nullity"] = rep.periodic_nullity
    report.sections["fixed_index"] = rep.fixed_index
    report.sections["concavity_index"] = rep.concavity_index
    report.sections["conjugate_count"] = rep.conjugate_count
    report.sections["hessian_eigenvalues"] = rep.hessian.eigenvalues.tolist()
    report.sections["hessian_noise"] = rep.hessian.noise
    report.sections["notes"] = rep.notes
    rhs = rep.fixed_index + rep.concavity_index
    report.check("periodic_index_theorem", rep.passed, rep.periodic_index, rhs)
    report.check("fixed_index_theorem", rep.fixed.passed, rep.fixed_index, rep.conjugate_count)
    split = splitting_orthogonality_check(path, rng)
    report.sections["splitting_residual"] = split
    report.check("splitting_orthogonality", split < SPLITTING_BOUND, split, SPLITTING_BOUND, "<")
    if expect and "periodic_index" in expect:
        report.check("expected_periodic_index", rep.periodic_index == int(expect["periodic_index"]),
                     rep.periodic_index, int(expect["periodic_index"]))
    return rep


def _run_index_periodic(sc, report, rng):
    path = _periodic_path(sc)
    report.sections["path"] = path_summary(path)
    _periodic_checks(report, path, sc.ks(), float(sc.numerics["h"]), rng, sc.expect)
    if report.status != "degenerate":
        _jump_check(report, path, rng, int(sc.numerics["jump_samples"]))
    return path


# ----------------------------------------------------------------------------------
# randomized perturbations of the disk diameter orbit


def perturbed_disk_orbit(seed: int, max_coeff: float = 0.05, degree: int = 3, x_range: float = 0.5,
                         options: Optional[IntegratorOptions] = None):
    """Two-bounce orbit of the unit disk under a random conformal metric ``e^{2 phi}|dx|^2``.

    ``phi`` is a polynomial even in ``y`` with coefficients bounded by
    ``max_coeff``, so the x-axis stays a geodesic and the diameter stays a
    periodic orbit.  The period follows from the arc length along the axis.
    Returns ``(path, phi)`` with the path rebased to its first segment midpoint.
    """
    rng = np.random.default_rng(seed)
    terms = []
    for total in range(1, degree + 1):
        for b in range(0, total + 1, 2):
            terms.append([float(rng.uniform(-max_coeff, max_coeff)), [total - b, b]])
    phi = polynomial_from_terms(2, terms)
    geom = make_chart("conformal", phi=phi)
    disk = make_hypersurface("circle", 2, radius=1.0, boundary=True)
    pot = make_potential("zero", 2)
    xs = float(rng.uniform(-x_range, x_range))
    x0 = np.array([xs, 0.0])
    v0 = np.array([np.exp(-phi(x0)), 0.0])
    T = 2 * quad(lambda s: np.exp(phi(np.array([s, 0.0]))), -1.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    path = shoot(geom, disk, pot, x0, v0, T, EventPolicy.reflect_all(), options or IntegratorOptions())
    path = rebase(path, default_base_time(path))
    return path, phi


def _sweep_draw(args):
    seed, sweep, h, k0 = args
    report = RunReport({"seed": seed}, "index-periodic")
    t0 = time.perf_counter()
    try:
        path, phi = perturbed_disk_orbit(seed, float(sweep["max_coeff"]), int(sweep["degree"]),
                                         float(sweep["x_range"]))
        report.sections["phi"] = [[c, list(e)] for c, e in phi.terms]
        _periodic_checks(report, path, (k0, 2 * k0, 4 * k0), h, np.random.default_rng(seed))
    except ReflectedMorseError as exc:
        _encode_error(report, exc)
    report.timing = time.perf_counter() - t0
    return report.finalize()


def _run_sweep(sc, report, rng, jobs=1):
    sweep = sc.data["sweep"]
    draws = int(sweep["draws"])
    seeds = [int(s) for s in np.random.SeedSequence(sc.seed).generate_state(draws)]
    args = [(s, sweep, float(sc.numerics["h"]), int(sc.numerics["k0"])) for s in seeds]
    results = _map(_sweep_draw, args, jobs)
    rows = []
    for r in results:
        row = {"seed": r.scenario["seed"], "status": r.status}
        for key in ("periodic_index", "fixed_index", "concavity_index", "periodic_nullity"):
            if key in r.sections:
                row[key] = r.sections[key]
        if r.error:
            row["error"] = r.error
        row["checks"] = r.checks
        rows.append(row)
    report.sections["draws"] = rows
    degenerate = sum(r.status == "degenerate" for r in results)
    counted = [r for r in results if r.status != "degenerate"]
    passed = sum(r.error is None and r.status == "pass" for r in counted)
    report.sections["degenerate_count"] = degenerate
    report.sections["counted"] = len(counted)
    report.sections["passed"] = passed
    report.check("sweep_all_nondegenerate_pass", passed == len(counted), passed, len(counted))
    report.check("sweep_degenerate_fraction", 10 * degenerate < draws, degenerate, draws, "10*lhs<rhs")
    return None


def _map(fun, args, jobs):
    if jobs and jobs > 1 and len(args) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fun, args))
    return [fun(a) for a in args]


# ----------------------------------------------------------------------------------
# orchestration


def _plot_data(path, sc) -> dict:
    flow = fundamental(path)
    n = path.dim
    ts = np.linspace(0.0, path.total_time, 801)
    rows = []
    for t in ts:
        B = flow.matrix(t, -1 if t >= path.total_time else 1)[:n, n:]
        rows.append((float(t), float(np.linalg.det(B))))
    eig = {}
    bc = BC.PERIODIC if path.periodic else BC.FIXED
    for k in sc.ks():
        eig[k] = assemble_index_form(path, k, bc, with_conjugates=False).eigenvalues.tolist()
    return {"det_b": rows, "eigenvalues": eig}


def run(scenario: Scenario, verb: Optional[str] = None, seed: Optional[int] = None, jobs: int = 1) -> RunReport:
    """Execute a scenario.  Library errors are recorded in the report, never raised."""
    kind = scenario.run if verb in (None, "verify-all") else verb
    if kind == "emit-plot":
        kind = scenario.run
        want_plot = True
    else:
        want_plot = False
    seed = scenario.seed if seed is None else int(seed)
    echo = scenario.echo()
    echo["seed"] = seed
    report = RunReport(echo, kind)
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    try:
        if kind == "periodic-sweep" or scenario.run == "periodic-sweep":
            if scenario.run != "periodic-sweep":
                raise ScenarioValidationError("periodic-sweep needs a sweep scenario")
            report.run = "periodic-sweep"
            _run_sweep(scenario, report, rng, jobs)
        elif scenario.run == "periodic-sweep":
            raise ScenarioValidationError(f"a sweep scenario cannot run as {kind}")
        else:
            if kind == "solve" and "endpoints" not in scenario.data:
                raise ScenarioValidationError("solve needs an [endpoints] table")
            if kind == "index-periodic" and "periodic" not in scenario.data:
                scenario.data["periodic"] = {"base": "auto", "closure_tol": 1e-7}
                report.scenario["periodic"] = scenario.data["periodic"]
            if kind != "solve" and "initial" not in scenario.data:
                raise ScenarioValidationError(f"{kind} needs an [initial] table")
            runner = {"shoot": _run_shoot, "solve": _run_solve, "index-fixed": _run_index_fixed,
                      "index-periodic": _run_index_periodic}[kind]
            path = runner(scenario, report, rng)
            if want_plot and path is not None:
                report.plot = _plot_data(path, scenario)
    except ReflectedMorseError as exc:
        _encode_error(report, exc)
    report.timing = time.perf_counter() - t0
    return report.finalize()


def aggregate_exit_code(reports) -> int:
    """Input errors dominate, then theorem failures, inconclusive runs and degeneracy."""
    codes = {r.exit_code for r in reports}
    for code in (EXIT_INPUT, EXIT_FAILED, EXIT_INCONCLUSIVE, EXIT_DEGENERATE):
        if code in codes:
            return code
    return EXIT_OK


# ----------------------------------------------------------------------------------
# output


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _to_json(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj) if np.isfinite(obj) else "null"
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_to_json(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_to_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent + 1) for v in seq) + "\n" + end + "]"
    return _to_json(str(obj))


def _flatten(prefix, obj, rows):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, rows)
    elif isinstance(obj, (list, tuple)) and any(isinstance(v, (dict, list, tuple)) for v in obj):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, rows)
    elif isinstance(obj, (list, tuple)):
        rows.append((prefix, " ".join(_cell(v) for v in obj)))
    else:
        rows.append((prefix, _cell(obj)))


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def _plot_text(report: RunReport) -> str:
    out = [f"# scenario {report.scenario.get('name', '')}"]
    if not report.plot:
        out.append("# no plot data")
        return "\n".join(out) + "\n"
    out.append("# t det_B")
    out += [f"{_fmt(t)} {_fmt(d)}" for t, d in report.plot["det_b"]]
    for k, lam in report.plot["eigenvalues"].items():
        out.append("")
        out.append(f"# eigenvalues k={k}")
        out += [f"{i} {_fmt(v)}" for i, v in enumerate(lam)]
    return "\n".join(out) + "\n"


def emit(report, fmt: str = "json") -> str:
    """Serialize one report (or a list of reports) as ``json``, ``csv`` or ``plot-data``."""
    reports = report if isinstance(report, list) else [report]
    if fmt == "json":
        body = [r.to_dict() for r in reports]
        return _to_json(body if isinstance(report, list) else body[0]) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scenario", "key", "value"])
        for r in reports:
            rows = []
            _flatten("", {k: v for k, v in r.to_dict().items() if k != "scenario"}, rows)
            name = r.scenario.get("name", "")
            for key, value in rows:
                writer.writerow([name, key, value])
        return buf.getvalue()
    if fmt == "plot-data":
        return "\n".join(_plot_text(r) for r in reports)
    raise ValueError(f"unknown format {fmt!r}")


# ----------------------------------------------------------------------------------
# command line


def _scenario_files(arg):
    if arg is None:
        return builtin_scenarios()
    p = Path(arg)
    if p.is_dir():
        return sorted(p.glob("*.toml"))
    return [p]


def _run_file(args):
    path, verb, seed, jobs = args
    try:
        sc = load_scenario(path)
    except InputError as exc:
        rep = RunReport({"name": Path(path).stem, "source": str(path)}, verb or "load")
        _encode_error(rep, exc)
        line = getattr(exc, "line", None)
        if line is not None:
            rep.error["line"] = line
        return rep
    return run(sc, verb, seed, jobs)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="reflected-morse",
                                     description="Reflected physical paths and their Morse index theorems.")
    parser.add_argument("verb", choices=["shoot", "solve", "index-fixed", "index-periodic", "verify-all",
                                         "emit-plot"])
    parser.add_argument("--scenario", help="scenario file (verify-all also accepts a directory)")
    parser.add_argument("--out", help="write the report here instead of stdout")
    parser.add_argument("--format", default=None, choices=["json", "csv"],
                        help="report format (emit-plot always writes columnar text)")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for batches")
    args = parser.parse_args(argv)

    if args.verb != "verify-all" and args.scenario is None:
        parser.error(f"{args.verb} needs --scenario")
    files = _scenario_files(args.scenario)
    if not files:
        print(f"no scenario files found at {args.scenario}", file=sys.stderr)
        return EXIT_INPUT

    if args.verb == "verify-all":
        outer = max(1, args.jobs) if len(files) > 1 else 1
        inner = 1 if outer > 1 else args.jobs
        reports = _map(_run_file, [(f, "verify-all", args.seed, inner) for f in files], outer)
        text = emit(reports, args.format or "json")
        code = aggregate_exit_code(reports)
        for r in reports:
            print(f"{r.scenario.get('name', '?')}: {r.status} ({r.timing:.1f} s)", file=sys.stderr)
    else:
        rep = _run_file((files[0], args.verb, args.seed, args.jobs))
        fmt = "plot-data" if args.verb == "emit-plot" else (args.format or "json")
        text = emit(rep, fmt)
        code = rep.exit_code
        print(f"{rep.scenario.get('name', '?')}: {rep.status} ({rep.timing:.1f} s)", file=sys.stderr)

    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
