"""Command-line driver: INI configuration, pipeline execution and CSV/JSON emission.

Exit codes: 0 ok, 2 configuration error, 3 solver error, 4 analysis error.
Errors are written as a JSON record to stderr and to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import datetime
import difflib
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .ambient import FAMILIES, InitialDataSet, bowen_york_data, make_metric, time_symmetric, toy_momentum_data
from .cmc import ContinuationPolicy, Foliation, solve_cmc, trace_foliation
from .coordinates import build_chart, center_curve, flatness_verify, trace_frames
from .errors import CMCFoliateError, ConfigError
from .invariants import (
    adm_linear_momentum,
    adm_mass_flux,
    adm_mass_ricci,
    cmc_linear_momentum,
    foliation_properties,
    hawking_limit_mass,
)
from .sphere import get_grid, lm_index
from .surface import EmbeddedSphere, hawking_mass, regularity_report
from .uniformization import gauss_curvature_conformal, l2_norm, recover_conformal_factor

log = logging.getLogger("cmcfoliate")

WORKERS_ENV = "CMCFOLIATE_WORKERS"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ANALYSIS = 0, 2, 3, 4
SUBCOMMANDS = ("solve-cmc", "trace", "masses", "momentum", "coords", "properties", "uniformize", "report")
DATA_KINDS = ("time_symmetric", "toy", "bowen_york")


# -- configuration ------------------------------------------------------------------

# section -> key -> (type, default); "vec" is a comma-separated triple, "list" any length
SCHEMA = {
    "metric": {
        "family": ("str", "schwarzschild"),
        "mass": ("float", 1.0),
        "amplitude": ("float", 0.0),
        "tau": ("float", 1.0),
        "omega": ("float", 1.0),
        "center": ("vec", (0.0, 0.0, 0.0)),
        "phase": ("str", "angular"),
    },
    "solver": {
        "l_max": ("int", 24),
        "tol": ("float", 1e-9),
        "sigma_min": ("float", 20.0),
        "sigma_max": ("float", 200.0),
        "sigma": ("float", 50.0),
        "initial_step": ("float", 0.125),
        "max_iter": ("int", 30),
    },
    "analysis": {
        "radii": ("list", (100.0, 200.0)),
        "adm_radius": ("float", 400.0),
        "eps": ("float", 0.0),
        "workers": ("int", 1),
    },
    "data": {
        "kind": ("str", "time_symmetric"),
        "amplitude": ("float", 0.3),
        "momentum": ("vec", (0.0, 0.0, 0.0)),
    },
    "uniformize": {
        "fixture": ("str", "curvature_y20"),
        "tol": ("float", 1e-10),
    },
    "output": {
        "dir": ("str", "out"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    family: str
    mass: float
    amplitude: float
    tau: float
    omega: float
    center: tuple
    phase: str
    l_max: int
    tol: float
    sigma_min: float
    sigma_max: float
    sigma: float
    initial_step: float
    max_iter: int
    radii: tuple
    adm_radius: float
    eps: float
    workers: int
    data_kind: str
    data_amplitude: float
    data_momentum: tuple
    fixture: str
    uniformize_tol: float
    out_dir: str

    def metric(self):
        return make_metric(self.family, self.mass, self.amplitude, self.tau, self.omega, self.center, self.phase)

    def policy(self) -> ContinuationPolicy:
        return ContinuationPolicy(
            l_max=self.l_max,
            initial_step=self.initial_step,
            tol_scale=self.tol,
            max_iter=self.max_iter,
            center=self.center,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _suggest(word, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1, cutoff=0.6)
    if not close:
        close = [o for o in options if o.replace("_", "") == word.replace("_", "")]
    return f"; did you mean {close[0]!r}?" if close else ""


def _convert(section, key, kind, raw):
    try:
        if kind == "str":
            return raw.strip()
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        parts = tuple(float(p) for p in raw.replace(" ", "").split(",") if p)
        if kind == "vec" and len(parts) != 3:
            raise ValueError("expected three comma-separated numbers")
        return parts
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind}: {exc}", kind="type") from exc


def _range(cond, message):
    if not cond:
        raise ConfigError(message, kind="range")


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}", kind="syntax") from exc
    values = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]{_suggest(section, SCHEMA)}", kind="unknown_key")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(
                    f"unknown key {key!r} in [{section}]{_suggest(key, SCHEMA[section])}", kind="unknown_key"
                )
            values[section][key] = _convert(section, key, SCHEMA[section][key][0], raw)
    m, s, a, d, u = (values[k] for k in ("metric", "solver", "analysis", "data", "uniformize"))

    _range(m["family"] in FAMILIES, f"[metric] family must be one of {', '.join(FAMILIES)}")
    _range(m["phase"] in ("angular", "cartesian"), "[metric] phase must be 'angular' or 'cartesian'")
    _range(s["l_max"] >= 4, "[solver] l_max must be at least 4")
    _range(s["tol"] > 0, "[solver] tol must be positive")
    _range(s["max_iter"] > 0, "[solver] max_iter must be positive")
    _range(0 < s["initial_step"] <= 0.25, "[solver] initial_step must lie in (0, 0.25]")
    _range(s["sigma_min"] > 0 and s["sigma"] > 0, "[solver] sigma_min and sigma must be positive")
    _range(
        s["sigma_min"] < s["sigma_max"],
        f"[solver] sigma_min ({s['sigma_min']:g}) must be smaller than sigma_max ({s['sigma_max']:g})",
    )
    _range(all(r > 0 for r in a["radii"]) and a["radii"], "[analysis] radii must be positive")
    _range(a["adm_radius"] > 0, "[analysis] adm_radius must be positive")
    _range(a["eps"] >= 0, "[analysis] eps must be nonnegative")
    _range(a["workers"] >= 1, "[analysis] workers must be at least 1")
    _range(d["kind"] in DATA_KINDS, f"[data] kind must be one of {', '.join(DATA_KINDS)}")
    _range(u["tol"] > 0, "[uniformize] tol must be positive")

    workers = a["workers"]
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            workers = int(env)
        except ValueError as exc:
            raise ConfigError(f"{WORKERS_ENV}={env!r} is not an integer", kind="type") from exc
        _range(workers >= 1, f"{WORKERS_ENV} must be at least 1")

    return RunConfig(
        family=m["family"],
        mass=m["mass"],
        amplitude=m["amplitude"],
        tau=m["tau"],
        omega=m["omega"],
        center=tuple(m["center"]),
        phase=m["phase"],
        l_max=s["l_max"],
        tol=s["tol"],
        sigma_min=s["sigma_min"],
        sigma_max=s["sigma_max"],
        sigma=s["sigma"],
        initial_step=s["initial_step"],
        max_iter=s["max_iter"],
        radii=tuple(a["radii"]),
        adm_radius=a["adm_radius"],
        eps=a["eps"],
        workers=workers,
        data_kind=d["kind"],
        data_amplitude=d["amplitude"],
        data_momentum=tuple(d["momentum"]),
        fixture=u["fixture"],
        uniformize_tol=u["tol"],
        out_dir=values["output"]["dir"],
    )


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {str(path)!r} not found", kind="missing")
    return parse_config_text(path.read_text(), str(path))


# -- fixtures -----------------------------------------------------------------------


def load_fixture(name: str) -> dict:
    """Bundled fixture by name (without .json) or a JSON file path."""
    p = Path(name)
    if p.suffix == ".json" and p.is_file():
        return json.loads(p.read_text())
    try:
        text = resources.files("cmcfoliate").joinpath("fixtures", f"{name}.json").read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"fixture {name!r} not found", kind="missing", operation="fixture") from exc
    return json.loads(text)


def curvature_from_fixture(fx: dict, l_max: int) -> np.ndarray:
    """Nodal K on the grid of ``l_max`` from {"constant", "harmonics": [[l, m, c], ...]} or {"coeffs"}."""
    grid = get_grid(l_max)
    c = np.zeros(grid.n_coeffs)
    if "coeffs" in fx:
        src = np.asarray(fx["coeffs"], dtype=float)
        n = min(src.size, c.size)
        c[:n] = src[:n]
    c[0] += fx.get("constant", 0.0) * math.sqrt(4 * math.pi)
    for l, m, v in fx.get("harmonics", []):
        if l > l_max:
            raise ConfigError(f"fixture harmonic degree {l} exceeds l_max={l_max}", kind="range")
        c[lm_index(int(l), int(m))] += v
    return grid.synthesize(c)


def make_data(cfg: RunConfig, metric) -> InitialDataSet:
    if cfg.data_kind == "toy":
        data = toy_momentum_data(cfg.data_amplitude)
    elif cfg.data_kind == "bowen_york":
        data = bowen_york_data(cfg.data_momentum)
    else:
        data = time_symmetric(metric)
    return dataclasses.replace(data, metric=metric)


# -- output helpers -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, fields, rows, timestamp: bool = True):
    """CSV with one '# ...' header line; the body is byte-stable across reruns."""
    with open(path, "w", newline="") as fh:
        if timestamp:
            stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
            fh.write(f"# cmcfoliate {__version__} generated {stamp}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) for f in fields])


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(path: Path, obj):
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# -- pipeline stages ----------------------------------------------------------------


class Run:
    """One CLI invocation; caches the foliation so ``report`` traces once."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.metric = cfg.metric()
        self._foliation = None
        self.report = {"config": cfg.as_dict(), "version": __version__}

    def pool_map(self, fn, items):
        items = list(items)
        if self.cfg.workers == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as ex:
            return list(ex.map(fn, items))

    @property
    def foliation(self) -> Foliation:
        if self._foliation is None:
            c = self.cfg
            self._foliation = trace_foliation(self.metric, c.sigma_min, c.sigma_max, c.policy())
        return self._foliation

    # each stage returns the files it wrote

    def solve_cmc(self):
        c = self.cfg
        guess = EmbeddedSphere.round(c.sigma, c.l_max, c.center)
        leaf = solve_cmc(self.metric, c.sigma, guess, tol=c.tol / c.sigma**2, max_iter=c.max_iter)
        reg = regularity_report(self.metric, leaf.sphere, geom=leaf.geom)
        rec = {"leaf": leaf.to_dict(), "regularity": reg.as_dict(), "hawking_mass": hawking_mass(leaf.geom)}
        self.report["leaf"] = {k: v for k, v in rec.items() if k != "leaf"} | {"sigma": leaf.sigma}
        write_json(self.out / "leaf.json", rec)
        return ["leaf.json"]

    def trace(self):
        fol = self.foliation
        regs = self.pool_map(lambda lf: regularity_report(self.metric, lf.sphere, geom=lf.geom), fol.leaves)
        rows = []
        for leaf, lap, reg in zip(fol.leaves, fol.lapses, regs):
            rows.append(
                {
                    "sigma": leaf.sigma,
                    "area_radius": leaf.geom.area_radius,
                    "hawking_mass": reg.hawking,
                    "tracefree_linf": reg.linf_tracefree,
                    "newton_iters": leaf.newton_iters,
                    "residual": leaf.residual,
                    "ubar": lap.mean,
                    "u_trans_sup": lap.trans_sup,
                    "u_deform_sup": lap.deform_sup,
                    "center_x": leaf.center[0],
                    "center_y": leaf.center[1],
                    "center_z": leaf.center[2],
                }
            )
        write_csv(self.out / "trace.csv", list(rows[0]), rows)
        write_json(self.out / "foliation.json", {"leaves": [lf.to_dict() for lf in fol.leaves], "events": fol.events})
        self.report["trace"] = {"n_leaves": len(rows), "sigma": [r["sigma"] for r in rows], "events": fol.events}
        return ["trace.csv", "foliation.json"]

    def masses(self):
        fol = self.foliation
        c = self.cfg
        mh = self.pool_map(lambda lf: hawking_mass(lf.geom), fol.leaves)
        flux = self.pool_map(lambda r: adm_mass_flux(self.metric, r, c.l_max, center=c.center), c.radii)
        flux_ind = self.pool_map(
            lambda r: adm_mass_flux(self.metric, r, c.l_max, convention="induced", center=c.center), c.radii
        )
        ricci = self.pool_map(lambda r: adm_mass_ricci(self.metric, r, c.l_max, center=c.center), c.radii)
        try:
            limit, unc = hawking_limit_mass(fol.sigmas, mh)
        except ValueError as exc:
            limit, unc = math.nan, math.nan
            log.warning("hawking limit unavailable: %s", exc)
        rows = [{"x": s, "value": v, "method": "hawking"} for s, v in zip(fol.sigmas, mh)]
        for name, vals in (("adm_flux", flux), ("adm_flux_induced", flux_ind), ("adm_ricci", ricci)):
            rows += [{"x": r, "value": v, "method": name} for r, v in zip(c.radii, vals)]
        rows.append({"x": math.inf, "value": limit, "method": "hawking_limit"})
        rows.append({"x": math.inf, "value": unc, "method": "hawking_limit_uncertainty"})
        write_csv(self.out / "masses.csv", ["x", "value", "method"], rows)
        self.report["masses"] = {
            "hawking": dict(zip(map(str, fol.sigmas.tolist()), mh)),
            "adm_flux": dict(zip(map(str, c.radii), flux)),
            "adm_flux_induced": dict(zip(map(str, c.radii), flux_ind)),
            "adm_ricci": dict(zip(map(str, c.radii), ricci)),
            "hawking_limit": limit,
            "hawking_limit_uncertainty": unc,
        }
        return ["masses.csv"]

    def momentum(self):
        fol = self.foliation
        c = self.cfg
        data = make_data(c, self.metric)
        adm = adm_linear_momentum(data, c.adm_radius, c.l_max, center=c.center)
        cmc = self.pool_map(lambda lf: cmc_linear_momentum(lf, data).vector, fol.leaves)
        rows = []
        for s, p in zip(fol.sigmas, cmc):
            rows.append(
                {
                    "sigma": s,
                    "p1": p[0],
                    "p2": p[1],
                    "p3": p[2],
                    "adm1": adm[0],
                    "adm2": adm[1],
                    "adm3": adm[2],
                    "gap": float(np.linalg.norm(p - adm)),
                }
            )
        write_csv(self.out / "momentum.csv", list(rows[0]), rows)
        self.report["momentum"] = {"data": data.name, "adm": adm, "adm_radius": c.adm_radius, "cmc": rows}
        return ["momentum.csv"]

    def coords(self):
        fol = self.foliation
        frames = trace_frames(fol)
        centers = center_curve(fol, frames)
        chart = build_chart(fol, frames, centers)
        rep = flatness_verify(chart, self.cfg.eps)
        with open(self.out / "chart.jsonl", "w") as fh:
            for rec in chart.records():
                fh.write(json.dumps(rec) + "\n")
        rows = [
            {"sigma": s, "sup_deviation": d, "weighted": w, "z1": z[0], "z2": z[1], "z3": z[2]}
            for s, d, w, z in zip(rep.sigma, rep.sup_deviation, rep.weighted, centers.z)
        ]
        write_csv(self.out / "flatness.csv", list(rows[0]), rows)
        self.report["coords"] = rep.as_dict() | {"center_curve": centers.z}
        return ["chart.jsonl", "flatness.csv"]

    def properties(self):
        props = foliation_properties(self.foliation)
        rows = list(props.rows())
        write_csv(self.out / "properties.csv", list(rows[0]), rows)
        self.report["properties"] = {
            "rows": rows,
            "a1_alt_normalization": props.a1_alt_normalization,
            "notes": props.notes,
        }
        return ["properties.csv"]

    def uniformize(self):
        c = self.cfg
        fx = load_fixture(c.fixture)
        K = curvature_from_fixture(fx, c.l_max)
        res = recover_conformal_factor(K, l_max=c.l_max, tol=c.uniformize_tol)
        check = l2_norm(get_grid(c.l_max), gauss_curvature_conformal(res.factor).values - K)
        rec = {
            "fixture": c.fixture,
            "factor": res.factor.to_dict(),
            "curvature_residual": check,
            "iterations": res.iterations,
            "balance_residual": res.balance_residual,
            "h2_norm": res.factor.h2_norm(),
        }
        write_json(self.out / "w.json", rec)
        self.report["uniformize"] = {k: v for k, v in rec.items() if k != "factor"}
        return ["w.json"]

    def full_report(self):
        files = []
        files += self.trace()
        files += self.masses()
        files += self.properties()
        if self.cfg.data_kind != "time_symmetric":
            files += self.momentum()
        files += self.coords()
        rows = []
        fol = self.foliation
        props = self.report["properties"]["rows"]
        for leaf, lap, pr in zip(fol.leaves, fol.lapses, props):
            for name, val in (
                ("hawking_mass", hawking_mass(leaf.geom)),
                ("area_radius", leaf.geom.area_radius),
                ("ubar", lap.mean),
                ("a2", pr["a2"]),
                ("area_identity", pr["area_identity"]),
                ("mass_derivative_identity", pr["mass_derivative_identity"]),
            ):
                rows.append({"sigma": leaf.sigma, "quantity": name, "value": val})
        write_csv(self.out / "report.csv", ["sigma", "quantity", "value"], rows)
        return files + ["report.csv"]


STAGES = {
    "solve-cmc": Run.solve_cmc,
    "trace": Run.trace,
    "masses": Run.masses,
    "momentum": Run.momentum,
    "coords": Run.coords,
    "properties": Run.properties,
    "uniformize": Run.uniformize,
    "report": Run.full_report,
}


def run(subcommand: str, cfg: RunConfig, out: Path | None = None) -> list:
    """Execute one subcommand and write report.json; returns the written file names."""
    out = Path(out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, out)
    files = STAGES[subcommand](r)
    r.report["subcommand"] = subcommand
    r.report["files"] = files
    write_json(out / "report.json", r.report)
    return files + ["report.json"]


# -- entry point --------------------------------------------------------------------


SOLVER_MODULES = {"ambient", "sphere_spectral", "surface_geometry", "cmc_solver", "uniformization"}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, CMCFoliateError) and exc.module in SOLVER_MODULES:
        return EXIT_SOLVER
    return EXIT_ANALYSIS


def error_record(exc: BaseException, subcommand: str) -> dict:
    if isinstance(exc, CMCFoliateError):
        rec = exc.record()
    else:
        rec = {"module": "analysis", "operation": subcommand, "message": f"{type(exc).__name__}: {exc}"}
    rec.setdefault("operation", subcommand)
    if not rec["operation"]:
        rec["operation"] = subcommand
    rec["exit_code"] = exit_code_for(exc)
    return rec


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmcfoliate", description="CMC foliations, masses, momenta and charts.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="INI configuration file (defaults apply when omitted)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--verbose", action="store_true", help="log solver progress to stderr")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = parse_config(args.config) if args.config else parse_config_text("")
        out = out or Path(cfg.out_dir)
        files = run(args.subcommand, cfg, out)
    except Exception as exc:  # every failure becomes a structured record
        rec = error_record(exc, args.subcommand)
        print(json.dumps(rec), file=sys.stderr)
        if out is not None:
            try:
                out.mkdir(parents=True, exist_ok=True)
                write_json(out / "error.json", rec)
            except OSError:
                pass
        if args.verbose:
            log.exception("run failed")
        return rec["exit_code"]
    for f in files:
        print(out / f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
