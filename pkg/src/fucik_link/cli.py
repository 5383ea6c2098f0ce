"""Command-line entry point.

    fucik-link <subcommand> [flags]

Subcommands: eig, curves, oracle1d, theta, tau, solve, estimates.  Settings
come from flags, then an optional ``--config`` file of ``key = value`` lines,
then defaults.  Exit status: 0 success, 2 precondition violated, 3 no
convergence, 64 unknown subcommand, 65 malformed configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ConvergenceError, FucikError, PreconditionError

log = logging.getLogger("fucik_link")

EXIT_OK, EXIT_PRECONDITION, EXIT_CONVERGENCE = 0, 2, 3
EXIT_USAGE, EXIT_CONFIG = 64, 65
SUBCOMMANDS = ("eig", "curves", "oracle1d", "theta", "tau", "solve", "estimates")


@dataclass
class RunConfig:
    domain: str = "interval:pi"
    n: int = 511
    level: int = 2
    a: float | None = None
    b: float | None = None
    a_grid: str | None = None
    kind: str = "nu"
    nl: str = "exponential"
    geometry: str = "below"
    count: int | None = None
    branch: str = "all"
    tol_eig: float = 1e-10
    tol_reduction: float = 1e-11
    tol_b: float | None = None
    tol_crit: float = 1e-6
    seed: int = 0
    out: str = "out"
    lemma: str | None = None
    params: str | None = None

    def validate(self) -> None:
        for name in ("tol_eig", "tol_reduction", "tol_b", "tol_crit"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.level < 1:
            raise ConfigError("level must be >= 1")

    def grid(self) -> np.ndarray:
        if self.a_grid is None:
            if self.a is None:
                raise PreconditionError("give --a or --a-grid")
            return np.array([self.a])
        return parse_grid(self.a_grid)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def parse_grid(text: str) -> np.ndarray:
    """``lo:hi:count`` -> count equispaced points in the closed interval."""
    try:
        lo, hi, count = text.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise ConfigError(f"grid must be lo:hi:count, got {text!r}") from None
    if count < 1 or not hi >= lo:
        raise ConfigError(f"bad grid {text!r}")
    return np.linspace(lo, hi, count)


def _coerce(name: str, raw):
    if name not in _FIELDS:
        raise ConfigError(f"unknown setting {name!r}")
    if raw is None:
        return None
    typ = _FIELDS[name].type
    try:
        if "int" in str(typ):
            return int(raw)
        if "float" in str(typ):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return str(raw)


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys are allowed."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        name = key.strip().replace("-", "_")
        out[name] = _coerce(name, value.strip())
    return out


def resolve_config(flags: dict, file_values: dict | None = None) -> RunConfig:
    """Merge: flag beats file beats default."""
    merged = {}
    for name in _FIELDS:
        if flags.get(name) is not None:
            merged[name] = _coerce(name, flags[name])
        elif file_values and file_values.get(name) is not None:
            merged[name] = file_values[name]
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fucik-link", description=__doc__.splitlines()[0])
    p.add_argument("command")
    p.add_argument("--config")
    p.add_argument("--domain")
    p.add_argument("--n", type=int)
    p.add_argument("--level", type=int)
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--a-grid", dest="a_grid")
    p.add_argument("--kind", choices=["nu", "mu", "both"])
    p.add_argument("--nl", choices=["exponential", "critical_power"])
    p.add_argument("--geometry", choices=["below", "above", "perturbed"])
    p.add_argument("--count", type=int)
    p.add_argument("--branch", choices=["all", "pos", "neg", "nu", "mu"])
    p.add_argument("--tol-eig", dest="tol_eig", type=float)
    p.add_argument("--tol-reduction", dest="tol_reduction", type=float)
    p.add_argument("--tol-b", dest="tol_b", type=float)
    p.add_argument("--tol-crit", dest="tol_crit", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--lemma", choices=["L60", "L8", "L6"])
    p.add_argument("--params", help="comma-separated eps or log j values for --lemma")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# ---------------------------------------------------------------------------
# outputs


def _num(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_num(row[h]) for h in header])
    return path


def write_plot_data(path: Path, x, y) -> Path:
    """Two whitespace-separated columns, readable by gnuplot or numpy.loadtxt."""
    np.savetxt(path, np.column_stack([x, y]), fmt="%.17g")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    spectrum_digest: str | None = None
    files: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def check(self) -> None:
        for f in self.files:
            p = Path(f)
            if not p.is_file() or p.stat().st_size == 0:
                raise FucikError(f"output {f} missing or empty")


def _threads() -> int:
    raw = os.environ.get("FUCIK_LINK_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"FUCIK_LINK_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# pipelines


def _spectrum(cfg: RunConfig, level: int | None = None, count: int | None = None):
    from .discrete_operator import Domain, build_operator, compute_spectrum
    from .fucik_spectrum import spectrum_for_level

    op = build_operator(Domain.parse(cfg.domain), cfg.n)
    if count is not None:
        return compute_spectrum(op, count, tol=cfg.tol_eig, seed=cfg.seed)
    return spectrum_for_level(op, cfg.level if level is None else level, tol=cfg.tol_eig,
                              seed=cfg.seed)


def _point(cfg: RunConfig):
    from .fucik_spectrum import FucikPoint

    if cfg.a is None or cfg.b is None:
        raise PreconditionError("give --a and --b")
    return FucikPoint(cfg.a, cfg.b, cfg.level)


def run_eig(cfg, out: Path, man: RunManifest):
    from .discrete_operator import write_spectrum

    count = cfg.count or 8
    spec = _spectrum(cfg, count=count)
    man.spectrum_digest = spec.digest()
    rows = [{"index": i + 1, "eigenvalue": v, "residual": r}
            for i, (v, r) in enumerate(zip(spec.values, spec.residuals))]
    man.files.append(write_csv(out / "eigenvalues.csv", ["index", "eigenvalue", "residual"], rows))
    man.files.append(write_plot_data(out / "eigenvalues.dat", np.arange(1, spec.count + 1),
                                     spec.values))
    man.files += write_spectrum(out, spec)


def run_curves(cfg, out: Path, man: RunManifest):
    from .fucik_spectrum import trace_curve, write_trace_csv

    spec = _spectrum(cfg)
    man.spectrum_digest = spec.digest()
    kinds = ["nu", "mu"] if cfg.kind == "both" else [cfg.kind]
    for kind in kinds:
        trace = trace_curve(spec, kind, cfg.level, cfg.grid(), tol_b=cfg.tol_b, seed=cfg.seed,
                            workers=_threads())
        stem = f"{kind}_l{cfg.level}"
        path = out / f"{stem}.csv"
        write_trace_csv(path, trace)
        man.files.append(path)
        man.files.append(write_plot_data(out / f"{stem}.dat", trace.a, trace.b))
        skipped = [s.a for s in trace.samples if not s.in_range]
        if skipped:
            log.warning("%s: %d samples leave the window: %s", stem, len(skipped), skipped)


def run_oracle1d(cfg, out: Path, man: RunManifest):
    from .discrete_operator import Domain
    from .fucik_spectrum import fucik_1d_oracle

    dom = Domain.parse(cfg.domain)
    if dom.dim != 1:
        raise PreconditionError("oracle1d needs an interval domain")
    trace = fucik_1d_oracle(cfg.level, cfg.grid(), length=dom.lengths[0], branch=cfg.branch)
    rows = [{"a": s.a, "b": s.b, "kind": s.kind, "level": s.level, "status": s.status}
            for s in trace.samples]
    stem = f"oracle_{cfg.branch}_l{cfg.level}"
    man.files.append(write_csv(out / f"{stem}.csv", ["a", "b", "kind", "level", "status"], rows))
    for kind in sorted({s.kind for s in trace.samples}):
        pts = [(s.a, s.b) for s in trace.samples if s.kind == kind and s.in_range]
        if pts:
            x, y = zip(*pts)
            man.files.append(write_plot_data(out / f"{stem}_{kind}.dat", x, y))


def _probe(spec, modes_lo, seed):
    """Smooth random D-unit probe orthogonal to the first ``modes_lo`` modes."""
    op = spec.op
    rng = np.random.default_rng(seed)
    x = op.solve(rng.standard_normal(op.size))
    split = spec.split(modes_lo)
    x = split.project_m(x) if modes_lo else x
    return x / op.d_norm(x)


def run_reduction(cfg, out: Path, man: RunManifest, which: str):
    from .discrete_operator import write_grid_function
    from .fucik_spectrum import tau_map, theta_map

    spec = _spectrum(cfg)
    man.spectrum_digest = spec.digest()
    point = _point(cfg)
    if which == "theta":
        split = spec.split_level(cfg.level - 1)
        x = _probe(spec, split.modes, cfg.seed)
        sol = theta_map(spec, x, point, tol=cfg.tol_reduction)
    else:
        split = spec.split_level(cfg.level)
        x = split.combine(np.random.default_rng(cfg.seed).standard_normal(split.modes))
        x /= spec.op.d_norm(x)
        sol = tau_map(spec, x, point, tol=cfg.tol_reduction)
    report = {"map": which, "a": point.a, "b": point.b, "level": point.level,
              "modes": split.modes, "residual": sol.residual, "iterations": sol.iterations,
              "value": sol.value, "output_d_norm": spec.op.d_norm(sol.output),
              "coefficients": sol.coefficients, "min_curvature": sol.min_curvature}
    man.files.append(write_json(out / f"{which}.json", report))
    for name, vec in (("input", x), ("output", sol.output)):
        man.files += list(write_grid_function(out / f"{which}_{name}.bin", vec, spec.op.mesh))


def run_solve(cfg, out: Path, man: RunManifest):
    from .discrete_operator import write_grid_function
    from .linking_solver import Nonlinearity, build_geometry, c_star, minimax_search

    spec = _spectrum(cfg)
    man.spectrum_digest = spec.digest()
    point = _point(cfg)
    op = spec.op
    nl = Nonlinearity(cfg.nl, op.mesh.dim)
    kind = {"below": "below_curve", "above": "above_curve", "perturbed": "perturbed_T"}[
        cfg.geometry]
    t0 = time.perf_counter()
    geom = build_geometry(kind, point, spec, nl, seed=cfg.seed)
    man.timings["geometry"] = time.perf_counter() - t0
    cs = c_star(nl, op)
    rep = minimax_search(geom, nl, seed=cfg.seed, tol=cfg.tol_crit, cstar=cs.value)
    data = rep.to_dict()
    data.update({"a": point.a, "b": point.b, "level": point.level, "nonlinearity": nl.kind,
                 "geometry": kind, "d_norm": rep.d_norm, "sup_Q": rep.sup_Q,
                 "c_star_reference": cs.reference, "c_star_method": cs.method,
                 "rho": geom.rho, "delta": geom.delta, "inf_A": geom.inf_A,
                 "sup_support": geom.sup_support, "spike_center": list(geom.center),
                 "t_norm": geom.t_norm, "t_threshold": geom.t_threshold,
                 "trace": rep.trace})
    man.files.append(write_json(out / "report.json", data))
    man.files += list(write_grid_function(out / "solution.bin", rep.u, op.mesh,
                                          classification=rep.classification))
    if rep.classification == "not_converged":
        raise ConvergenceError(f"minimax search did not converge: |E'| = {rep.grad_norm:.3e}")


def run_estimates(cfg, out: Path, man: RunManifest):
    from .concentration import (estimate_suite, sup_energy_check, write_fits_csv,
                                write_summary_csv)

    if cfg.lemma:
        from .fucik_spectrum import FucikPoint

        defaults = {"L60": "4,8,16", "L8": "1e-8,1e-14,1e-20,1e-26,1e-32", "L6": "0.02,0.01,0.005"}
        try:
            values = [float(x) for x in (cfg.params or defaults[cfg.lemma]).split(",")]
        except ValueError:
            raise ConfigError(f"bad --params {cfg.params!r}") from None
        if cfg.a is None or cfg.b is None:
            raise PreconditionError("give --a and --b for the lemma check")
        rep = sup_energy_check(cfg.lemma, FucikPoint(cfg.a, cfg.b, cfg.level), values,
                               seed=cfg.seed)
        man.files.append(write_json(out / f"sup_energy_{cfg.lemma}.json", rep.to_dict()))
        man.files.append(write_plot_data(out / f"sup_energy_{cfg.lemma}.dat", rep.values,
                                         rep.scaled_margins))
        return
    fits = estimate_suite()
    for f in fits:
        path = out / f"fit_{f.quantity}.csv"
        write_fits_csv(path, [f])
        man.files.append(path)
        man.files.append(write_plot_data(out / f"fit_{f.quantity}.dat", f.abscissa, f.values))
    path = out / "summary.csv"
    write_summary_csv(path, fits)
    man.files.append(path)


_RUNNERS = {
    "eig": run_eig,
    "curves": run_curves,
    "oracle1d": run_oracle1d,
    "theta": lambda c, o, m: run_reduction(c, o, m, "theta"),
    "tau": lambda c, o, m: run_reduction(c, o, m, "tau"),
    "solve": run_solve,
    "estimates": run_estimates,
}


def run_command(argv) -> tuple[int, RunManifest | None]:
    """Parse ``argv``, run the pipeline and return (exit status, manifest)."""
    argv = list(argv)
    if not argv or argv[0] not in SUBCOMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            build_parser().print_help()
            return EXIT_OK, None
        sys.stderr.write(f"unknown subcommand {argv[0] if argv else ''!r}; "
                         f"choose from {', '.join(SUBCOMMANDS)}\n")
        return EXIT_USAGE, None
    try:
        ns = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        flags = {k: v for k, v in vars(ns).items() if k in _FIELDS}
        file_values = read_config_file(ns.config) if ns.config else None
        cfg = resolve_config(flags, file_values)
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG, None
    out = Path(cfg.out)
    man = RunManifest(config={"command": ns.command, **asdict(cfg)})
    try:
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        _RUNNERS[ns.command](cfg, out, man)
        man.timings["total"] = time.perf_counter() - t0
        man.files = [str(p) for p in man.files]
        man.check()
    except ConfigError as exc:
        sys.stderr.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG, man
    except ConvergenceError as exc:
        sys.stderr.write(f"no convergence: {exc}\n")
        status = EXIT_CONVERGENCE
    except PreconditionError as exc:
        sys.stderr.write(f"precondition violated: {exc}\n")
        return EXIT_PRECONDITION, man
    except OSError as exc:
        sys.stderr.write(f"cannot write outputs: {exc}\n")
        return EXIT_PRECONDITION, man
    else:
        status = EXIT_OK
    man.files = [str(p) for p in man.files]
    write_json(out / "manifest.json", asdict(man))
    return status, man


def main(argv=None) -> int:
    status, _ = run_command(sys.argv[1:] if argv is None else argv)
    return status


if __name__ == "__main__":
    sys.exit(main())
