"""Energies with a jumping linear part and a superlinear term, linking
geometries built from the reduction maps, and a minimax critical point search.

The energy on the mesh is

    E(u) = 1/2 I(u, a, b) - sum_nodes w F(u)

with F either the critical power |u|^{2*} / 2* (N >= 3) or the planar
exponential (e^{u^2} - 1 - u^2) / 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.sparse import diags
from scipy.sparse.linalg import LinearOperator, minres

from . import concentration as conc
from .discrete_operator import DiscreteOperator, Spectrum
from .errors import ConvergenceError, PreconditionError
from .fucik_spectrum import (FucikPoint, _theta, _tau, curve_point, jump, n_level,
                             slopes)

NONTRIVIAL_FLOOR = 1e-2
GRAD_TOL = 1e-6
EXP_SAFE = 26.5


class OverflowGuardError(PreconditionError):
    """Exponential nonlinearity evaluated beyond the safe amplitude."""


@dataclass(frozen=True)
class Nonlinearity:
    kind: str
    dim: int
    guard: float = 30.0

    def __post_init__(self):
        if self.kind == "critical_power":
            if self.dim < 3:
                raise PreconditionError("the critical power needs N >= 3")
        elif self.kind == "exponential":
            if self.dim != 2:
                raise PreconditionError("the exponential nonlinearity is planar (N = 2)")
        else:
            raise PreconditionError(f"unknown nonlinearity {self.kind!r}")

    @property
    def exponent(self) -> float:
        if self.kind != "critical_power":
            raise PreconditionError("only the critical power has an exponent")
        return 2.0 * self.dim / (self.dim - 2)

    def _check(self, u):
        if self.kind == "exponential":
            top = float(np.max(np.abs(u))) if np.size(u) else 0.0
            # 2 u^2 exp(u^2) leaves double range a little above 26.5
            limit = min(self.guard, EXP_SAFE)
            if top > limit:
                raise OverflowGuardError(
                    f"|u| reaches {top:.3g} > {limit:.3g}; exponential term would overflow"
                )

    def F(self, u) -> np.ndarray:
        """Nodal primitive F(u) >= 0 with F(0) = 0."""
        u = np.asarray(u, dtype=float)
        self._check(u)
        if self.kind == "critical_power":
            p = self.exponent
            return np.abs(u) ** p / p
        u2 = u * u
        return 0.5 * (np.expm1(u2) - u2)

    def f(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._check(u)
        if self.kind == "critical_power":
            p = self.exponent
            return np.abs(u) ** (p - 2) * u
        return u * np.expm1(u * u)

    def fprime(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        self._check(u)
        if self.kind == "critical_power":
            p = self.exponent
            return (p - 1) * np.abs(u) ** (p - 2)
        u2 = u * u
        return np.expm1(u2) + 2.0 * u2 * np.exp(u2)


def energy(op: DiscreteOperator, u, point: FucikPoint, nl: Nonlinearity):
    """Return (E(u), gradient) with the gradient as L2 representative:
    E'(u)[h] = <gradient, h>_{L2}."""
    if nl.dim != op.mesh.dim:
        raise PreconditionError("nonlinearity dimension differs from the mesh")
    u = op.check(u)
    Ku = op.apply(u)
    up = np.maximum(u, 0.0)
    um = np.maximum(-u, 0.0)
    w = op.weight
    I = w * (float(u @ Ku) - point.a * float(um @ um) - point.b * float(up @ up))
    E = 0.5 * I - w * float(np.sum(nl.F(u)))
    grad = Ku - jump(u, point.a, point.b) - nl.f(u)
    return E, grad


def _energy_value(op, u, a, b, nl, Ku=None) -> float:
    Ku = op.apply(u) if Ku is None else Ku
    up = np.maximum(u, 0.0)
    um = np.maximum(-u, 0.0)
    w = op.weight
    return 0.5 * w * (float(u @ Ku) - a * float(um @ um) - b * float(up @ up)) - w * float(
        np.sum(nl.F(u)))


# ---------------------------------------------------------------------------
# level bound


@dataclass(frozen=True)
class CStar:
    value: float
    reference: float
    sobolev_estimate: float | None = None
    sobolev_reference: float | None = None
    method: str = ""


def sobolev_quotient(op: DiscreteOperator, u, p: float) -> float:
    """Discrete ||u||_D^2 / ||u||_p^2."""
    w = op.weight
    return op.d_norm(u) ** 2 / (w * float(np.sum(np.abs(u) ** p))) ** (2.0 / p)


def c_star(nl: Nonlinearity, op: DiscreteOperator | None = None, samples: int = 16) -> CStar:
    """Compactness threshold of the energy.

    exponential: 2 pi.  critical_power: (1/N) S^{N/2} with S the smallest
    discrete Sobolev quotient over centred cutoff bubbles whose scale is at
    least two mesh widths (the lattice infimum itself is not a Sobolev
    constant: a single-node spike already beats the continuum value).
    """
    if nl.kind == "exponential":
        return CStar(2.0 * math.pi, 2.0 * math.pi, method="exact")
    N = nl.dim
    S_ref = conc.sobolev_constant(N)
    ref = S_ref ** (N / 2) / N
    if op is None:
        return CStar(ref, ref, S_ref, S_ref, "continuum")
    mesh = op.mesh
    dom = mesh.domain
    x0 = dom.center
    dist = dom.boundary_distance(x0)
    h = max(mesh.spacing)
    p = nl.exponent
    r = np.linalg.norm(mesh.nodes() - x0, axis=1)
    mu = 1.0 / dist  # cutoff support reaches half way to the boundary

    def quotient(log_eps):
        eps = math.exp(log_eps)
        u = conc.xi(mu * r) * conc.bubble_constant(N) * (eps / (eps**2 + r**2)) ** ((N - 2) / 2)
        return sobolev_quotient(op, u, p)

    lo, hi = math.log(2 * h), math.log(0.5 * dist)
    grid = np.linspace(lo, hi, samples)
    vals = [quotient(x) for x in grid]
    k = int(np.argmin(vals))
    a_, b_ = grid[max(k - 1, 0)], grid[min(k + 1, samples - 1)]
    best = min(vals)
    if b_ > a_:
        sol = minimize_scalar(quotient, bounds=(a_, b_), method="bounded",
                              options={"xatol": 1e-6})
        best = min(best, float(sol.fun))
    return CStar(best ** (N / 2) / N, ref, best, S_ref, "resolved cutoff bubbles")


# ---------------------------------------------------------------------------
# geometry


@dataclass
class LinkingGeometry:
    kind: str
    point: FucikPoint
    spectrum: Spectrum = field(repr=False)
    support: np.ndarray = field(repr=False)  # D-orthonormal columns spanning the linear part
    spike: np.ndarray = field(repr=False)  # D-unit
    rho: float
    delta: float = 0.0
    shifted: FucikPoint | None = None
    center: tuple = ()
    mu: float | None = None
    t_norm: float | None = None
    t_threshold: float | None = None
    theta_bound: float | None = None
    inf_A: float = math.nan
    sup_support: float = math.nan
    meta: dict = field(default_factory=dict)

    @property
    def graph(self) -> str | None:
        return {"below_curve": "theta", "perturbed_T": "theta", "above_curve": "tau"}[self.kind]


def _d_orthonormal(op: DiscreteOperator, X: np.ndarray) -> np.ndarray:
    if X.shape[1] == 0:
        return X
    KX = op.stiffness @ X
    G = op.weight * (X.T @ KX)
    vals, vecs = np.linalg.eigh(G)
    if vals.min() <= 1e-14 * vals.max():
        raise PreconditionError("support vectors are linearly dependent")
    return X @ (vecs / np.sqrt(vals))


def _spike(geom_kind, nl: Nonlinearity, op: DiscreteOperator, x0, spike_params: dict):
    dom = op.mesh.domain
    h = max(op.mesh.spacing)
    if nl.kind == "exponential":
        j = spike_params.get("j", math.exp(4.0))
        d = spike_params.get("d")
        prof = conc.build_profile("moser", conc.MoserParams(j, d=d, x0=tuple(x0), domain=dom))
    else:
        eps = spike_params.get("eps", 2.0 * h)
        mu = spike_params.get("mu")
        prof = conc.build_profile("truncated_bubble",
                                  conc.BubbleParams(eps, N=nl.dim, mu=mu, x0=tuple(x0), domain=dom))
    e = prof.sample(op.mesh)
    nrm = op.d_norm(e)
    if nrm == 0:
        raise PreconditionError("spike vanishes on the mesh")
    return e / nrm, prof


def _center_shifts(dom):
    L = np.asarray(dom.lengths)
    c = dom.center
    yield c
    for k in (1, 2, 3):
        yield c + 0.07 * k * L * np.resize([1.0, -0.6, 0.8, -0.4], len(L))


def _sample_sphere_dirs(spectrum: Spectrum, first: int, count: int, seed: int):
    """D-unit directions in the complement of the first ``first`` modes: low modes
    and smooth random functions."""
    op = spectrum.op
    Phi = spectrum.vectors[:, :first]
    w = op.weight

    def pm(x):
        return x - Phi @ (w * (Phi.T @ x)) if first else x

    out = []
    for j in range(first, spectrum.count):
        v = spectrum.vectors[:, j]
        out += [v, -v]
    rng = np.random.default_rng(seed)
    while len(out) < count:
        out.append(pm(op.solve(rng.standard_normal(op.size))))
    return [x / op.d_norm(x) for x in out[:count]]


def t_operator_norm(op: DiscreteOperator, basis: np.ndarray, x0, mu: float) -> tuple[float, np.ndarray]:
    """||I - T||_D on span(basis) for T v = eta(mu |x - x0|) v, with the cut basis.

    ``basis`` must be D-orthonormal; the norm is the top singular value of
    (T - I) restricted to its span.
    """
    r = np.linalg.norm(op.mesh.nodes() - np.asarray(x0), axis=1)
    Tb = conc.eta(mu * r)[:, None] * basis
    diff = Tb - basis
    G = op.weight * (diff.T @ (op.stiffness @ diff))
    return math.sqrt(max(float(np.linalg.eigvalsh(G).max()), 0.0)), Tb


def _largest_passing(grid, test):
    """Largest grid entry passing a monotone test (True for small entries)."""
    lo, hi = -1, len(grid)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if test(grid[mid]):
            lo = mid
        else:
            hi = mid
    return None if lo < 0 else grid[lo]


def build_geometry(kind: str, point: FucikPoint, spectrum: Spectrum, nl: Nonlinearity,
                   spike_params: dict | None = None, curve_b: float | None = None,
                   seed: int = 0, samples: int = 64, check_samples: int = 1000,
                   mu: float | None = None, spike=None) -> LinkingGeometry:
    """Construct and verify a linking geometry for the energy at ``point``.

    The spike is a Moser function (exponential) or a truncated bubble
    (critical power) centred at the domain centre, moved when degenerate;
    an explicit grid function ``spike`` replaces it and is never moved.

    below_curve needs b < nu_{l-1}(a), above_curve needs b >= mu_l(a); the
    curve value is traced unless ``curve_b`` is supplied.  perturbed_T (N = 4,
    critical power) cuts the N_{l-1} basis off near the spike center.
    """
    spike_params = dict(spike_params or {})
    op = spectrum.op
    point.check(spectrum)
    l = point.level
    a, b = point.a, point.b
    lam_next = spectrum.eigenvalue(l + 1)
    rng_seed = seed
    meta: dict = {}

    if kind in ("below_curve", "perturbed_T"):
        if kind == "perturbed_T" and not (nl.kind == "critical_power" and nl.dim == 4):
            raise PreconditionError("perturbed_T is the N = 4 critical-power geometry")
        nu = curve_b if curve_b is not None else curve_point(spectrum, "nu", l, a, seed=seed).b
        meta["nu"] = nu
        if not b < nu:
            raise PreconditionError(f"b = {b} is not below the minimal curve value {nu:.6g}")
        # delta: largest grid value with (a, b)/(1 - delta) still on or below the curve
        dmax = 1.0 - max(a, b) / lam_next
        grid = [dmax * k / 21 for k in range(1, 21)]

        def ok(dl):
            pt = FucikPoint(a / (1 - dl), b / (1 - dl), l)
            return n_level(spectrum, pt, seed=seed).value >= -1e-8

        delta = _largest_passing(grid, ok) or 0.0
        shifted = FucikPoint(a / (1 - delta), b / (1 - delta), l)
        split = spectrum.split_level(l - 1)
        p = split.modes
        basis = split.basis / np.sqrt(split.values) if p else np.zeros((op.size, 0))
        dirs = _sample_sphere_dirs(spectrum, p, samples, rng_seed)
        A_units = []
        for w_ in dirs:
            th = _theta(split, w_, shifted.a, shifted.b)
            A_units.append(w_ + th.output)
        theta_bound = max(op.d_norm(x - w_) for x, w_ in zip(A_units, dirs)) if p else 0.0
    elif kind == "above_curve":
        mu_c = curve_b if curve_b is not None else curve_point(spectrum, "mu", l, a, seed=seed).b
        meta["mu_curve"] = mu_c
        if not b >= mu_c:
            raise PreconditionError(f"b = {b} is below the maximal curve value {mu_c:.6g}")
        delta, shifted, theta_bound = 0.0, None, None
        split = spectrum.split_level(l)
        p = split.modes
        basis = split.basis / np.sqrt(split.values)
        A_units = _sample_sphere_dirs(spectrum, p, samples, rng_seed)
    else:
        raise PreconditionError(f"unknown geometry kind {kind!r}")

    # rho: the largest grid radius with E > 0 on the sampled A
    rhos = np.geomspace(2.0, 1e-3, 20)

    def inf_A(rho):
        vals = []
        for x in A_units:
            try:
                vals.append(_energy_value(op, rho * x, a, b, nl))
            except OverflowGuardError:
                vals.append(-math.inf)
        return min(vals)

    rho = None
    for r in rhos:
        if inf_A(r) > 0:
            rho = float(r)
            break
    if rho is None:
        raise PreconditionError("no radius with positive energy on the sampled A")
    infA = inf_A(rho)

    mu_cut, t_norm, t_thr = None, None, None
    last_err = None
    for x0 in _center_shifts(op.mesh.domain):
        sp = dict(spike_params)
        if kind == "perturbed_T":
            dist = op.mesh.domain.boundary_distance(x0)
            mu_cut = mu if mu is not None else 4.0 / dist
            sp.setdefault("mu", mu_cut)
        if spike is not None:
            e = op.check(spike) / op.d_norm(spike)
            prof = None
        else:
            try:
                e, prof = _spike(kind, nl, op, x0, sp)
            except PreconditionError as exc:
                last_err = exc
                continue
        support = basis
        if kind == "perturbed_T" and p:
            t_norm, Tb = t_operator_norm(op, basis, x0, mu_cut)
            t_thr = 1.0 / (1.0 + math.sqrt(1.0 + theta_bound**2))
            if not t_norm < t_thr:
                last_err = PreconditionError(
                    f"||I - T|| = {t_norm:.3g} not below {t_thr:.3g}; increase mu")
                continue
            support = Tb
        support = _d_orthonormal(op, support)
        # degeneracy checks on the spike
        if kind == "above_curve":
            in_B = []
            for sgn in (1.0, -1.0):
                v = split.project_n(sgn * e)
                gap = sgn * e - (v + _tau(split, v, a, b).output)
                in_B.append(op.d_norm(gap) <= 1e-8)
            if all(in_B):
                last_err = PreconditionError("both e and -e lie in B")
                if spike is not None:
                    raise last_err
                continue
            if any(in_B):
                e = -e if in_B[0] else e
        else:
            coeffs = op.weight * (support.T @ (op.stiffness @ e)) if support.shape[1] else []
            rest = e - support @ np.asarray(coeffs) if support.shape[1] else e
            if op.d_norm(rest) <= 1e-8:
                last_err = PreconditionError("spike lies in the support subspace")
                if spike is not None:
                    raise last_err
                continue
        break
    else:
        raise last_err or PreconditionError("no admissible spike center")

    # sampled sup of E over the linear support (below: N_{l-1}) or over B (above)
    rng = np.random.default_rng(seed + 1)
    sup_s = 0.0
    if support.shape[1]:
        for _ in range(check_samples):
            c = rng.standard_normal(support.shape[1])
            c *= 10 ** rng.uniform(-3, 1) / np.linalg.norm(c)
            v = support @ c
            if kind == "above_curve":
                v = v + _tau(split, v, a, b).output
            try:
                sup_s = max(sup_s, _energy_value(op, v, a, b, nl))
            except OverflowGuardError:
                pass
    if prof is not None:
        meta.update({"spike": prof.kind, "spike_support": prof.support})
    else:
        meta["spike"] = "explicit"
    return LinkingGeometry(kind, point, spectrum, support, e, rho, delta, shifted,
                           tuple(float(x) for x in x0), mu_cut, t_norm, t_thr, theta_bound,
                           infA, sup_s, meta)


# ---------------------------------------------------------------------------
# minimax search


@dataclass
class CriticalReport:
    u: np.ndarray = field(repr=False)
    energy: float
    grad_norm: float
    c_star: float
    classification: str
    pde_residual: float
    d_norm: float
    seed: int = 0
    sup_Q: float = math.nan
    trace: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "grad_norm": self.grad_norm, "c_star": self.c_star,
                "classification": self.classification, "pde_residual": self.pde_residual,
                "seed": self.seed}


def verify_critical(op: DiscreteOperator, u, point: FucikPoint, nl: Nonlinearity,
                    tol: float = GRAD_TOL, cstar: float | None = None,
                    floor: float = NONTRIVIAL_FLOOR, seed: int = 0) -> CriticalReport:
    """Recompute ||E'(u)||_D, E(u) and the nodal PDE residual and classify ``u``."""
    u = op.check(u).copy()
    cs = c_star(nl).value if cstar is None else cstar
    E, g = energy(op, u, point, nl)
    gn = op.dual_norm(g)
    res = op.l2_norm(g)
    dn = op.d_norm(u)
    if dn < floor:
        cls = "trivial"
    elif not gn <= tol:
        cls = "not_converged"
    elif not 0.0 < E < cs:
        cls = "level_violation"
    else:
        cls = "nontrivial_ok"
    return CriticalReport(u, float(E), float(gn), float(cs), cls, float(res), float(dn), seed)


class _Peak:
    """Maximiser of E over the cone {L c + s e : s >= 0} (or the B-graph version)."""

    def __init__(self, op, support, point, nl, graph_split=None):
        self.op = op
        self.L = support
        self.KL = op.stiffness @ support if support.shape[1] else support
        self.a, self.b = point.a, point.b
        self.nl = nl
        self.split = graph_split
        self.x = None

    def _u(self, x, e):
        c, s = x[:-1], x[-1]
        u = s * e
        if self.L.shape[1]:
            u = u + self.L @ c
        return u

    def solve(self, e, x0=None, s_hint=1.0):
        op, w = self.op, self.op.weight
        q = self.L.shape[1]
        Ke = op.stiffness @ e

        def fg(x):
            c, s = x[:-1], x[-1]
            u = s * e + (self.L @ c if q else 0.0)
            Ku = s * Ke + (self.KL @ c if q else 0.0)
            try:
                E = _energy_value(op, u, self.a, self.b, self.nl, Ku)
                g = Ku - jump(u, self.a, self.b) - self.nl.f(u)
            except OverflowGuardError:
                return 1e30, np.zeros_like(x)
            grad = np.empty_like(x)
            if q:
                grad[:-1] = w * (self.L.T @ g)
            grad[-1] = w * float(e @ g)
            return -E, -grad

        if x0 is None:
            x0 = np.zeros(q + 1)
            x0[-1] = s_hint
        # coarse ray scan for the amplitude when starting cold
        if self.x is None and x0 is not None:
            ss = np.linspace(0.0, 8.0 * max(s_hint, 1.0), 65)[1:]
            vals = []
            for s in ss:
                x = np.zeros(q + 1)
                x[-1] = s
                vals.append(fg(x)[0])
            x0 = np.zeros(q + 1)
            x0[-1] = ss[int(np.argmin(vals))]
        bounds = [(None, None)] * q + [(0.0, None)]
        sol = minimize(fg, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
        self.x = sol.x
        return sol.x, -float(sol.fun), self._u(sol.x, e)


def _graph_peak(op, split, point, nl, e, x0=None):
    """Peak of E over {v + tau(v) + s e : v in N_l, s >= 0} by derivative-free search."""
    a, b = point.a, point.b
    q = split.modes
    basis = split.basis / np.sqrt(split.values)
    cache = {"z": None}

    def negE(x):
        c, s = x[:-1], abs(x[-1])
        v = basis @ c
        sol = _tau(split, v, a, b, z0=cache["z"])
        cache["z"] = sol.output
        try:
            return -_energy_value(op, v + sol.output + s * e, a, b, nl)
        except OverflowGuardError:
            return 1e30

    best = None
    if x0 is None:
        for s in np.linspace(0.1, 4.0, 20):
            x = np.zeros(q + 1)
            x[-1] = s
            val = negE(x)
            if best is None or val < best[0]:
                best = (val, x)
        x0 = best[1]
    sol = minimize(negE, x0, method="Nelder-Mead",
                   options={"xatol": 1e-7, "fatol": 1e-12, "maxiter": 4000})
    return -float(sol.fun), sol.x


def _newton_polish(op, u, point, nl, tol, maxiter=40):
    """Semismooth Newton on E'(u) = 0 with MINRES (K^{-1} preconditioned) and a
    backtracking line search on ||E'||_D."""
    a, b = point.a, point.b
    K = op.stiffness
    M = LinearOperator(K.shape, matvec=op.solve, dtype=float)
    _, g = energy(op, u, point, nl)
    gn = op.dual_norm(g)
    it = 0
    for it in range(maxiter):
        if gn <= tol:
            break
        J = K - diags(slopes(u, a, b) + nl.fprime(u))
        d, info = minres(J, -g, M=M, rtol=min(1e-3, 0.1 * gn), maxiter=2000)
        step = 1.0
        while step > 1e-6:
            trial = u + step * d
            try:
                _, gt = energy(op, trial, point, nl)
                gnt = op.dual_norm(gt)
            except OverflowGuardError:
                gnt = math.inf
            if gnt < (1 - 1e-4 * step) * gn:
                break
            step *= 0.5
        if step <= 1e-6:
            break
        u, g, gn = trial, gt, gnt
    return u, gn, it


def minimax_search(geom: LinkingGeometry, nl: Nonlinearity, seed: int = 0,
                   tol: float = GRAD_TOL, max_iter: int = 300, switch_tol: float = 1e-3,
                   floor: float = NONTRIVIAL_FLOOR, cstar: float | None = None) -> CriticalReport:
    """Local minimax search over the linking set Q of ``geom``.

    Upper-bound phase: maximise E over the Q patch spanned by the support and
    the spike.  Refinement: move the spike direction along -E' while the
    support component and amplitude are re-maximised each step; once the
    residual is small, semismooth Newton polishes the candidate.
    """
    op = geom.spectrum.op
    point = geom.point
    cs = c_star(nl, op).value if cstar is None else cstar
    w = op.weight
    K = op.stiffness
    L = geom.support
    LK = K @ L if L.shape[1] else L

    def orth(x):
        # D-orthogonal projection onto the complement of the support
        if not L.shape[1]:
            return x
        return x - L @ (w * (LK.T @ x))

    e = orth(geom.spike)
    e /= op.d_norm(e)
    sup_Q = math.nan
    if geom.kind == "above_curve":
        split = geom.spectrum.split_level(point.level)
        sup_Q, _ = _graph_peak(op, split, point, nl, e)

    peak = _Peak(op, L, point, nl)
    x, E_peak, u = peak.solve(e)
    if geom.kind != "above_curve":
        sup_Q = E_peak
    history = [E_peak]
    gn = math.inf
    it = 0
    for it in range(max_iter):
        _, g = energy(op, u, point, nl)
        G = op.solve(g)
        gn = math.sqrt(max(w * float(g @ G), 0.0))
        if gn <= switch_tol:
            break
        s = max(x[-1], 1e-12)
        d = orth(-G)
        d -= e * (w * float(e @ (K @ d)))
        step = 1.0
        accepted = False
        while step > 1e-8:
            e_new = e + (step / s) * d
            e_new /= op.d_norm(e_new)
            x_new, E_new, u_new = peak.solve(e_new, x0=x.copy())
            if E_new < E_peak - 1e-4 * step * gn * gn:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        e, x, E_peak, u = e_new, x_new, E_new, u_new
        history.append(E_peak)
    if op.d_norm(u) < floor:
        rep = verify_critical(op, u, point, nl, tol, cs, floor, seed)
        rep.classification = "trivial"
        rep.sup_Q = sup_Q
        rep.trace = {"lmm_iterations": it, "peak_history": history[-5:]}
        return rep
    u_lmm = u
    u, gn_final, newton_it = _newton_polish(op, u, point, nl, 0.01 * tol)
    moved = op.d_norm(u - u_lmm) / max(op.d_norm(u_lmm), 1e-300)
    rep = verify_critical(op, u, point, nl, tol, cs, floor, seed)
    rep.sup_Q = sup_Q
    rep.trace = {"lmm_iterations": it, "lmm_residual": gn, "newton_iterations": newton_it,
                 "newton_shift": moved, "peak_start": history[0], "peak_end": history[-1]}
    if rep.classification == "nontrivial_ok" and moved > 0.25:
        # Newton jumped to another critical point; keep it but say so
        rep.trace["note"] = "polish moved far from the minimax iterate"
    return rep
