"""Concentrating test functions and numerical checks of their scaling estimates.

Three families are built: truncated Talenti bubbles u_{eps,mu} (critical
Sobolev growth), annular cutoffs v_mu = eta(mu |x - x0|) v of smooth base
functions, and the planar Moser functions omega_{j,d}.  Integrals are computed
in the continuum: one-dimensional radial quadrature for radial profiles, and a
polar rule on the ball around x0 combined with tensor Gauss rules on the box
for sums with a smooth base function.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize, minimize_scalar
from scipy.special import gamma as gamma_fn
from scipy.special import roots_jacobi, roots_legendre

from .discrete_operator import Domain, Mesh
from .errors import ConvergenceError, PreconditionError

QUAD_RTOL = 1e-10


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere in R^N."""
    return 2.0 * math.pi ** (N / 2) / gamma_fn(N / 2)


def sobolev_constant(N: int) -> float:
    """Best constant S_N in ||grad u||_2^2 >= S_N ||u||_{2*}^2 on R^N."""
    if N < 3:
        raise PreconditionError("the Sobolev constant needs N >= 3")
    return math.pi * N * (N - 2) * (gamma_fn(N / 2) / gamma_fn(N)) ** (2.0 / N)


def critical_exponent(N: int) -> float:
    if N < 3:
        raise PreconditionError("the critical exponent needs N >= 3")
    return 2.0 * N / (N - 2)


def bubble_constant(N: int) -> float:
    return (N * (N - 2)) ** ((N - 2) / 4)


# ---------------------------------------------------------------------------
# smooth steps


def smoothstep(t):
    """Quintic step: 0 for t <= 0, 1 for t >= 1, C^2 in between."""
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_prime(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


def _smoothstep_integral(t):
    # antiderivative of smoothstep on [0, 1], zero at 0
    t = np.clip(t, 0.0, 1.0)
    return t**6 - 3.0 * t**5 + 2.5 * t**4


def xi(s):
    """Inner cutoff: 1 on [0, 1/4], 0 on [1/2, inf)."""
    return 1.0 - smoothstep(4.0 * np.asarray(s, dtype=float) - 1.0)


def xi_prime(s):
    return -4.0 * smoothstep_prime(4.0 * np.asarray(s, dtype=float) - 1.0)


# eta rises on [3/4, 1]; its derivative is a smoothed trapezoid of height 5: two
# quintic ramps of width ETA_RAMP around a plateau of width ETA_PLATEAU
ETA_START = 0.75
ETA_RAMP = 0.05
ETA_PLATEAU = 0.15
ETA_SLOPE = 5.0


def eta(s):
    """Annular cutoff: 0 on [0, 3/4], 1 on [1, inf), |eta'| <= 5."""
    s = np.asarray(s, dtype=float)
    r, p = ETA_RAMP, ETA_PLATEAU
    x = s - ETA_START
    up = r * _smoothstep_integral(x / r)
    flat = np.clip(x - r, 0.0, p)
    y = np.clip((x - r - p) / r, 0.0, 1.0)
    down = r * (y - _smoothstep_integral(y))
    # pin the top plateau exactly; the ramp sum can miss 1 by an ulp
    return np.where(x >= 2 * r + p, 1.0, np.clip(ETA_SLOPE * (up + flat + down), 0.0, 1.0))


def eta_prime(s):
    s = np.asarray(s, dtype=float)
    r, p = ETA_RAMP, ETA_PLATEAU
    x = s - ETA_START
    ramp_up = smoothstep(x / r)
    ramp_down = 1.0 - smoothstep((x - r - p) / r)
    inside = (x > 0) & (x < 2 * r + p)
    return np.where(inside, ETA_SLOPE * np.minimum(ramp_up, ramp_down), 0.0)


# ---------------------------------------------------------------------------
# parameter records


def _center_and_distance(domain: Domain | None, x0, dim: int):
    if domain is None:
        center = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
        return center, math.inf
    center = domain.center if x0 is None else np.asarray(x0, dtype=float)
    if center.shape != (domain.dim,):
        raise PreconditionError("center has the wrong dimension")
    dist = domain.boundary_distance(center)
    if dist <= 0:
        raise PreconditionError("center must lie inside the domain")
    return center, dist


@dataclass(frozen=True)
class BubbleParams:
    """Truncated bubble u_{eps,mu}(x) = xi(mu |x - x0|) u_eps(x - x0).

    ``gamma`` couples mu = eps^(-gamma) and must lie in (1/N, 1 - 2/(N-2));
    ``beta`` is only validated against ((N+2)/N, (N-2)/2).
    """

    eps: float
    N: int = 4
    mu: float | None = None
    x0: tuple | None = None
    domain: Domain | None = None
    gamma: float | None = None
    beta: float | None = None
    mu0: float | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise PreconditionError("eps must be positive")
        if self.N < 3:
            raise PreconditionError("bubbles need N >= 3")
        if self.domain is not None and self.domain.dim != self.N:
            raise PreconditionError("domain dimension differs from N")
        center, dist = _center_and_distance(self.domain, self.x0, self.N)
        object.__setattr__(self, "x0", tuple(center))
        mu0 = self.mu0 if self.mu0 is not None else (4.0 / dist if math.isfinite(dist) else 1.0)
        if math.isfinite(dist) and not mu0 > 1.0 / dist:
            raise PreconditionError(f"mu0 = {mu0} must exceed 1/dist = {1 / dist}")
        object.__setattr__(self, "mu0", mu0)
        if self.gamma is not None:
            lo, hi = 1.0 / self.N, 1.0 - 2.0 / (self.N - 2)
            if not lo < self.gamma < hi:
                raise PreconditionError(f"gamma = {self.gamma} outside ({lo:.4g}, {hi:.4g})")
            if self.mu is None:
                object.__setattr__(self, "mu", self.eps ** (-self.gamma))
        if self.beta is not None:
            lo, hi = (self.N + 2) / self.N, (self.N - 2) / 2
            if not lo < self.beta < hi:
                raise PreconditionError(f"beta = {self.beta} outside ({lo:.4g}, {hi:.4g})")
        if self.mu is None:
            object.__setattr__(self, "mu", mu0)
        if self.mu < mu0 * (1 - 1e-12):
            raise PreconditionError(f"mu = {self.mu} below mu0 = {mu0}")

    @property
    def center(self) -> np.ndarray:
        return np.array(self.x0)


@dataclass(frozen=True)
class MoserParams:
    """Moser function omega_{j,d}; ``coupled`` sets d = (log j)^(-1/4)."""

    j: float
    d: float | None = None
    x0: tuple | None = None
    domain: Domain | None = None
    coupled: bool = False
    d0: float | None = None

    def __post_init__(self):
        if not self.j >= 2:
            raise PreconditionError("j must be >= 2")
        center, dist = _center_and_distance(self.domain, self.x0, 2)
        object.__setattr__(self, "x0", tuple(center))
        d0 = self.d0 if self.d0 is not None else (0.5 * dist if math.isfinite(dist) else 1.0)
        if d0 >= dist:
            raise PreconditionError("d0 must be below the distance to the boundary")
        object.__setattr__(self, "d0", d0)
        d = self.d
        if self.coupled:
            d = math.log(self.j) ** -0.25
        if d is None:
            d = d0
        if not 0 < d <= d0 * (1 + 1e-12):
            raise PreconditionError(f"d = {d:.6g} outside (0, d0 = {d0:.6g}]")
        object.__setattr__(self, "d", d)

    @property
    def log_j(self) -> float:
        return math.log(self.j)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.x0)


@dataclass(frozen=True)
class CutoffParams:
    """Annular cutoff v_mu = eta(mu |x - x0|) v."""

    mu: float | None = None
    x0: tuple | None = None
    domain: Domain | None = None
    mu0: float | None = None

    def __post_init__(self):
        dim = self.domain.dim if self.domain is not None else len(self.x0)
        center, dist = _center_and_distance(self.domain, self.x0, dim)
        object.__setattr__(self, "x0", tuple(center))
        mu0 = self.mu0 if self.mu0 is not None else (4.0 / dist if math.isfinite(dist) else 1.0)
        object.__setattr__(self, "mu0", mu0)
        if self.mu is None:
            object.__setattr__(self, "mu", mu0)
        if self.mu < mu0 * (1 - 1e-12):
            raise PreconditionError(f"mu = {self.mu} below mu0 = {mu0}")
        s = np.linspace(0.0, 1.5, 3001)
        if np.max(np.abs(eta_prime(s))) > ETA_SLOPE + 1e-12:
            raise PreconditionError("cutoff derivative bound violated")

    @property
    def center(self) -> np.ndarray:
        return np.array(self.x0)


# ---------------------------------------------------------------------------
# smooth base functions on boxes


@dataclass(frozen=True)
class BoxModes:
    """sum_k c_k prod_i sin(n_ki pi x_i / L_i): Dirichlet eigenfunctions of a box."""

    domain: Domain
    modes: tuple[tuple[int, ...], ...]
    coeffs: tuple[float, ...]

    def eigenvalues(self) -> np.ndarray:
        L = np.array(self.domain.lengths)
        return np.array([float(np.sum((np.array(m) * np.pi / L) ** 2)) for m in self.modes])

    def _factors(self, x):
        x = np.atleast_2d(x)
        L = np.array(self.domain.lengths)
        out = []
        for m in self.modes:
            k = np.array(m) * np.pi / L
            out.append((np.sin(x * k), np.cos(x * k) * k))
        return out

    def value(self, x) -> np.ndarray:
        vals = 0.0
        for c, (s, _) in zip(self.coeffs, self._factors(x)):
            vals = vals + c * np.prod(s, axis=1)
        return np.asarray(vals)

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        g = np.zeros_like(x, dtype=float)
        for c, (s, ds) in zip(self.coeffs, self._factors(x)):
            for i in range(x.shape[1]):
                others = np.prod(np.delete(s, i, axis=1), axis=1)
                g[:, i] += c * ds[:, i] * others
        return g

    def minus_laplacian(self, x) -> np.ndarray:
        vals = 0.0
        for c, lam, (s, _) in zip(self.coeffs, self.eigenvalues(), self._factors(x)):
            vals = vals + c * lam * np.prod(s, axis=1)
        return np.asarray(vals)

    def d_norm2(self) -> float:
        # the modes are orthogonal with ||phi||_2^2 = vol / 2^N
        w = self.domain.volume / 2 ** self.domain.dim
        return float(np.sum(np.array(self.coeffs) ** 2 * self.eigenvalues()) * w)

    def l2_norm2(self) -> float:
        w = self.domain.volume / 2 ** self.domain.dim
        return float(np.sum(np.array(self.coeffs) ** 2) * w)

    def scaled(self, factor: float) -> "BoxModes":
        return BoxModes(self.domain, self.modes, tuple(factor * c for c in self.coeffs))

    def sample(self, mesh: Mesh) -> np.ndarray:
        return self.value(mesh.nodes())


def box_eigenmodes(domain: Domain, max_index: int = 6) -> list[tuple[float, tuple[int, ...]]]:
    """Continuum Dirichlet eigenpairs of a box, ascending, by integer mode tuples."""
    L = np.array(domain.lengths)
    out = []
    for m in product(range(1, max_index + 1), repeat=domain.dim):
        out.append((float(np.sum((np.array(m) * np.pi / L) ** 2)), tuple(m)))
    out.sort()
    return out


def level_subspace(domain: Domain, level: int, max_index: int = 6) -> list[tuple[int, ...]]:
    """Mode tuples spanning the continuum N_level (all eigenvalues <= lambda_level)."""
    pairs = box_eigenmodes(domain, max_index)
    distinct = []
    for lam, _ in pairs:
        if not distinct or lam > distinct[-1] * (1 + 1e-12):
            distinct.append(lam)
    if level == 0:
        return []
    top = distinct[level - 1]
    return [m for lam, m in pairs if lam <= top * (1 + 1e-12)]


def continuum_eigenvalue(domain: Domain, level: int) -> float:
    pairs = box_eigenmodes(domain)
    distinct = []
    for lam, _ in pairs:
        if not distinct or lam > distinct[-1] * (1 + 1e-12):
            distinct.append(lam)
    return 0.0 if level == 0 else distinct[level - 1]


# ---------------------------------------------------------------------------
# profiles


@dataclass(frozen=True)
class Profile:
    """A concentrating test function: exact evaluator plus optional mesh sample.

    Radial kinds provide ``value(r)`` and ``slope(r)`` in the distance to the
    center; ``support`` is the radius outside which the profile vanishes
    (annular cutoffs: the radius outside which they equal the base).
    """

    kind: str
    dim: int
    center: np.ndarray
    support: float
    params: object
    value: Callable | None = None
    slope: Callable | None = None
    breakpoints: tuple = ()
    base: BoxModes | np.ndarray | None = None
    grid: np.ndarray | None = field(default=None, repr=False)

    @property
    def radial(self) -> bool:
        return self.kind != "annular_cutoff"

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.linalg.norm(x - self.center, axis=1)
        if self.radial:
            return self.value(r)
        mu = self.params.mu
        return eta(mu * r) * self.base.value(x)

    def sample(self, mesh: Mesh) -> np.ndarray:
        if not np.isfinite(self.support) or self.kind == "bubble":
            raise PreconditionError(f"a {self.kind} profile does not vanish on the boundary")
        if self.radial:
            dist = mesh.domain.boundary_distance(self.center)
            if self.support > dist:
                raise PreconditionError("profile support exceeds the domain")
            return self(mesh.nodes())
        nodes = mesh.nodes()
        r = np.linalg.norm(nodes - self.center, axis=1)
        base = self.base if isinstance(self.base, np.ndarray) else self.base.value(nodes)
        return eta(self.params.mu * r) * base


def _bubble_funcs(eps: float, N: int):
    cN = bubble_constant(N)
    k = (N - 2) / 2

    def value(r):
        r = np.asarray(r, dtype=float)
        return cN * (eps / (eps * eps + r * r)) ** k

    def slope(r):
        r = np.asarray(r, dtype=float)
        return -cN * (N - 2) * eps**k * r * (eps * eps + r * r) ** (-N / 2)

    return value, slope


def build_profile(kind: str, params, base=None, mesh: Mesh | None = None) -> Profile:
    """Build a bubble, truncated_bubble, annular_cutoff or moser profile.

    ``base`` (annular_cutoff only) is a :class:`BoxModes` or a grid function;
    with ``mesh`` the profile is also sampled on the mesh nodes.
    """
    if kind in ("bubble", "truncated_bubble"):
        if not isinstance(params, BubbleParams):
            raise PreconditionError("bubble profiles need BubbleParams")
        N, eps, mu = params.N, params.eps, params.mu
        value0, slope0 = _bubble_funcs(eps, N)
        if kind == "bubble":
            prof = Profile(kind, N, params.center, math.inf, params, value0, slope0,
                           (eps, 10 * eps))
        else:
            def value(r):
                r = np.asarray(r, dtype=float)
                return xi(mu * r) * value0(r)

            def slope(r):
                r = np.asarray(r, dtype=float)
                return xi(mu * r) * slope0(r) + mu * xi_prime(mu * r) * value0(r)

            R = 0.5 / mu
            prof = Profile(kind, N, params.center, R, params, value, slope,
                           tuple(sorted({min(eps, 0.25 / mu), 0.25 / mu, R})))
            if params.domain is not None and R > params.domain.boundary_distance(params.center):
                raise PreconditionError("truncated bubble support exceeds the domain")
    elif kind == "moser":
        if not isinstance(params, MoserParams):
            raise PreconditionError("moser profiles need MoserParams")
        lj, d = params.log_j, params.d
        core = d / params.j
        norm = 1.0 / math.sqrt(2.0 * math.pi)

        def value(r):
            r = np.asarray(r, dtype=float)
            inner = np.log(d / np.maximum(r, 1e-300)) / math.sqrt(lj)
            out = np.where(r <= core, math.sqrt(lj), np.where(r < d, inner, 0.0))
            return norm * out

        def slope(r):
            r = np.asarray(r, dtype=float)
            mid = (r > core) & (r < d)
            return np.where(mid, -norm / (math.sqrt(lj) * np.maximum(r, 1e-300)), 0.0)

        prof = Profile(kind, 2, params.center, d, params, value, slope, (core, d))
    elif kind == "annular_cutoff":
        if not isinstance(params, CutoffParams):
            raise PreconditionError("annular cutoffs need CutoffParams")
        if base is None:
            raise PreconditionError("annular_cutoff requires a base function")
        if isinstance(base, BoxModes):
            dim = base.domain.dim
        else:
            if mesh is None:
                raise PreconditionError("a grid base function needs its mesh")
            base = np.asarray(base, dtype=float)
            dim = mesh.dim
        prof = Profile(kind, dim, params.center, 1.0 / params.mu, params, base=base,
                       breakpoints=(ETA_START / params.mu, 1.0 / params.mu))
    else:
        raise PreconditionError(f"unknown profile kind {kind!r}")
    if mesh is not None:
        prof = Profile(**{**prof.__dict__, "grid": prof.sample(mesh)})
    return prof


# ---------------------------------------------------------------------------
# quadrature


def sphere_rule(N: int, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Product rule on S^{N-1}: Gauss-Jacobi in the polar cosines, trapezoid on circles."""
    if N == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if N == 2:
        m = 4 * order
        t = 2.0 * math.pi * np.arange(m) / m
        return np.column_stack([np.cos(t), np.sin(t)]), np.full(m, 2.0 * math.pi / m)
    alpha = (N - 3) / 2
    t, wt = roots_jacobi(order, alpha, alpha)
    sub, wsub = sphere_rule(N - 1, order)
    dirs = [np.column_stack([np.full(len(sub), ti), math.sqrt(1 - ti * ti) * sub]) for ti in t]
    weights = [wi * wsub for wi in wt]
    return np.vstack(dirs), np.concatenate(weights)


def _gauss_panels(edges, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(order)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _radial_edges(profile: Profile, radius: float, per_decade: int = 4) -> np.ndarray:
    """Panel edges on [0, radius] refined geometrically towards the center."""
    brk = sorted(b for b in profile.breakpoints if 0 < b < radius) + [radius]
    if profile.kind == "moser":
        core, d = profile.breakpoints
        n = max(int(math.ceil(math.log(d / core))), 1)
        return np.concatenate([[0.0], np.geomspace(core, d, n + 1)])
    if profile.kind in ("bubble", "truncated_bubble"):
        eps = profile.params.eps
        lo = min(eps * 1e-3, brk[0] * 1e-3)
        edges = np.concatenate([[0.0], np.geomspace(lo, radius, max(
            int(per_decade * math.log10(radius / lo)), 2) + 1)])
    else:
        edges = np.concatenate([[0.0], np.linspace(0, brk[0], 3)[1:-1]])
    return np.unique(np.concatenate([edges, brk]))


@dataclass
class BallRule:
    """Polar quadrature nodes on the ball B_R(x0) with weights r^{N-1} dr dsigma."""

    points: np.ndarray
    weights: np.ndarray
    radii: np.ndarray


def ball_rule(profile: Profile, radius: float | None = None, order: int = 16,
              angular: int = 8) -> BallRule:
    N = profile.dim
    R = profile.support if radius is None else radius
    r, wr = _gauss_panels(_radial_edges(profile, R), order)
    dirs, wd = sphere_rule(N, angular)
    pts = profile.center + (r[:, None, None] * dirs[None, :, :])
    w = (wr * r ** (N - 1))[:, None] * wd[None, :]
    return BallRule(pts.reshape(-1, N), w.reshape(-1), np.repeat(r, len(wd)))


MAX_BOX_NODES = 1_200_000


def box_rule(domain: Domain, order: int = 24) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Legendre rule on the box; the order is capped so that the
    node count stays below MAX_BOX_NODES."""
    order = max(4, min(order, int(MAX_BOX_NODES ** (1.0 / domain.dim))))
    x, w = roots_legendre(order)
    axes, wts = [], []
    for L in domain.lengths:
        axes.append(0.5 * L * (x + 1.0))
        wts.append(0.5 * L * w)
    grids = np.meshgrid(*axes, indexing="ij")
    W = wts[0]
    for wi in wts[1:]:
        W = np.multiply.outer(W, wi)
    return np.column_stack([g.reshape(-1) for g in grids]), W.reshape(-1)


def _radial_quad(f, profile: Profile, lo: float, hi: float) -> float:
    """Integral of f(r) * |S^{N-1}| r^{N-1} over lo < r < hi, split at breakpoints."""
    N = profile.dim
    area = sphere_area(N)
    total, err = 0.0, 0.0
    if profile.kind == "moser":
        core, d = profile.breakpoints
        if lo < core:
            v, e = quad(lambda r: f(r) * r ** (N - 1), lo, min(core, hi), epsabs=0,
                        epsrel=QUAD_RTOL, limit=200)
            total, err = total + v, err + e
        a, b = max(lo, core), min(hi, d)
        if b > a:
            # logarithmic variable resolves the 1/r scale
            v, e = quad(lambda x: f(math.exp(x)) * math.exp(N * x), math.log(a), math.log(b),
                        epsabs=0, epsrel=QUAD_RTOL, limit=400)
            total, err = total + v, err + e
        return area * total
    edges = [lo] + [p for p in _radial_edges(profile, hi if math.isfinite(hi) else
                                              100 * profile.params.eps) if lo < p < hi]
    if math.isfinite(hi):
        edges.append(hi)
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = quad(lambda r: f(r) * r ** (N - 1), a, b, epsabs=0, epsrel=QUAD_RTOL, limit=200)
        total, err = total + v, err + e
    if not math.isfinite(hi):
        v, e = quad(lambda r: f(r) * r ** (N - 1), edges[-1], math.inf, epsabs=0,
                    epsrel=QUAD_RTOL, limit=200)
        total, err = total + v, err + e
    if err > 1e-6 * max(abs(total), 1e-300):
        raise ConvergenceError(f"radial quadrature error {err:.2e} too large")
    return area * total


RADIAL_KINDS = ("grad2", "grad1", "crit", "l2", "l1", "crit_minus_1", "grad2_excess",
                "crit_deficit")
CUTOFF_KINDS = ("cutoff_grad2", "grad2", "crit", "l2", "jump")


def radial_integrals(profile: Profile, requested, a: float = 0.0, b: float = 0.0,
                     order: int = 24, angular: int = 10, box_order: int = 24) -> dict[str, float]:
    """Integrals of a profile over R^N (or its support).

    Radial kinds: ``grad2`` |grad u|^2, ``grad1`` |grad u|, ``crit`` u^{2*},
    ``l2`` u^2, ``l1`` u, ``crit_minus_1`` u^{2*-1}, ``grad2_excess``
    grad2 - S_N^{N/2} and ``crit_deficit`` S_N^{N/2} - crit (bubbles only; the
    differences are integrated directly so they do not cancel).

    Annular cutoffs (smooth box base v): ``cutoff_grad2`` |grad(v_mu - v)|^2,
    ``grad2``, ``crit`` (power 4 unless N != 4), ``l2`` and ``jump``
    a (v_mu^-)^2 + b (v_mu^+)^2, computed as box integral of v plus a polar
    correction on B_{1/mu}(x0).
    """
    requested = list(requested)
    out: dict[str, float] = {}
    N = profile.dim
    if profile.kind == "annular_cutoff":
        base = profile.base
        if not isinstance(base, BoxModes):
            raise PreconditionError("cutoff integrals need an analytic base")
        mu = profile.params.mu
        rule = ball_rule(profile, 1.0 / mu, order, angular)
        x, w = rule.points, rule.weights
        r = rule.radii
        v = base.value(x)
        gv = base.gradient(x)
        e, de = eta(mu * r), mu * eta_prime(mu * r)
        unit = (x - profile.center) / np.maximum(r, 1e-300)[:, None]
        g_mu = e[:, None] * gv + (de * v)[:, None] * unit
        p = critical_exponent(N) if N >= 3 else 4.0
        bx, bw = box_rule(base.domain, box_order)
        vb = base.value(bx)
        for kind in requested:
            if kind == "cutoff_grad2":
                diff = g_mu - gv
                out[kind] = float(w @ np.sum(diff * diff, axis=1))
            elif kind == "grad2":
                out[kind] = base.d_norm2() + float(w @ (np.sum(g_mu**2, 1) - np.sum(gv**2, 1)))
            elif kind == "crit":
                out[kind] = float(bw @ np.abs(vb) ** p) + float(
                    w @ (np.abs(e * v) ** p - np.abs(v) ** p))
            elif kind == "l2":
                out[kind] = base.l2_norm2() + float(w @ ((e * v) ** 2 - v * v))
            elif kind == "jump":
                def jq(u):
                    return a * np.maximum(-u, 0) ** 2 + b * np.maximum(u, 0) ** 2
                out[kind] = float(bw @ jq(vb)) + float(w @ (jq(e * v) - jq(v)))
            else:
                raise PreconditionError(f"unknown cutoff integral {kind!r}")
        return out

    val, slope = profile.value, profile.slope
    R = profile.support
    p = critical_exponent(N) if N >= 3 else None
    for kind in requested:
        if kind == "grad2":
            out[kind] = _radial_quad(lambda r: slope(r) ** 2, profile, 0.0, R)
        elif kind == "grad1":
            out[kind] = _radial_quad(lambda r: abs(slope(r)), profile, 0.0, R)
        elif kind == "l2":
            out[kind] = _radial_quad(lambda r: val(r) ** 2, profile, 0.0, R)
        elif kind == "l1":
            out[kind] = _radial_quad(lambda r: abs(val(r)), profile, 0.0, R)
        elif kind in ("crit", "crit_minus_1"):
            if p is None:
                raise PreconditionError("critical integrals need N >= 3")
        if kind == "crit":
            out[kind] = _radial_quad(lambda r: abs(val(r)) ** p, profile, 0.0, R)
        elif kind == "crit_minus_1":
            out[kind] = _radial_quad(lambda r: abs(val(r)) ** (p - 1), profile, 0.0, R)
        elif kind in ("grad2_excess", "crit_deficit"):
            if profile.kind != "truncated_bubble":
                raise PreconditionError(f"{kind} is defined for truncated bubbles")
            mu = profile.params.mu
            v0, s0 = _bubble_funcs(profile.params.eps, N)
            # profile and full bubble agree on r < 1/(4 mu)
            inner = 0.25 / mu
            if kind == "grad2_excess":
                f = lambda r: slope(r) ** 2 - s0(r) ** 2  # noqa: E731
            else:
                f = lambda r: v0(r) ** p - abs(val(r)) ** p  # noqa: E731
            near = _radial_quad(f, profile, inner, R)
            tail = _radial_quad((lambda r: -s0(r) ** 2) if kind == "grad2_excess"
                                else (lambda r: v0(r) ** p), profile, R, math.inf)
            out[kind] = near + tail
        elif kind not in RADIAL_KINDS:
            raise PreconditionError(f"unknown integral {kind!r}")
    return out


# ---------------------------------------------------------------------------
# fits


@dataclass(frozen=True)
class ScalingFit:
    quantity: str
    abscissa: np.ndarray
    values: np.ndarray
    exponent: float
    constant: float
    target: float
    residual: float
    tolerance: float = 0.2
    plain_residual: float | None = None
    one_sided: str | None = None  # "upper" or "lower" bound family
    one_sided_ok: bool | None = None

    @property
    def passed(self) -> bool:
        ok = abs(self.exponent - self.target) <= self.tolerance
        return ok and (self.one_sided_ok is not False)

    def rows(self) -> list[dict]:
        return [{"quantity": self.quantity, "abscissa": float(x), "value": float(v),
                 "fit_exponent": self.exponent, "target": self.target,
                 "pass": self.passed} for x, v in zip(self.abscissa, self.values)]


def fit_scaling(quantity: str, abscissa, values, target: float, tolerance: float = 0.2,
                log_factor=None, one_sided: str | None = None) -> ScalingFit:
    """Least-squares slope of log|value| against log(abscissa).

    With ``log_factor`` the values are divided by it before fitting (for
    corrections such as |log(mu eps)|); the residual of the uncorrected fit is
    kept for comparison.  ``one_sided`` checks every sample against the fitted
    power law times the largest (upper) or smallest (lower) ratio observed,
    which holds by construction, plus the sign/positivity of the values.
    """
    x = np.asarray(abscissa, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(x) < 5:
        raise PreconditionError("a scaling fit needs at least 5 points")
    if np.any(x <= 0) or np.log10(x.max() / x.min()) < 1.5 - 1e-9:
        raise PreconditionError("abscissa must be positive and span at least 1.5 decades")
    if np.any(y == 0) or not np.all(np.isfinite(y)):
        raise PreconditionError("values must be finite and nonzero")
    lx = np.log(x)

    def fit(ly):
        A = np.column_stack([lx, np.ones_like(lx)])
        coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
        res = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
        return coef, res

    plain_coef, plain_res = fit(np.log(np.abs(y)))
    if log_factor is not None:
        coef, res = fit(np.log(np.abs(y) / np.asarray(log_factor, dtype=float)))
    else:
        coef, res = plain_coef, plain_res
    ok = None
    if one_sided is not None:
        ok = bool(np.all(y > 0))
    return ScalingFit(quantity, x, y, float(coef[0]), float(math.exp(coef[1])), target, res,
                      tolerance, plain_res, one_sided, ok)


def write_fits_csv(path, fits) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["quantity", "abscissa", "value", "fit_exponent",
                                           "target", "pass"])
        w.writeheader()
        for fit in fits:
            for row in fit.rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_summary_csv(path, fits) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "fit_exponent", "target", "residual", "pass"])
        for f in fits:
            w.writerow([f.quantity, repr(f.exponent), repr(f.target), repr(f.residual), f.passed])


# ---------------------------------------------------------------------------
# strict-level checks


def _power_F(p):
    return lambda u: np.abs(u) ** p / p


def _exp_F(u):
    u2 = u * u
    return 0.5 * (np.expm1(u2) - u2)


_BOX_CACHE: dict = {}


@dataclass
class _SplitEnergy:
    """E(t u + s e) with u a smooth box function and e a profile supported in a ball.

    Quadratic terms of u alone are exact, and nonlinear terms of u alone use a
    tensor rule on the box; everything touching e uses the polar rule on its
    ball, where the box contribution of u is subtracted and replaced.
    """

    base: BoxModes
    spike: Profile
    a: float
    b: float
    F: Callable
    order: int = 16
    angular: int = 8
    box_order: int = 48
    degree: float | None = None  # F(t u) = t^degree F(u) for t >= 0

    def __post_init__(self):
        rule = ball_rule(self.spike, None, self.order, self.angular)
        self.w = rule.weights
        self.u_ball = self.base.value(rule.points)
        self.e_ball = self.spike.value(rule.radii)
        self.cross = float(self.w @ (self.e_ball * self.base.minus_laplacian(rule.points)))
        self.grad_u = self.base.d_norm2()
        self.grad_e = radial_integrals(self.spike, ["grad2"])["grad2"]
        # box terms of u alone are homogeneous in t >= 0 (jump: degree 2)
        key = (self.base, self.box_order, self.a, self.b, self.degree)
        if self.degree is not None and key in _BOX_CACHE:
            self.box_jump, self.box_F = _BOX_CACHE[key]
            return
        bx, bw = box_rule(self.base.domain, self.box_order)
        self.u_box, self.w_box = self.base.value(bx), bw
        self.box_jump = float(bw @ self._jump(self.u_box))
        self.box_F = None
        if self.degree is not None:
            self.box_F = float(bw @ self.F(self.u_box))
            _BOX_CACHE[key] = (self.box_jump, self.box_F)
            del self.u_box, self.w_box

    def _jump(self, u):
        return self.a * np.maximum(-u, 0) ** 2 + self.b * np.maximum(u, 0) ** 2

    def __call__(self, t: float, s: float) -> float:
        wb, ub = self.w, self.u_ball
        mixed = t * ub + s * self.e_ball
        grad = t * t * self.grad_u + 2 * t * s * self.cross + s * s * self.grad_e
        jump = (t * t * self.box_jump - float(wb @ self._jump(t * ub))
                + float(wb @ self._jump(mixed)))
        if self.box_F is not None:
            box_F = t ** self.degree * self.box_F
        else:
            box_F = float(self.w_box @ self.F(t * self.u_box))
        F = box_F - float(wb @ self.F(t * ub)) + float(wb @ self.F(mixed))
        return 0.5 * (grad - jump) - F


def sup_over_quadrant(fun, s_max: float = 2.0, t_max: float = 2.0, n: int = 25,
                      max_extend: int = 12) -> dict:
    """Grid search of sup over s, t >= 0, enlarging the box until the outer edge
    values drop below half the interior max, then a bounded local polish."""
    for _ in range(max_extend):
        s = np.linspace(0.0, s_max, n)
        t = np.linspace(0.0, t_max, n)
        G = np.array([[fun(ti, si) for si in s] for ti in t])
        peak = float(G.max())
        edge_s = float(G[:, -1].max())
        edge_t = float(G[-1, :].max())
        grow = False
        if edge_s > 0.5 * max(peak, 0.0) and edge_s > -1e-300:
            s_max *= 1.6
            grow = True
        if edge_t > 0.5 * max(peak, 0.0) and edge_t > -1e-300:
            t_max *= 1.6
            grow = True
        if not grow:
            break
    else:
        raise ConvergenceError("coercivity horizon not found; enlarge the parameter range")
    i, k = np.unravel_index(int(np.argmax(G)), G.shape)
    x0 = np.array([t[i], s[k]])
    sol = minimize(lambda z: -fun(z[0], z[1]), x0, method="L-BFGS-B",
                   bounds=[(0.0, None), (0.0, None)], options={"ftol": 1e-14, "gtol": 1e-11})
    best = max(-float(sol.fun), peak)
    arg = sol.x if -float(sol.fun) >= peak else x0
    return {"sup": best, "t": float(arg[0]), "s": float(arg[1]), "grid_s": s.tolist(),
            "grid_t": t.tolist(), "grid_values": G.tolist()}


def sample_K(domain: Domain, level: int, count: int | None = None, seed: int = 0) -> list[BoxModes]:
    """D-unit samples of the continuum N_{level-1} (64 sphere points up to dimension 3, else 512)."""
    modes = level_subspace(domain, level - 1)
    q = len(modes)
    if q == 0:
        return []
    lam = np.array([float(np.sum((np.array(m) * np.pi / np.array(domain.lengths)) ** 2))
                    for m in modes])
    w = domain.volume / 2 ** domain.dim
    if q == 1:
        C = np.array([[1.0], [-1.0]])
    else:
        n = count or (64 if q <= 3 else 512)
        C = np.random.default_rng(seed).standard_normal((n, q))
        C /= np.linalg.norm(C, axis=1, keepdims=True)
    scale = 1.0 / np.sqrt(lam * w)
    return [BoxModes(domain, tuple(modes), tuple(c * scale)) for c in C]


@dataclass
class SupEnergyReport:
    lemma: str
    parameter: str
    values: list
    sups: list
    margins: list
    c_star: float
    details: list = field(default_factory=list)

    @property
    def scaled_margins(self) -> list:
        if self.parameter == "eps":
            return [m / e**2 for m, e in zip(self.margins, self.values)]
        return list(self.margins)

    @property
    def all_below(self) -> bool:
        return all(m > 0 for m in self.margins)

    @property
    def final_below(self) -> bool:
        return bool(self.margins) and self.margins[-1] > 0

    @property
    def improving(self) -> bool:
        m = self.scaled_margins
        return all(m2 > m1 for m1, m2 in zip(m, m[1:]))

    def to_dict(self) -> dict:
        return {"lemma": self.lemma, "parameter": self.parameter, "values": self.values,
                "sups": self.sups, "margins": self.margins,
                "scaled_margins": self.scaled_margins, "c_star": self.c_star,
                "all_below": self.all_below, "final_below": self.final_below,
                "improving": self.improving,
                "details": self.details}


def _check_K(K, a, b, tol=1e-9):
    for u in K:
        # continuum I(u) with ||u||_D = 1; quadratic jump terms by a box rule
        bx, bw = box_rule(u.domain, 32)
        v = u.value(bx)
        I = u.d_norm2() - float(bw @ (a * np.maximum(-v, 0) ** 2 + b * np.maximum(v, 0) ** 2))
        if I > tol:
            raise PreconditionError(f"K contains u with I(u, a, b) = {I:.3e} > 0")


def sup_energy_check(lemma: str, point, param_range, domain: Domain | None = None,
                     K_basis=None, seed: int = 0,
                     mu_factor: float | None = None) -> SupEnergyReport:
    """sup over u in K and s, t >= 0 of E(t u + s e) for a family of spikes e.

    ``L60``: planar exponential problem, e = omega_{j,d} with d = (log j)^(-1/4),
    ``param_range`` lists log j, level bound 2 pi.
    ``L8``: N = 4 critical power, e = u_{eps,mu} and u replaced by its annular
    cutoff (disjoint supports), ``param_range`` lists eps, bound S_4^2 / 4.
    ``L6``: N >= 5 critical power, e = u_{eps,mu} overlapping u, bound
    S_N^{N/2} / N.  Bubble cutoffs use mu = mu_factor * mu0.  By default L8
    takes the smallest mu with I(v_mu) <= 0 on K (the spike gains
    b eps^2 |log(mu eps)| but pays about (mu eps)^2, so a large mu pushes the
    sign change to very small eps) and L6 takes mu0.  L6 adds to the spike's
    ray excess the gain from mixing in t u, both in difference form.

    Bubble margins shrink like eps^2 as eps -> 0, so the report also carries
    margins divided by eps^2; ``improving`` is judged on those.
    K defaults to D-unit samples of the continuum N_{l-1}; every element must
    satisfy I(u, a, b) <= 0.
    """
    a, b, level = point.a, point.b, point.level
    if lemma == "L60":
        domain = domain or Domain((math.pi, math.pi))
        if domain.dim != 2:
            raise PreconditionError("L60 is planar")
    elif lemma == "L8":
        domain = domain or Domain((math.pi,) * 4)
        if domain.dim != 4:
            raise PreconditionError("L8 needs N = 4")
    elif lemma == "L6":
        domain = domain or Domain((math.pi,) * 5)
        if domain.dim < 5:
            raise PreconditionError("L6 needs N >= 5")
    else:
        raise PreconditionError(f"unknown lemma {lemma!r}")
    K = list(K_basis) if K_basis is not None else sample_K(domain, level, seed=seed)
    _check_K(K, a, b)
    N = domain.dim
    values = [float(x) for x in param_range]
    sups, margins, details = [], [], []
    if lemma == "L60":
        c_star = 2.0 * math.pi
        for lj in values:
            prof = build_profile("moser", MoserParams(math.exp(lj), domain=domain, coupled=True))
            best = {"sup": 0.0, "t": 0.0, "s": 0.0}
            for u in K or [None]:
                if u is None:
                    fun = _spike_only(prof, a, b, _exp_F)
                else:
                    fun = _SplitEnergy(u, prof, a, b, _exp_F, angular=16)
                r = sup_over_quadrant(fun, 2.0, 1.0)
                if r["sup"] > best["sup"]:
                    best = r
            sups.append(best["sup"])
            margins.append(c_star - best["sup"])
            details.append({"log_j": lj, "d": prof.params.d, "t": best["t"], "s": best["s"],
                            "grid_s": best.get("grid_s"), "grid_t": best.get("grid_t"),
                            "grid_values": best.get("grid_values")})
    else:
        p = critical_exponent(N)
        S = sobolev_constant(N)
        c_star = S ** (N / 2) / N
        F = _power_F(p)
        mu0 = 4.0 / domain.boundary_distance(domain.center)
        if lemma == "L8":
            mu = _cutoff_mu(K, domain, a, b, mu0) if mu_factor is None else mu_factor * mu0
        else:
            mu = (1.0 if mu_factor is None else mu_factor) * mu0
        for eps in values:
            bp = BubbleParams(eps, N=N, domain=domain, mu=mu)
            prof = build_profile("truncated_bubble", bp)
            if lemma == "L8":
                # disjoint supports: the sup splits into the two one-dimensional sups
                excess = _ray_spike_excess(prof, b)
                t_part = 0.0
                for u in K:
                    cut = build_profile("annular_cutoff", CutoffParams(mu, domain=domain), base=u)
                    ints = radial_integrals(cut, ["grad2", "jump", "crit"], a, b)
                    I = ints["grad2"] - ints["jump"]
                    if I > 0:
                        t_part = max(t_part, (p - 2) / (2 * p) * I ** (p / (p - 2))
                                     / ints["crit"] ** (2 / (p - 2)))
                sups.append(c_star + excess + t_part)
                margins.append(-excess - t_part)
                details.append({"eps": eps, "mu": mu, "spike_excess": excess,
                                "cutoff_sup": t_part})
            else:
                excess = _ray_spike_excess(prof, b)
                best = {"gain": 0.0, "t": 0.0, "s": None}
                for u in K:
                    fun = _SplitEnergy(u, prof, a, b, F, order=8, angular=3, box_order=24,
                                       degree=p)
                    r = _mixed_gain(fun, p)
                    if r["gain"] >= best["gain"]:
                        best = r
                sups.append(c_star + excess + best["gain"])
                margins.append(-excess - best["gain"])
                details.append({"eps": eps, "mu": mu, "spike_excess": excess,
                                "mixed_gain": best["gain"], "t": best["t"], "s": best["s"]})
    return SupEnergyReport(lemma, "log_j" if lemma == "L60" else "eps", values, sups, margins,
                           c_star, details)


def _spike_only(prof: Profile, a, b, F):
    ints = radial_integrals(prof, ["grad2"])

    def fun(t, s):
        q = s * s * ints["grad2"] - _radial_quad(lambda r: b * (s * prof.value(r)) ** 2, prof,
                                                 0.0, prof.support)
        return 0.5 * q - _radial_quad(lambda r: F(s * prof.value(r)), prof, 0.0, prof.support)

    return fun


def _mixed_gain(fun: "_SplitEnergy", p: float, window: float = 0.2) -> dict:
    """sup_{t, s >= 0} E(t u + s e) - sup_s E(s e) for overlapping u and e.

    Both pieces are evaluated as differences: G(t, s) = E(t u + s e) - E(s e)
    from the polar and box rules, and E(s e) - E(s* e) in closed form around
    the spike's ray maximiser s*.  The joint sup lies within ``window`` of s*.
    """
    e_b, u_b, w = fun.e_ball, fun.u_ball, fun.w
    a, b, F = fun.a, fun.b, fun.F
    q = fun.grad_e - b * float(w @ e_b**2)
    C = float(w @ np.abs(e_b) ** p)
    s_star = (q / C) ** (1.0 / (p - 2))

    def G(t, s):
        se = s * e_b
        mixed = t * u_b + se
        quad = 0.5 * t * t * fun.grad_u + t * s * fun.cross
        jump = (t * t * fun.box_jump - float(w @ fun._jump(t * u_b))
                + float(w @ (fun._jump(mixed) - fun._jump(se))))
        Fd = t**p * fun.box_F - float(w @ F(t * u_b)) + float(w @ (F(mixed) - F(se)))
        return quad - 0.5 * jump - Fd

    def best_t(s):
        hi = 1e-3
        while G(2 * hi, s) > G(hi, s) and hi < 1e3:
            hi *= 2
        sol = minimize_scalar(lambda t: -G(t, s), bounds=(0.0, 2 * hi), method="bounded",
                              options={"xatol": 1e-12 * max(hi, 1.0)})
        return max(-float(sol.fun), 0.0), float(sol.x)

    def h(s):
        ray = 0.5 * (s * s - s_star**2) * q - (s**p - s_star**p) * C / p
        return ray + best_t(s)[0]

    sol = minimize_scalar(lambda s: -h(s), bounds=((1 - window) * s_star, (1 + window) * s_star),
                          method="bounded", options={"xatol": 1e-10 * s_star})
    s_opt = float(sol.x)
    gain = max(-float(sol.fun), best_t(s_star)[0])
    return {"gain": gain, "t": best_t(s_opt)[1], "s": s_opt}


def _cutoff_mu(K, domain, a, b, mu0, growth: float = 1.1, steps: int = 60) -> float:
    """Smallest mu on a geometric grid from mu0 with I(v_mu, a, b) <= 0 for all v in K."""
    mu = mu0
    for _ in range(steps):
        worst = -math.inf
        for u in K:
            cut = build_profile("annular_cutoff", CutoffParams(mu, domain=domain), base=u)
            ints = radial_integrals(cut, ["grad2", "jump"], a, b)
            worst = max(worst, ints["grad2"] - ints["jump"])
        if worst <= 0:
            return mu
        mu *= growth
    raise ConvergenceError("no cutoff scale keeps I(v_mu) <= 0 on K")


def _ray_spike_excess(prof: Profile, b) -> float:
    """sup_s E(s e) - S_N^{N/2} / N for a positive truncated bubble, from the
    small differences (gradient excess, L2 gain, critical deficit) so the
    result keeps its relative accuracy as eps -> 0."""
    N = prof.dim
    sigma = sobolev_constant(N) ** (N / 2)
    ints = radial_integrals(prof, ["grad2_excess", "l2", "crit_deficit"])
    x = (ints["grad2_excess"] - b * ints["l2"]) / sigma
    y = ints["crit_deficit"] / sigma
    if x <= -1:
        return -sigma / N
    return sigma / N * math.expm1(0.5 * N * math.log1p(x) - 0.5 * (N - 2) * math.log1p(-y))


def _ray_sup_spike(prof: Profile, a, b, p) -> float:
    """sup over s >= 0 of E(s e) for a positive spike and F = |u|^p / p."""
    ints = radial_integrals(prof, ["grad2", "l2", "crit"])
    q = ints["grad2"] - b * ints["l2"]
    if q <= 0:
        return 0.0
    return (p - 2) / (2 * p) * q ** (p / (p - 2)) / ints["crit"] ** (2 / (p - 2))


# ---------------------------------------------------------------------------
# exponent suite


def estimate_suite(dims=(4, 5), points: int = 7) -> list[ScalingFit]:
    """Scaling fits for the bubble, cutoff and Moser estimates.

    Bubbles are centred in the cube (0, pi)^N with mu = mu0 unless mu is the
    abscissa; Moser functions live in the square (0, pi)^2.
    """
    fits = []
    for N in dims:
        dom = Domain((math.pi,) * N)
        mu0 = 4.0 / dom.boundary_distance(dom.center)
        eps = np.geomspace(1e-2, 1e-4, points)
        rows = [radial_integrals(build_profile("truncated_bubble", BubbleParams(e, N=N, domain=dom)),
                                 ["grad2_excess", "crit_deficit", "l2", "l1", "crit_minus_1"])
                for e in eps]
        col = {k: np.array([r[k] for r in rows]) for k in rows[0]}
        me = mu0 * eps
        fits.append(fit_scaling(f"grad2_excess_N{N}", me, col["grad2_excess"], N - 2,
                                one_sided="upper"))
        fits.append(fit_scaling(f"crit_deficit_N{N}", me, col["crit_deficit"], N,
                                one_sided="upper"))
        if N == 4:
            fits.append(fit_scaling(f"l2_N{N}", eps, col["l2"], 2.0,
                                    log_factor=np.abs(np.log(me)), one_sided="lower"))
        else:
            fits.append(fit_scaling(f"l2_N{N}", eps, col["l2"], 2.0, one_sided="lower"))
        fits.append(fit_scaling(f"l1_eps_N{N}", eps, col["l1"], (N - 2) / 2, one_sided="upper"))
        fits.append(fit_scaling(f"crit_minus_1_N{N}", eps, col["crit_minus_1"], (N - 2) / 2,
                                one_sided="upper"))
        mus = np.geomspace(mu0, 100 * mu0, points)
        l1 = [radial_integrals(build_profile("truncated_bubble",
                                             BubbleParams(1e-7, N=N, domain=dom, mu=m)),
                               ["l1"])["l1"] for m in mus]
        fits.append(fit_scaling(f"l1_mu_N{N}", mus, l1, -2.0, one_sided="upper"))
    # annular cutoff of the first box mode of the 4-cube
    d4 = Domain((math.pi,) * 4)
    base = BoxModes(d4, ((1, 1, 1, 1),), (1.0,))
    base = base.scaled(1.0 / math.sqrt(base.d_norm2()))
    mu0 = 4.0 / d4.boundary_distance(d4.center)
    mus = np.geomspace(mu0, 100 * mu0, points)
    cut = [radial_integrals(build_profile("annular_cutoff", CutoffParams(m, domain=d4), base=base),
                            ["cutoff_grad2"])["cutoff_grad2"] for m in mus]
    fits.append(fit_scaling("cutoff_grad2", mus, cut, -2.0, one_sided="upper"))
    # Moser functions: d at fixed j, then log j at fixed d
    sq = Domain((math.pi, math.pi))
    d0 = 0.5 * sq.boundary_distance(sq.center)
    ds = np.geomspace(d0 / 50, d0, points)
    lj0 = 20.0
    rows = [radial_integrals(build_profile("moser", MoserParams(math.exp(lj0), d=d, domain=sq)),
                             ["grad1", "l1", "l2"]) for d in ds]
    for kind, target in (("grad1", 1.0), ("l1", 2.0), ("l2", 2.0)):
        fits.append(fit_scaling(f"moser_{kind}_d", ds, [r[kind] for r in rows], target,
                                one_sided="lower" if kind == "l2" else "upper"))
    ljs = np.geomspace(4.0, 200.0, points)
    rows = [radial_integrals(build_profile("moser", MoserParams(math.exp(lj), d=d0, domain=sq)),
                             ["grad1", "l1", "l2"]) for lj in ljs]
    for kind, target in (("grad1", -0.5), ("l1", -0.5), ("l2", -1.0)):
        fits.append(fit_scaling(f"moser_{kind}_logj", ljs, [r[kind] for r in rows], target,
                                one_sided="lower" if kind == "l2" else "upper"))
    return fits
