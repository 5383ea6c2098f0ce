"""Jumping functional, reduction maps and the minimal/maximal Fucik curves.

For a point (a, b) in the square Q_l = (lambda_{l-1}, lambda_{l+1})^2 the
functional

    I(u, a, b) = ||u||_D^2 - a ||u^-||^2 - b ||u^+||^2

is strictly concave along N_{l-1} and strictly convex along M_l.  ``theta_map``
and ``tau_map`` compute the corresponding partial maximiser/minimiser; the
level functions ``n_level`` and ``m_level`` reduce I to the unit sphere and
``trace_curve`` locates their sign change in b by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, minimize
from scipy.sparse.linalg import LinearOperator

from .discrete_operator import DiscreteOperator, ModeSplit, Spectrum, compute_spectrum
from .errors import ConvergenceError, PreconditionError

REDUCTION_TOL = 1e-11
SPHERE_GTOL = 1e-7
DEADBAND = 1e-8
BRACKET_MARGIN = 1e-3


@dataclass(frozen=True)
class FucikPoint:
    """A point (a, b) together with the level l of the square Q_l it is tested in.

    Level 1 is accepted with the convention lambda_0 = 0 (then N_0 = {0}).
    """

    a: float
    b: float
    level: int = 2

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise PreconditionError(f"a and b must be positive, got ({self.a}, {self.b})")
        if self.level < 1:
            raise PreconditionError("level must be >= 1")

    def window(self, spectrum: Spectrum) -> tuple[float, float]:
        lo = 0.0 if self.level == 1 else spectrum.eigenvalue(self.level - 1)
        return lo, spectrum.eigenvalue(self.level + 1)

    def check(self, spectrum: Spectrum) -> None:
        lo, hi = self.window(spectrum)
        if not (lo < self.a < hi and lo < self.b < hi):
            raise PreconditionError(
                f"({self.a:.6g}, {self.b:.6g}) is outside Q_{self.level} = ({lo:.6g}, {hi:.6g})^2"
            )

    def scaled(self, factor: float) -> "FucikPoint":
        return FucikPoint(self.a * factor, self.b * factor, self.level)

    def swapped(self) -> "FucikPoint":
        return FucikPoint(self.b, self.a, self.level)


def jump(u, a, b) -> np.ndarray:
    """Nodal b u^+ - a u^-."""
    return np.where(u > 0, b * u, a * u)


def slopes(u, a, b) -> np.ndarray:
    # generalised derivative of jump(); nodes exactly at zero take the mean slope
    return np.where(u > 0, b, np.where(u < 0, a, 0.5 * (a + b)))


def _value(op: DiscreteOperator, u, Ku, a, b) -> float:
    up = np.maximum(u, 0.0)
    um = np.maximum(-u, 0.0)
    return op.weight * (float(u @ Ku) - a * float(um @ um) - b * float(up @ up))


@dataclass(frozen=True)
class Parts:
    u_plus: np.ndarray
    u_minus: np.ndarray
    value: float
    gradient: np.ndarray  # L2 representative: dI(u)[h] = <gradient, h>_{L2}


def parts_and_I(op: DiscreteOperator, u, a: float, b: float) -> Parts:
    """Split ``u`` into nodal positive/negative parts and evaluate I and its gradient."""
    if not (a > 0 and b > 0):
        raise PreconditionError("a and b must be positive")
    u = op.check(u)
    Ku = op.apply(u)
    up = np.maximum(u, 0.0)
    um = np.maximum(-u, 0.0)
    grad = 2.0 * (Ku - jump(u, a, b))
    return Parts(up, um, _value(op, u, Ku, a, b), grad)


def jumping_functional(op: DiscreteOperator, u, a: float, b: float) -> float:
    return parts_and_I(op, u, a, b).value


@dataclass(frozen=True)
class ReductionSolve:
    """Result of a theta/tau solve: ``output`` is theta(input) or tau(input)."""

    input: np.ndarray = field(repr=False)
    output: np.ndarray = field(repr=False)
    residual: float
    iterations: int
    value: float
    coefficients: np.ndarray | None = field(default=None, repr=False)
    min_curvature: float = math.nan


def _orth_check(split: ModeSplit, x, which: str, rtol: float = 1e-8) -> None:
    op = split.op
    scale = max(op.d_norm(x), 1e-300)
    if which == "M":
        off = op.d_norm(split.project_n(x)) if split.modes else 0.0
    else:
        off = op.d_norm(split.project_m(x))
    if off > rtol * scale and off > 1e-14:
        raise PreconditionError(
            f"input is not in the {'complement' if which == 'M' else 'span'} "
            f"(off-subspace D-norm {off:.2e})"
        )


def _theta(split: ModeSplit, w, a, b, tol=REDUCTION_TOL, maxiter=100, c0=None,
           Kw=None) -> ReductionSolve:
    op = split.op
    p = split.modes
    wgt = op.weight
    if Kw is None:
        Kw = op.apply(w)
    if p == 0:
        return ReductionSolve(w, np.zeros_like(w), 0.0, 0, _value(op, w, Kw, a, b),
                              np.zeros(0))
    Phi = split.basis
    lam = split.values
    KPhi = _kbasis(split)
    G0 = wgt * (Phi.T @ KPhi)
    c = np.zeros(p) if c0 is None else np.array(c0, dtype=float)
    scale = max(1.0, op.d_norm(w))

    def evaluate(c):
        u = w + Phi @ c
        Ku = Kw + KPhi @ c
        return u, Ku, _value(op, u, Ku, a, b)

    u, Ku, f = evaluate(c)
    res = math.inf
    it = 0
    for it in range(maxiter + 1):
        grad = 2.0 * wgt * (Phi.T @ (Ku - jump(u, a, b)))
        res = math.sqrt(float(np.sum(grad**2 / lam)))
        if res <= tol * scale or it == maxiter:
            break
        S = slopes(u, a, b)
        H = 2.0 * (G0 - wgt * (Phi.T @ (S[:, None] * Phi)))
        delta = np.linalg.solve(H, -grad)
        slope = float(grad @ delta)
        step = 1.0
        # below roundoff in f the plain Newton step is taken
        tiny = slope <= 1e-13 * max(1.0, abs(f))
        while True:
            u_new, Ku_new, f_new = evaluate(c + step * delta)
            if tiny or f_new >= f + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12:
            break
        c = c + step * delta
        u, Ku, f = u_new, Ku_new, f_new
    if res > tol * scale * 1e3:
        raise ConvergenceError(f"theta solve stalled at residual {res:.3e}")
    return ReductionSolve(w, Phi @ c, res, it, f, c)


_KBASIS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _kbasis(split: ModeSplit) -> np.ndarray:
    key = (id(split.spectrum), split.modes)
    hit = _KBASIS_CACHE.get(key)
    if hit is None or hit.shape[1] != split.modes:
        hit = split.op.stiffness @ split.basis
        if len(_KBASIS_CACHE) > 64:
            _KBASIS_CACHE.clear()
        _KBASIS_CACHE[key] = hit
    return hit


def _tau(split: ModeSplit, v, a, b, tol=REDUCTION_TOL, maxiter=100, z0=None,
         cg_maxiter=1000) -> ReductionSolve:
    op = split.op
    K = op.stiffness
    wgt = op.weight
    Phi = split.basis

    def pm(x):
        return x - Phi @ (wgt * (Phi.T @ x))

    z = np.zeros(op.size) if z0 is None else pm(np.asarray(z0, dtype=float))
    Kv = K @ v
    Kz = K @ z
    # tolerances scale with ||v|| so that tau(t v) = t tau(v) holds to rounding
    scale = op.d_norm(v) or 1.0
    min_curv = math.inf
    res = math.inf
    u = v + z
    f = _value(op, u, Kv + Kz, a, b)
    it = 0
    for it in range(maxiter + 1):
        g = pm(2.0 * (Kv + Kz - jump(u, a, b)))
        G = pm(op.solve(g))
        res = math.sqrt(max(wgt * float(g @ G), 0.0))
        if res <= tol * scale or it == maxiter:
            break
        S = slopes(u, a, b)
        # preconditioned CG for the semismooth Newton system on M
        x = np.zeros_like(z)
        r = -g
        zr = -G
        pdir = zr.copy()
        rz = float(r @ zr)
        inner_tol = max(1e-9 * res, 0.05 * tol * scale) ** 2 / wgt
        for _ in range(cg_maxiter):
            Kp = K @ pdir
            q = pm(2.0 * (Kp - S * pdir))
            curv = float(pdir @ q)
            pKp = float(pdir @ Kp)
            if pKp > 0:
                min_curv = min(min_curv, curv / (2.0 * pKp))
            if curv <= 0:
                raise ConvergenceError("tau subproblem lost convexity (non-positive curvature)")
            alpha = rz / curv
            x += alpha * pdir
            r -= alpha * q
            zr = pm(op.solve(r))
            rz_new = float(r @ zr)
            if rz_new <= inner_tol:
                break
            pdir = zr + (rz_new / rz) * pdir
            rz = rz_new
        slope = float(g @ x)
        Kx = K @ x
        step = 1.0
        tiny = -wgt * slope <= 1e-13 * max(1.0, abs(f))
        while True:
            z_new = z + step * x
            Kz_new = Kz + step * Kx
            u_new = v + z_new
            f_new = _value(op, u_new, Kv + Kz_new, a, b)
            if tiny or f_new <= f + 1e-4 * step * wgt * slope or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12:
            break
        z, Kz, u, f = z_new, Kz_new, u_new, f_new
    if res > tol * scale * 1e3:
        raise ConvergenceError(f"tau solve stalled at residual {res:.3e}")
    return ReductionSolve(v, z, res, it, f, None, min_curv)


def theta_map(spectrum: Spectrum, w, point: FucikPoint, tol: float = REDUCTION_TOL,
              maxiter: int = 100) -> ReductionSolve:
    """theta(w, a, b): the maximiser over N_{l-1} of v -> I(v + w, a, b).

    ``w`` must lie in M_{l-1}.  The returned residual is the D*-norm of the
    derivative of I restricted to N_{l-1}.
    """
    point.check(spectrum)
    split = spectrum.split_level(point.level - 1)
    w = spectrum.op.check(w)
    _orth_check(split, w, "M")
    return _theta(split, w, point.a, point.b, tol, maxiter)


def tau_map(spectrum: Spectrum, v, point: FucikPoint, tol: float = REDUCTION_TOL,
            maxiter: int = 100) -> ReductionSolve:
    """tau(v, a, b): the minimiser over M_l of w -> I(v + w, a, b), for v in N_l."""
    point.check(spectrum)
    split = spectrum.split_level(point.level)
    v = spectrum.op.check(v)
    _orth_check(split, v, "N")
    return _tau(split, v, point.a, point.b, tol, maxiter)


# ---------------------------------------------------------------------------
# level functions


@dataclass(frozen=True)
class LevelResult:
    kind: str
    point: FucikPoint
    value: float
    argument: np.ndarray = field(repr=False)  # w for n_level, v for m_level
    u: np.ndarray = field(repr=False)  # theta(w) + w  or  v + tau(v)
    grad_norm: float
    spread: float
    flagged: bool
    evaluations: int
    pool: tuple = field(default=(), repr=False)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(1.0 - z * z)
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def sphere_grid(q: int, seed: int = 0) -> np.ndarray:
    """Deterministic sample of the unit sphere S^{q-1} used for m_level."""
    if q == 1:
        return np.array([[1.0], [-1.0]])
    if q == 2:
        t = 2.0 * math.pi * np.arange(72) / 72
        return np.column_stack([np.cos(t), np.sin(t)])
    if q == 3:
        return _fibonacci_sphere(128)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((512, q))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _descend(x, evaluate, inner, maxiter, gtol, alpha0=0.5, project=None):
    """Riemannian steepest descent on a unit sphere with BB steps and Armijo backtracking.

    ``evaluate(x)`` returns (f, tangent_gradient, aux); the retraction is
    ``project`` (if given) followed by normalisation in ``inner``.  Projecting
    every iterate matters: the radial rescaling amplifies any roundoff
    component outside the constraint subspace geometrically.
    """
    f, gt, aux = evaluate(x)
    gn2 = inner(gt, gt)
    alpha = alpha0
    evals = 1
    it = 0
    for it in range(maxiter):
        if math.sqrt(max(gn2, 0.0)) <= gtol:
            break
        while True:
            y = x - alpha * gt
            if project is not None:
                y = project(y)
            y = y / math.sqrt(inner(y, y))
            fy, gty, auxy = evaluate(y)
            evals += 1
            if fy <= f - 1e-4 * alpha * gn2 or alpha < 1e-10:
                break
            alpha *= 0.5
        if alpha < 1e-10:
            break
        s = y - x
        dy = gty - gt
        sy = inner(s, dy)
        x, f, gt, aux = y, fy, gty, auxy
        gn2 = inner(gt, gt)
        alpha = inner(s, s) / sy if sy > 0 else alpha0
        alpha = min(max(alpha, 1e-4), 1e2)
    return x, f, math.sqrt(max(gn2, 0.0)), aux, evals


def n_level(spectrum: Spectrum, point: FucikPoint, seed: int = 0, starts: int = 8,
            samples: int = 64, warm: LevelResult | None = None,
            gtol: float = SPHERE_GTOL, maxiter: int = 2000,
            spread_tol: float = 1e-6) -> LevelResult:
    """n_{l-1}(a, b) = inf over unit w in M_{l-1} of I(theta(w) + w, a, b).

    Multistart over coarse samples of the low modes of M_{l-1}.  Each start is
    refined by L-BFGS on the scale-invariant quotient
    I(theta(w) + w) / ||w||_D^2 in whitened coordinates y = K^{1/2} w, where
    the D metric is Euclidean; the gradient is projected onto M_{l-1}.
    ``warm`` reuses the final iterates of a previous call as the only starts.
    """
    point.check(spectrum)
    op = spectrum.op
    K = op.stiffness
    wgt = op.weight
    a, b = point.a, point.b
    split = spectrum.split_level(point.level - 1)
    p = split.modes
    Phi = split.basis

    def pm(x):
        return x - Phi @ (wgt * (Phi.T @ x)) if p else x

    state = {"c": None}

    def reduce(z, Kz):
        th = _theta(split, z, a, b, c0=state["c"], Kw=Kz)
        state["c"] = th.coefficients
        return th

    def evaluate(z):
        # value on the sphere, used for screening candidates
        z = z / op.d_norm(z)
        return reduce(z, K @ z).value, None, None

    def quotient(y):
        z = pm(op.sqrt_inv(y))
        Kz = K @ z
        th = reduce(z, Kz)
        u = z + th.output
        Ku = Kz + (_kbasis(split) @ th.coefficients if p else 0.0)
        g = 2.0 * (Ku - jump(u, a, b))
        q = wgt * float(z @ Kz)
        f = th.value / q
        grad = (wgt * g - 2.0 * f * wgt * Kz) / q
        return f, pm(op.sqrt_inv(grad))

    if warm is not None and warm.pool:
        start_list = [np.array(z) for z in warm.pool]
    else:
        start_list = _sphere_starts(spectrum, point, p, starts, samples, seed, evaluate)

    results = []
    evals = 0
    for z0 in start_list:
        state["c"] = None
        z0 = pm(z0)
        y0 = op.sqrt_inv(K @ z0)
        y0 /= np.linalg.norm(y0)
        sol = minimize(quotient, y0, jac=True, method="L-BFGS-B",
                       options={"maxiter": maxiter, "maxcor": 20, "gtol": 1e-14,
                                "ftol": 1e-16})
        evals += sol.nfev
        y = sol.x / np.linalg.norm(sol.x)
        z = pm(op.sqrt_inv(y))
        z /= op.d_norm(z)
        state["c"] = None
        th = reduce(z, K @ z)
        gn = float(np.linalg.norm(quotient(y)[1]))
        results.append((th.value, z, gn, z + th.output))
    values = np.array([r[0] for r in results])
    best = int(np.argmin(values))
    f, z, gn, u = results[best]
    spread = float(values.max() - values.min())
    return LevelResult("n", point, f, z, u, gn, spread, spread > spread_tol, evals,
                       tuple(r[1] for r in results))


def _sphere_starts(spectrum, point, p, starts, samples, seed, evaluate):
    """Best coarse samples on the unit sphere of the first modes of M_{l-1}."""
    op = spectrum.op
    level_modes = spectrum.modes_through(point.level) - p
    r = min(spectrum.count - p, level_modes + 3)
    vecs = spectrum.vectors[:, p:p + r]
    vals = spectrum.values[p:p + r]
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((samples, r))
    # include the pure eigenmodes of the first cluster and their negatives
    pure = np.zeros((2 * level_modes, r))
    for j in range(level_modes):
        pure[2 * j, j] = 1.0
        pure[2 * j + 1, j] = -1.0
    coeffs = np.vstack([pure, coeffs])
    coeffs /= np.linalg.norm(coeffs, axis=1, keepdims=True)
    cand = []
    for c in coeffs:
        z = vecs @ (c / np.sqrt(vals))
        cand.append((evaluate(z)[0], z))
    order = np.argsort([c[0] for c in cand], kind="stable")
    chosen = [cand[i][1] for i in order[: max(starts - 2, 1)]]
    # two smooth random directions outside the sampled subspace
    for _ in range(min(2, starts - len(chosen))):
        chosen.append(op.solve(rng.standard_normal(op.size)))
    return chosen


def m_level(spectrum: Spectrum, point: FucikPoint, seed: int = 0, polish: int = 3,
            warm: LevelResult | None = None, gtol: float = SPHERE_GTOL,
            maxiter: int = 200, spread_tol: float = 1e-6) -> LevelResult:
    """m_l(a, b) = sup over unit v in N_l of I(v + tau(v), a, b).

    Fine grid on the low-dimensional sphere N_l ∩ S (tau warm-started along the
    grid) followed by quasi-Newton ascent from the best separated grid points.
    """
    point.check(spectrum)
    op = spectrum.op
    wgt = op.weight
    a, b = point.a, point.b
    split = spectrum.split_level(point.level)
    q = split.modes
    Phi = split.basis
    scale = 1.0 / np.sqrt(split.values)
    grid = sphere_grid(q, seed)
    pool = list(warm.pool) if warm is not None and len(warm.pool) == len(grid) else None

    values = np.empty(len(grid))
    taus = []
    prev = None
    for i, c in enumerate(grid):
        v = Phi @ (c * scale)
        z0 = pool[i] if pool is not None else prev
        sol = _tau(split, v, a, b, z0=z0)
        values[i] = sol.value
        taus.append(sol.output)
        prev = sol.output
    evals = len(grid)

    state = {}

    def evaluate(c):
        v = Phi @ (c * scale)
        sol = _tau(split, v, a, b, z0=state.get("z"))
        state["z"] = sol.output
        u = v + sol.output
        g = 2.0 * (op.apply(u) - jump(u, a, b))
        grad = scale * (wgt * (Phi.T @ g))
        return sol.value, grad - float(grad @ c) * c, (v, u)

    def negative(x):
        # -M(x / |x|), degree-0 homogeneous, so the tangent gradient scales by 1/|x|
        r = np.linalg.norm(x)
        f, gt, _ = evaluate(x / r)
        return -f, -gt / r

    order = np.argsort(-values, kind="stable")
    picked = []
    for i in order:
        if len(picked) >= polish:
            break
        if all(float(grid[i] @ grid[j]) < 0.9 for j in picked):
            picked.append(i)
    results = []
    for i in picked:
        state["z"] = taus[i]
        c = grid[i].copy()
        if q > 1:
            sol = minimize(negative, c, jac=True, method="L-BFGS-B",
                           options={"maxiter": maxiter, "gtol": 1e-14, "ftol": 1e-16})
            evals += sol.nfev
            c = sol.x / np.linalg.norm(sol.x)
        f, gt, (v, u) = evaluate(c)
        results.append((f, v, u, float(np.linalg.norm(gt))))
    finals = np.array([r[0] for r in results])
    best = int(np.argmax(finals))
    val, v, u, gn = results[best]
    spread = float(finals.max() - finals.min())
    return LevelResult("m", point, val, v, u, gn, spread, spread > spread_tol, evals,
                       tuple(taus))


# ---------------------------------------------------------------------------
# curve tracing


@dataclass(frozen=True)
class CurveSample:
    a: float
    b: float
    kind: str
    level: int
    bracket_width: float
    value_lo: float
    value_hi: float
    status: str = "ok"  # "ok", "above" (curve leaves through the top), "below"

    @property
    def in_range(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class CurveTrace:
    kind: str
    level: int
    samples: tuple[CurveSample, ...]
    tol_b: float
    window: tuple[float, float]
    meta: dict = field(default_factory=dict)

    @property
    def inside(self) -> tuple[CurveSample, ...]:
        return tuple(s for s in self.samples if s.in_range)

    @property
    def a(self) -> np.ndarray:
        return np.array([s.a for s in self.inside])

    @property
    def b(self) -> np.ndarray:
        return np.array([s.b for s in self.inside])

    def is_decreasing(self, slack: float | None = None) -> bool:
        slack = self.tol_b if slack is None else slack
        pts = sorted(self.inside, key=lambda s: s.a)
        return all(q.b < p.b + slack for p, q in zip(pts, pts[1:]))

    def rows(self) -> list[dict]:
        return [{"a": s.a, "b": s.b, "kind": s.kind, "level": s.level,
                 "bracket_width": s.bracket_width} for s in self.inside]


def default_tol_b(spectrum: Spectrum, level: int) -> float:
    lo = 0.0 if level == 1 else spectrum.eigenvalue(level - 1)
    return 1e-4 * (spectrum.eigenvalue(level + 1) - lo)


def curve_point(spectrum: Spectrum, kind: str, level: int, a: float,
                tol_b: float | None = None, seed: int = 0,
                deadband: float = DEADBAND) -> CurveSample:
    """Bisection in b on the sign of n_{l-1}(a, .) (kind "nu") or m_l(a, .) (kind "mu")."""
    if kind not in ("nu", "mu"):
        raise PreconditionError(f"kind must be 'nu' or 'mu', got {kind!r}")
    tol_b = default_tol_b(spectrum, level) if tol_b is None else tol_b
    lo_eig = 0.0 if level == 1 else spectrum.eigenvalue(level - 1)
    hi_eig = spectrum.eigenvalue(level + 1)
    if not lo_eig < a < hi_eig:
        raise PreconditionError(f"a = {a} outside ({lo_eig:.6g}, {hi_eig:.6g})")
    margin = BRACKET_MARGIN * (hi_eig - lo_eig)
    lo, hi = lo_eig + margin, hi_eig - margin

    if kind == "nu":
        def level_fn(bb, warm):
            return n_level(spectrum, FucikPoint(a, bb, level), seed=seed, warm=warm)

        def keeps_lo(val):  # n >= 0 (closed condition) moves the lower end up
            return val >= -deadband
    else:
        def level_fn(bb, warm):
            return m_level(spectrum, FucikPoint(a, bb, level), seed=seed, warm=warm)

        def keeps_lo(val):  # m <= 0 moves the upper end down
            return val > deadband

    r_lo = level_fn(lo, None)
    r_hi = level_fn(hi, None)
    if not keeps_lo(r_lo.value):
        return CurveSample(a, lo, kind, level, 0.0, r_lo.value, r_hi.value, "below")
    if keeps_lo(r_hi.value):
        return CurveSample(a, hi, kind, level, 0.0, r_lo.value, r_hi.value, "above")
    warm = r_lo
    while hi - lo > tol_b:
        mid = 0.5 * (lo + hi)
        r = level_fn(mid, warm)
        if keeps_lo(r.value):
            lo, r_lo = mid, r
        else:
            hi, r_hi = mid, r
        warm = r
    return CurveSample(a, 0.5 * (lo + hi), kind, level, hi - lo, r_lo.value, r_hi.value)


def trace_curve(spectrum: Spectrum, kind: str, level: int, a_grid,
                tol_b: float | None = None, seed: int = 0, strict: bool = False,
                workers: int = 1) -> CurveTrace:
    """Sample b = nu_{l-1}(a) or b = mu_l(a) on ``a_grid``.

    Samples whose level function keeps one sign on the whole window are
    recorded with status "above"/"below"; ``strict`` turns them into errors.
    """
    tol_b = default_tol_b(spectrum, level) if tol_b is None else tol_b
    a_grid = [float(x) for x in np.atleast_1d(a_grid)]
    if workers > 1 and len(a_grid) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(curve_point, spectrum, kind, level, a, tol_b, seed)
                       for a in a_grid]
            samples = [f.result() for f in futures]
    else:
        samples = [curve_point(spectrum, kind, level, a, tol_b, seed) for a in a_grid]
    if strict:
        bad = [s for s in samples if not s.in_range]
        if bad:
            raise PreconditionError(
                f"level function has no sign change for a = {[s.a for s in bad]}"
            )
    lo = 0.0 if level == 1 else spectrum.eigenvalue(level - 1)
    window = (lo, spectrum.eigenvalue(level + 1))
    meta = {"mesh": spectrum.op.mesh.to_dict(), "tol_b": tol_b, "seed": seed,
            "deadband": DEADBAND, "bracket_margin": BRACKET_MARGIN}
    return CurveTrace(kind, level, tuple(samples), tol_b, window, meta)


# ---------------------------------------------------------------------------
# membership residual


@dataclass(frozen=True)
class MembershipResult:
    residual: float
    u: np.ndarray = field(repr=False)
    starts: int


def _fucik_residual(op: DiscreteOperator, u, a, b) -> float:
    r = op.apply(u) - jump(u, a, b)
    return op.dual_norm(r) / max(op.d_norm(u), 1e-300)


def membership_residual(spectrum: Spectrum, a: float, b: float, level: int | None = None,
                        seed: int = 0, extra_starts=(), random_starts: int = 4) -> MembershipResult:
    """min over ||u||_D = 1 of ||A u - b u^+ + a u^-||_{D*} by multistart least squares.

    In whitened coordinates y = K^{1/2} u the residual is y - C f(C y) with
    C = K^{-1/2}, whose Jacobian I - C S C is applied matrix-free.
    """
    if not (a > 0 and b > 0):
        raise PreconditionError("a and b must be positive")
    op = spectrum.op
    sw = math.sqrt(op.weight)
    starts = [spectrum.vectors[:, j] for j in range(spectrum.count)]
    starts += [-s for s in starts]
    if level is not None:
        pt = FucikPoint(a, b, level)
        try:
            pt.check(spectrum)
        except PreconditionError:
            pass
        else:
            starts.append(n_level(spectrum, pt, seed=seed).u)
            starts.append(m_level(spectrum, pt, seed=seed).u)
    starts += [np.asarray(x, dtype=float) for x in extra_starts]
    rng = np.random.default_rng(seed)
    starts += [op.solve(rng.standard_normal(op.size)) for _ in range(random_starts)]

    def whiten(u):
        # y with |y| = ||u||_D
        return sw * op.sqrt_inv(op.apply(u))

    def unwhiten(y):
        return op.sqrt_inv(y) / sw

    def fun(y):
        ny = np.linalg.norm(y)
        yh = y / ny
        u = unwhiten(yh)
        return yh - sw * op.sqrt_inv(jump(u, a, b))

    def jac(y):
        ny = np.linalg.norm(y)
        yh = y / ny
        S = slopes(unwhiten(yh), a, b)
        n = len(y)

        def mv(x):
            x = np.ravel(x)
            t = (x - yh * float(yh @ x)) / ny
            return t - op.sqrt_inv(S * op.sqrt_inv(t))

        def rmv(x):
            x = np.ravel(x)
            t = x - op.sqrt_inv(S * op.sqrt_inv(x))
            return (t - yh * float(yh @ t)) / ny

        return LinearOperator((n, n), matvec=mv, rmatvec=rmv, dtype=float)

    # screen the starts and refine the most promising ones
    scored = sorted(((_fucik_residual(op, u, a, b), i) for i, u in enumerate(starts)))
    best_r, best_u = math.inf, None
    for _, i in scored[:6]:
        y0 = whiten(starts[i])
        y0 /= np.linalg.norm(y0)
        sol = least_squares(fun, y0, jac=jac, method="trf", tr_solver="lsmr",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
        u = unwhiten(sol.x / np.linalg.norm(sol.x))
        r = _fucik_residual(op, u, a, b)
        if r < best_r:
            best_r, best_u = r, u
    for _, i in scored[:1]:
        r0 = _fucik_residual(op, starts[i], a, b)
        if r0 < best_r:
            best_r, best_u = r0, starts[i]
    return MembershipResult(best_r, best_u / op.d_norm(best_u), len(starts))


def spectrum_for_level(op: DiscreteOperator, level: int, extra: int = 3, **kw) -> Spectrum:
    """Compute enough eigenpairs that clusters 1..level+1 are complete, plus ``extra``."""
    count = min(level + 1 + extra, op.size)
    while True:
        spec = compute_spectrum(op, count, **kw)
        if spec.usable_levels() >= level + 1 and spec.count - spec.modes_through(level + 1) >= extra:
            return spec
        if count >= op.size:
            return spec
        count = min(2 * count, op.size)


def classify_point(spectrum: Spectrum, point: FucikPoint, seed: int = 0,
                   deadband: float = DEADBAND) -> str:
    """Locate (a, b) relative to the minimal and maximal curves of Q_l.

    Returns "below" (b < nu, not in the spectrum), "above" (b > mu, not in the
    spectrum), "on_curve" or "undetermined" for the closed gap between curves.
    """
    n = n_level(spectrum, point, seed=seed).value
    if n > deadband:
        return "below"
    m = m_level(spectrum, point, seed=seed).value
    if m < -deadband:
        return "above"
    if abs(n) <= deadband or abs(m) <= deadband:
        return "on_curve"
    return "undetermined"


def write_trace_csv(path, trace: CurveTrace) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["a", "b", "kind", "level", "bracket_width"])
        writer.writeheader()
        for row in trace.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------------------
# closed-form 1D curves


def _hump_counts(level: int, start: str) -> tuple[int, int]:
    # a nontrivial solution with level-1 interior zeros has `level` humps that
    # alternate in sign; returns (positive humps, negative humps)
    big, small = (level + 1) // 2, level // 2
    return (big, small) if start == "pos" else (small, big)


def oracle_branch_b(level: int, a: float, start: str = "pos", length: float = math.pi) -> float:
    """b on the 1D branch through (lambda_l, lambda_l) whose solution starts with sign ``start``.

    A positive hump of -u'' = b u spans pi/sqrt(b), a negative one pi/sqrt(a);
    the humps must fill (0, length).  Returns nan when no b > 0 fits.
    """
    p, m = _hump_counts(level, start)
    rest = length - m * math.pi / math.sqrt(a)
    if p == 0:
        return math.nan
    if rest <= 0:
        return math.inf
    return (p * math.pi / rest) ** 2


def fucik_1d_oracle(level: int, a_grid, length: float = math.pi, branch: str = "all") -> CurveTrace:
    """Fucik curves of -u'' on (0, length) with Dirichlet ends, from hump matching.

    ``branch`` selects "pos", "neg" (sign of u near 0), "all" (both, as
    separate samples) or the envelopes "nu" (lower) and "mu" (upper).  Samples
    outside Q_l of the continuum eigenvalues carry status "above"/"below".
    """
    if level < 1:
        raise PreconditionError("level must be >= 1")
    eig = [(k * math.pi / length) ** 2 for k in range(level + 2)]
    lo, hi = eig[level - 1], eig[level + 1]
    samples = []
    for a in np.atleast_1d(a_grid):
        a = float(a)
        bs = {s: oracle_branch_b(level, a, s, length) for s in ("pos", "neg")}
        if branch in ("pos", "neg"):
            picks = [(branch, bs[branch])]
        elif branch == "all":
            picks = [("pos", bs["pos"])] + ([("neg", bs["neg"])] if level % 2 else [])
        elif branch in ("nu", "mu"):
            vals = [v for v in bs.values() if not math.isnan(v)]
            picks = [(branch, min(vals) if branch == "nu" else max(vals))]
        else:
            raise PreconditionError(f"unknown branch {branch!r}")
        for kind, b in picks:
            status = "ok" if lo < b < hi else ("above" if b >= hi else "below")
            samples.append(CurveSample(a, b, kind, level, 0.0, 0.0, 0.0, status))
    return CurveTrace(branch, level, tuple(samples), 0.0, (lo, hi),
                      {"length": length, "oracle": "hump matching"})
