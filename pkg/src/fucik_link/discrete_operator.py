"""Finite-difference Dirichlet Laplacian on tensor-product boxes.

Grid functions are plain 1-D numpy arrays of interior nodal values in C order
(boundary values are implicitly zero).  All inner products carry the lumped
mass weight ``cell_volume``, so ``l2_inner`` approximates the L2 product and
``d_inner(u, v) = <K u, v>`` approximates the Dirichlet form.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.fft import dstn
from scipy.sparse.linalg import LinearOperator, lobpcg

from .errors import ClusterSplitError, ConvergenceError, PreconditionError

DEFAULT_MAX_UNKNOWNS = 2**21
MAX_UNKNOWNS_4D = 17**4
EIG_TOL = 1e-9
EIG_MAXITER = 10_000
CLUSTER_GAP = 1e-6

_KINDS = {1: "interval", 2: "rectangle", 3: "box", 4: "hyperbox"}


def parse_length(text: str) -> float:
    """Parse a side length such as ``"pi"``, ``"2pi"``, ``"pi/2"`` or ``"3.5"``."""
    s = text.strip().lower().replace(" ", "")
    m = re.fullmatch(r"([0-9.eE+-]*)\*?(pi)?(?:/([0-9.eE+-]+))?", s)
    if not s or m is None or (not m.group(1) and not m.group(2)):
        raise PreconditionError(f"cannot parse length {text!r}")
    coef = float(m.group(1)) if m.group(1) not in ("", "+") else 1.0
    value = coef * (math.pi if m.group(2) else 1.0)
    if m.group(3):
        value /= float(m.group(3))
    return value


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box (0, L_1) x ... x (0, L_N).

    Meshes exist for N <= 4; higher-dimensional boxes are used by the continuum
    quadrature only.
    """

    lengths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        if not len(self.lengths) >= 1:
            raise PreconditionError("a domain needs at least one side length")
        if any(not (x > 0 and math.isfinite(x)) for x in self.lengths):
            raise PreconditionError(f"side lengths must be positive: {self.lengths}")

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def kind(self) -> str:
        return _KINDS.get(self.dim, "hyperbox")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * np.asarray(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def boundary_distance(self, x0) -> float:
        x0 = np.asarray(x0, dtype=float)
        return float(np.min(np.minimum(x0, np.asarray(self.lengths) - x0)))

    @classmethod
    def parse(cls, spec: str) -> "Domain":
        """Build from ``kind:L1,L2,...``; ``square:pi`` and ``cube:pi`` are shorthands."""
        try:
            kind, _, rest = spec.partition(":")
            lengths = [parse_length(t) for t in rest.split(",")] if rest else []
        except PreconditionError as exc:
            raise PreconditionError(f"bad domain spec {spec!r}: {exc}") from None
        kind = kind.strip().lower()
        repeat = {"square": 2, "cube": 3, "hypercube": 4}
        if kind in repeat and len(lengths) == 1:
            lengths = lengths * repeat[kind]
            kind = _KINDS[repeat[kind]]
        if kind == "hyperbox" and len(lengths) == 1:
            lengths = lengths * 4
        if kind not in _KINDS.values() or not lengths or (kind != "hyperbox" and len(lengths) > 3):
            raise PreconditionError(f"bad domain spec {spec!r}")
        dom = cls(tuple(lengths))
        if dom.kind != kind or (kind == "hyperbox" and dom.dim < 4):
            raise PreconditionError(f"{kind} needs {list(_KINDS.values()).index(kind) + 1} lengths")
        return dom

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lengths": list(self.lengths)}


@dataclass(frozen=True)
class Mesh:
    domain: Domain
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.domain.dim > 4:
            raise PreconditionError("meshes are limited to dimension 4")
        shape = tuple(int(n) for n in self.shape)
        if len(shape) == 1 and self.domain.dim > 1:
            shape = shape * self.domain.dim
        object.__setattr__(self, "shape", shape)
        if len(shape) != self.domain.dim:
            raise PreconditionError("points per axis must match the domain dimension")
        if min(shape) < 3:
            raise PreconditionError("need at least 3 interior nodes per axis")

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / (n + 1) for L, n in zip(self.domain.lengths, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        """Interior node coordinates along each axis."""
        return [h * np.arange(1, n + 1) for h, n in zip(self.spacing, self.shape)]

    def nodes(self) -> np.ndarray:
        """(size, dim) array of node coordinates in C order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(x)`` with ``x`` of shape (size, dim) at interior nodes."""
        values = np.asarray(func(self.nodes()), dtype=float).reshape(-1)
        if values.shape[0] != self.size:
            raise PreconditionError("sampled function has the wrong length")
        return values

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "points": list(self.shape)}


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Stiffness matrix K of -Laplace with Dirichlet rows eliminated, plus lumped mass."""

    mesh: Mesh
    stiffness: sp.csr_matrix = field(repr=False)

    @property
    def weight(self) -> float:
        return self.mesh.cell_volume

    @property
    def size(self) -> int:
        return self.mesh.size

    @cached_property
    def _symbol(self) -> np.ndarray:
        # eigenvalues of K in the DST-I basis, shaped like the grid
        parts = []
        for n, h in zip(self.mesh.shape, self.mesh.spacing):
            k = np.arange(1, n + 1)
            parts.append(4.0 / h**2 * np.sin(0.5 * np.pi * k / (n + 1)) ** 2)
        return sum(np.ix_(*parts)) if len(parts) > 1 else parts[0]

    def check(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.size:
            raise PreconditionError(
                f"grid function has {u.shape[0]} values, mesh has {self.size} nodes"
            )
        return u

    def apply(self, u) -> np.ndarray:
        return self.stiffness @ self.check(u)

    def solve(self, f) -> np.ndarray:
        """Return K^{-1} f by the fast sine transform (exact for this stencil)."""
        f = self.check(f)
        shape = self.mesh.shape
        if f.ndim == 1:
            g = dstn(f.reshape(shape), type=1, norm="ortho")
            return dstn(g / self._symbol, type=1, norm="ortho").reshape(-1)
        axes = tuple(range(len(shape)))
        g = dstn(f.reshape(shape + (f.shape[1],)), type=1, norm="ortho", axes=axes)
        g = g / self._symbol[..., None]
        return dstn(g, type=1, norm="ortho", axes=axes).reshape(f.shape)

    def sqrt_inv(self, f) -> np.ndarray:
        """Return K^{-1/2} f; maps D-coordinates to Euclidean ones and back."""
        f = self.check(f)
        g = dstn(f.reshape(self.mesh.shape), type=1, norm="ortho")
        return dstn(g / np.sqrt(self._symbol), type=1, norm="ortho").reshape(-1)

    def l2_inner(self, u, v) -> float:
        return self.weight * float(np.dot(self.check(u), self.check(v)))

    def l2_norm(self, u) -> float:
        return math.sqrt(max(self.l2_inner(u, u), 0.0))

    def d_inner(self, u, v) -> float:
        return self.weight * float(np.dot(self.apply(u), self.check(v)))

    def d_norm(self, u) -> float:
        return math.sqrt(max(self.d_inner(u, u), 0.0))

    def dual_norm(self, g) -> float:
        """Norm in D* of the functional h -> <g, h>_{L2}: sqrt(<g, K^{-1} g>)."""
        return math.sqrt(max(self.weight * float(np.dot(g, self.solve(g))), 0.0))


def build_operator(domain: Domain, points_per_axis, max_unknowns: int | None = None) -> DiscreteOperator:
    """Assemble the (2N+1)-point Dirichlet Laplacian on ``domain``.

    Parameters
    ----------
    domain : Domain
    points_per_axis : int or sequence of int
        Interior nodes per axis; a single integer is repeated.
    max_unknowns : int, optional
        Memory budget.  Defaults to 17**4 in four dimensions and 2**21 otherwise.
    """
    if isinstance(points_per_axis, (int, np.integer)):
        points_per_axis = (int(points_per_axis),)
    mesh = Mesh(domain, tuple(points_per_axis))
    if max_unknowns is None:
        max_unknowns = MAX_UNKNOWNS_4D if mesh.dim == 4 else DEFAULT_MAX_UNKNOWNS
    if mesh.size > max_unknowns:
        raise PreconditionError(
            f"mesh has {mesh.size} unknowns, budget is {max_unknowns}"
        )
    factors = [_second_difference(n, h) for n, h in zip(mesh.shape, mesh.spacing)]
    eyes = [sp.identity(n, format="csr") for n in mesh.shape]
    K = sp.csr_matrix((mesh.size, mesh.size))
    for axis, T in enumerate(factors):
        term = None
        for j in range(mesh.dim):
            block = T if j == axis else eyes[j]
            term = block if term is None else sp.kron(term, block, format="csr")
        K = K + term
    K = sp.csr_matrix(K)
    K.sort_indices()
    return DiscreteOperator(mesh, K)


def find_clusters(values, gap: float = CLUSTER_GAP) -> list[tuple[int, int]]:
    """Group ascending eigenvalues into half-open index ranges of near-equal values."""
    values = np.asarray(values)
    clusters = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[i - 1] > gap * abs(values[i]):
            clusters.append((start, i))
            start = i
    return clusters


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Lowest eigenpairs of K, ascending, with L2-orthonormal eigenvectors (columns)."""

    op: DiscreteOperator
    values: np.ndarray
    vectors: np.ndarray = field(repr=False)
    residuals: np.ndarray
    clusters: tuple[tuple[int, int], ...]
    # True when the last cluster may continue beyond the computed pairs
    truncated: bool = False
    iterations: int = 0

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def distinct(self) -> np.ndarray:
        """Distinct eigenvalues lambda_1 < lambda_2 < ... (cluster means)."""
        return np.array([self.values[a:b].mean() for a, b in self.clusters])

    def usable_levels(self) -> int:
        return len(self.clusters) - (1 if self.truncated else 0)

    def eigenvalue(self, level: int) -> float:
        """Distinct eigenvalue lambda_level (1-based), whole cluster required."""
        if not 1 <= level <= self.usable_levels():
            raise PreconditionError(
                f"level {level} not available; spectrum resolves {self.usable_levels()} levels"
            )
        return float(self.distinct[level - 1])

    def modes_through(self, level: int) -> int:
        """dim N_level: number of eigenpairs in the first ``level`` clusters."""
        if level == 0:
            return 0
        self.eigenvalue(level)
        return self.clusters[level - 1][1]

    def check_modes(self, modes: int) -> None:
        if not 0 <= modes <= self.count:
            raise PreconditionError(f"mode count {modes} outside 0..{self.count}")
        if modes == 0:
            return
        for a, b in self.clusters:
            if a < modes < b:
                raise ClusterSplitError(
                    f"{modes} modes split the eigenvalue cluster {a + 1}..{b} "
                    f"(lambda = {self.values[a]:.10g})"
                )
        if self.truncated and modes == self.count:
            raise ClusterSplitError("last computed cluster may be incomplete")

    def split(self, modes: int) -> "ModeSplit":
        self.check_modes(modes)
        return ModeSplit(self, modes)

    def split_level(self, level: int) -> "ModeSplit":
        return ModeSplit(self, self.modes_through(level))

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        h.update(json.dumps(self.op.mesh.to_dict(), sort_keys=True).encode())
        h.update(np.round(self.values, 12).tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "domain": self.op.mesh.domain.to_dict(),
            "points": list(self.op.mesh.shape),
            "eigenvalues": [float(x) for x in self.values],
            "residuals": [float(x) for x in self.residuals],
            "clusters": [[a + 1, b] for a, b in self.clusters],
            "truncated": self.truncated,
        }


@dataclass(frozen=True, eq=False)
class ModeSplit:
    """Orthogonal splitting D = N + M with N spanned by the first ``modes`` eigenvectors."""

    spectrum: Spectrum
    modes: int

    @property
    def op(self) -> DiscreteOperator:
        return self.spectrum.op

    @property
    def basis(self) -> np.ndarray:
        return self.spectrum.vectors[:, : self.modes]

    @property
    def values(self) -> np.ndarray:
        return self.spectrum.values[: self.modes]

    def coefficients(self, u) -> np.ndarray:
        """L2 coefficients c with P_N u = basis @ c."""
        return self.op.weight * (self.basis.T @ self.op.check(u))

    def project_n(self, u) -> np.ndarray:
        if self.modes == 0:
            return np.zeros(self.op.size)
        return self.basis @ self.coefficients(u)

    def project_m(self, u) -> np.ndarray:
        u = self.op.check(u)
        return u - self.project_n(u)

    def combine(self, coeffs) -> np.ndarray:
        if self.modes == 0:
            return np.zeros(self.op.size)
        return self.basis @ np.asarray(coeffs, dtype=float)


def _residuals(op: DiscreteOperator, values, vectors) -> np.ndarray:
    R = op.stiffness @ vectors - vectors * values
    norms = np.sqrt(op.weight * np.sum(R * R, axis=0))
    return norms / np.abs(values)


def compute_spectrum(
    op: DiscreteOperator,
    count: int,
    tol: float = EIG_TOL,
    maxiter: int = EIG_MAXITER,
    guard: int | None = None,
    seed: int = 0,
) -> Spectrum:
    """Lowest ``count`` eigenpairs of K by preconditioned LOBPCG.

    The block carries ``guard`` extra vectors so multiplicity clusters at the
    cut are detected; the relative residual ||K phi - lambda phi|| / lambda of
    every returned pair is at most ``tol``.
    """
    n = op.size
    if not 1 <= count <= n:
        raise PreconditionError(f"count must be in 1..{n}")
    if guard is None:
        guard = max(4, count // 2)
    block = min(count + guard, n)
    rng = np.random.default_rng(seed)
    precond = LinearOperator((n, n), matvec=op.solve, matmat=op.solve, dtype=float)

    if n <= 5 * block:
        lam, vec = np.linalg.eigh(op.stiffness.toarray())
        lam, vec = lam[:block], vec[:, :block]
        iters = 0
    else:
        X = rng.standard_normal((n, block))
        # start from the preconditioned block to damp high modes
        X = op.solve(X)
        lam = vec = None
        iters = 0
        for _ in range(8):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                lam, vec, hist = lobpcg(
                    op.stiffness, X, M=precond, tol=tol * 1e-2, maxiter=maxiter,
                    largest=False, retResidualNormsHistory=True,
                )
            iters += len(hist)
            order = np.argsort(lam)
            lam, vec = lam[order], vec[:, order]
            vec = vec / np.sqrt(op.weight * np.sum(vec * vec, axis=0))
            if np.all(_residuals(op, lam[:count], vec[:, :count]) <= tol):
                break
            if iters >= maxiter:
                break
            X = vec
    order = np.argsort(lam)
    lam, vec = lam[order], vec[:, order]
    vec = vec / np.sqrt(op.weight * np.sum(vec * vec, axis=0))
    # deterministic signs: largest-magnitude entry positive
    idx = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[idx, np.arange(vec.shape[1])])

    clusters_all = find_clusters(lam)
    clusters = []
    truncated = False
    for a, b in clusters_all:
        if a >= count:
            break
        if b > count:
            truncated = True
        clusters.append((a, min(b, count)))
    if block == count and count < n:
        # no guard vector: the final cluster cannot be certified complete
        truncated = True
    lam, vec = lam[:count], vec[:, :count]
    res = _residuals(op, lam, vec)
    if np.any(res > tol):
        raise ConvergenceError(
            f"eigensolver stopped with max relative residual {res.max():.3e} > {tol:g}"
        )
    return Spectrum(op, lam, vec, res, tuple(clusters), truncated, iters)


def d_inner(op: DiscreteOperator, u, v) -> float:
    return op.d_inner(u, v)


def d_norm(op: DiscreteOperator, u) -> float:
    return op.d_norm(u)


def split_and_project(spectrum: Spectrum, modes: int, u, part: str = "N") -> np.ndarray:
    """Project ``u`` onto N (first ``modes`` eigenvectors) or its complement M.

    Raises ClusterSplitError when ``modes`` cuts a multiple eigenvalue.
    """
    split = spectrum.split(modes)
    part = part.upper()[0]
    if part == "N":
        return split.project_n(u)
    if part == "M":
        return split.project_m(u)
    raise PreconditionError(f"part must be 'N' or 'M', got {part!r}")


# binary GridFunction format: little-endian float64 payload plus a JSON sidecar

def write_grid_function(path, values, mesh: Mesh, **meta) -> tuple[Path, Path]:
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    path.write_bytes(values.tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    info = {"dtype": "<f8", "shape": list(values.shape), "order": "C",
            "grid_shape": list(mesh.shape), "mesh": mesh.to_dict(), **meta}
    sidecar.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return path, sidecar


def read_grid_function(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    info = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype=info.get("dtype", "<f8"))
    return data.reshape(info["shape"]).astype(float), info


def write_spectrum(directory, spectrum: Spectrum, stem: str = "spectrum",
                   vectors: bool = False) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = directory / f"{stem}.json"
    out.write_text(json.dumps(spectrum.to_dict(), indent=2) + "\n")
    files = [out]
    if vectors:
        files.extend(write_grid_function(directory / f"{stem}_vectors.f64",
                                         spectrum.vectors, spectrum.op.mesh,
                                         layout="column per eigenvector"))
    return files
