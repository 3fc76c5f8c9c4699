"""Radial grids and per-sector operators on ``L^2([0, R], r^2 dr)``.

Storage convention
------------------
Grid functions ``f(r_i)`` are stored in *unitary coordinates*
``f~_i = sqrt(w_i) f(r_i)``, so the weighted inner product
``<u, v> = sum_i w_i conj(u_i) v_i`` becomes the Euclidean one.  An operator
with integral kernel ``k(r, r')`` (acting as ``int k(r, r') f(r') r'^2 dr'``)
is then the plain matrix ``sqrt(w_i) k(r_i, r_j) sqrt(w_j)``: traces,
products, adjoints and spectra are the ordinary matrix ones.

Since ``f -> u = r f`` maps ``L^2(r^2 dr)`` unitarily onto ``L^2(dr)``, the
same unitary vector also represents ``u`` on the underlying 1D grid, which
is where the Laplacian is discretised (Dirichlet at 0 and R).

Two discretisations are provided:

``uniform``
    Midpoint grid ``r_i = (i - 1/2) R / N`` with a sine discrete variable
    representation: the Dirichlet Laplacian is exact on the first ``N``
    sine modes.
``legendre-mapped``
    Gauss-Legendre nodes mapped onto ``(0, R)`` with the Lagrange basis
    ``(1 - x^2) l_k(x)``; points cluster near the origin, which helps
    resolve collapsing states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .legendre import gauss_legendre, legendre_all

__all__ = [
    "RadialGrid",
    "SectorOperator",
    "build_grid",
    "build_kinetic",
    "build_kinetics",
    "build_dilation",
    "radial_derivative",
    "position",
    "operator_norm",
    "weighted_trace",
    "weighted_product",
    "commutator",
    "hermiticity_residual",
]

SCHEMES = ("uniform", "legendre-mapped")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Discretisation of ``[0, R]`` carrying the ``r^2 dr`` measure.

    ``laplacian`` is ``-d^2/dr^2`` and ``derivative`` is ``d/dr``, both
    acting on ``u = r f`` in unitary coordinates.  The Laplacian is the
    symmetric variational form; the derivative is collocation (exact
    pointwise derivative of the interpolant), hence not antisymmetric.
    """

    points: np.ndarray
    weights: np.ndarray
    box_radius: float
    scheme: str
    laplacian: np.ndarray = field(repr=False)
    derivative: np.ndarray = field(repr=False)
    _interp: object = field(repr=False, default=None)

    @property
    def size(self):
        return len(self.points)

    @property
    def sqrt_weights(self):
        return np.sqrt(self.weights)

    def spec(self):
        """JSON-friendly description (enough to rebuild the grid)."""
        return {"N": self.size, "R": self.box_radius, "scheme": self.scheme}

    def to_unitary(self, values):
        """Sampled function values -> unitary coordinates."""
        return self.sqrt_weights * np.asarray(values)

    def from_unitary(self, vec):
        return np.asarray(vec) / self.sqrt_weights

    def kernel_to_matrix(self, kernel):
        """Kernel values ``k(r_i, r_j)`` -> operator matrix."""
        s = self.sqrt_weights
        return s[:, None] * np.asarray(kernel) * s[None, :]

    def matrix_to_kernel(self, matrix):
        s = self.sqrt_weights
        return np.asarray(matrix) / (s[:, None] * s[None, :])

    def integrate(self, values):
        """``int_0^R f(r) r^2 dr`` by the grid quadrature."""
        return np.sum(self.weights * np.asarray(values), axis=-1)

    def interpolation_matrix(self, r_new):
        """Matrix ``E`` with ``f(r_new) = E @ f~`` for the grid's basis.

        The interpolant is the one implied by the discretisation (sine series
        or mapped Lagrange polynomials), so it is exact for the represented
        functions.
        """
        return self._interp(np.atleast_1d(np.asarray(r_new, dtype=float)))


def _sine_dvr(n, radius):
    h = radius / n
    r = (np.arange(1, n + 1) - 0.5) * h
    modes = np.arange(1, n + 1)
    k = modes * np.pi / radius
    sines = np.sin(np.outer(r, k))
    norms2 = np.sum(sines**2, axis=0)
    # columns of ``sines`` are orthogonal on the midpoint grid, so the
    # values -> coefficients map is an explicit transpose
    to_coeffs = sines.T / norms2[:, None]
    s = sines / np.sqrt(norms2)
    lap = (s * k**2) @ s.T
    deriv = (np.cos(np.outer(r, k)) * k) @ to_coeffs

    def interp(r_new):
        vals = np.sin(np.outer(r_new, k)) @ to_coeffs
        return vals / np.sqrt(h) / r_new[:, None]

    return r, r**2 * h, lap, deriv, interp


def _legendre_basis(x_nodes, w_nodes, y):
    """Values and x-derivatives of ``chi_k(y) = (1-y^2) l_k(y) / (1-x_k^2)``."""
    n = len(x_nodes)
    vander = legendre_all(n - 1, x_nodes).T  # V[k, n] = P_n(x_k)
    inv = ((2 * np.arange(n) + 1) / 2.0)[:, None] * vander.T * w_nodes[None, :]
    p = legendre_all(n - 1, y)  # p[n, q]
    dp = np.zeros_like(p)
    if n > 1:
        dp[1] = 1.0
    for j in range(1, n - 1):
        dp[j + 1] = dp[j - 1] + (2 * j + 1) * p[j]
    lag = p.T @ inv  # [q, k]
    dlag = dp.T @ inv
    scale = 1.0 / (1.0 - x_nodes**2)
    chi = (1.0 - y**2)[:, None] * lag * scale
    dchi = ((-2.0 * y)[:, None] * lag + (1.0 - y**2)[:, None] * dlag) * scale
    return chi, dchi


def _legendre_dvr(n, radius):
    x, wx = gauss_legendre(n)
    r = 0.5 * radius * (x + 1.0)
    y, wy = gauss_legendre(n + 2)
    chi, dchi = _legendre_basis(x, wx, y)
    t_x = (dchi * wy[:, None]).T @ dchi
    inv_sqrt = 1.0 / np.sqrt(wx)
    lap = (4.0 / radius**2) * t_x * np.outer(inv_sqrt, inv_sqrt)
    lap = 0.5 * (lap + lap.T)
    _, dchi_nodes = _legendre_basis(x, wx, x)
    # u = sum_k u(r_k) chi_k, so the nodal derivative matrix is dchi at nodes
    deriv = (2.0 / radius) * np.sqrt(wx)[:, None] * dchi_nodes * inv_sqrt[None, :]

    def interp(r_new):
        y_new = 2.0 * r_new / radius - 1.0
        chi_new, _ = _legendre_basis(x, wx, y_new)
        return chi_new / np.sqrt(0.5 * radius * wx)[None, :] / r_new[:, None]

    return r, r**2 * 0.5 * radius * wx, lap, deriv, interp


def build_grid(N, R, scheme="uniform"):
    """Build a :class:`RadialGrid` with ``N`` points on ``(0, R)``."""
    if int(N) != N or N < 8:
        raise ValueError("radial grid needs N >= 8 points")
    if not R > 0:
        raise ValueError("box radius must be positive")
    if scheme == "uniform":
        parts = _sine_dvr(int(N), float(R))
    elif scheme == "legendre-mapped":
        parts = _legendre_dvr(int(N), float(R))
    else:
        raise ValueError(f"unknown grid scheme {scheme!r}; expected one of {SCHEMES}")
    r, w, lap, deriv, interp = parts
    for a in (r, w, lap, deriv):
        a.setflags(write=False)
    return RadialGrid(r, w, float(R), scheme, lap, deriv, interp)


@dataclass(eq=False)
class SectorOperator:
    """Dense operator on radial grid functions of one angular sector.

    ``matrix`` is in unitary coordinates (see module docstring).  ``ell`` is
    ``None`` for sector-independent operators.
    """

    matrix: np.ndarray
    grid: RadialGrid
    ell: int | None = None
    hermitian: bool = False
    # spectral data for hermitian operators built from an eigendecomposition
    eigenvalues: np.ndarray | None = field(default=None, repr=False)
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.grid.size
        if self.matrix.shape != (n, n):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match grid size {n}")
        if self.hermitian:
            res = hermiticity_residual(self.matrix)
            if res > 1e-12 * max(1.0, np.abs(self.matrix).max()):
                raise ValueError(f"operator flagged hermitian but residual is {res:.3e}")

    @classmethod
    def from_kernel(cls, kernel, grid, ell=None, hermitian=False):
        return cls(grid.kernel_to_matrix(kernel), grid, ell, hermitian)

    @classmethod
    def identity(cls, grid):
        return cls(np.eye(grid.size), grid, None, True)

    def kernel(self):
        return self.grid.matrix_to_kernel(self.matrix)

    def function(self, f):
        """Apply ``f`` to the spectrum of a hermitian operator."""
        if self.eigenvalues is None:
            evals, evecs = np.linalg.eigh(self.matrix)
        else:
            evals, evecs = self.eigenvalues, self.eigenvectors
        return (evecs * f(evals)) @ evecs.conj().T

    def __matmul__(self, other):
        return weighted_product(self, other)


def hermiticity_residual(matrix):
    m = np.asarray(matrix)
    return float(np.abs(m - m.conj().T).max()) if m.size else 0.0


def _same_grid(a, b):
    if a.grid is not b.grid and a.grid.spec() != b.grid.spec():
        raise ValueError("operators live on different radial grids")


def weighted_trace(op):
    """``Tr`` on ``L^2(r^2 dr)``: ``sum_i w_i k(r_i, r_i)``."""
    return complex(np.trace(op.matrix))


def weighted_product(a, b):
    _same_grid(a, b)
    ell = a.ell if a.ell == b.ell else (a.ell if b.ell is None else b.ell if a.ell is None else None)
    return SectorOperator(a.matrix @ b.matrix, a.grid, ell)


def commutator(a, b):
    _same_grid(a, b)
    ell = a.ell if a.ell is not None else b.ell
    return SectorOperator(a.matrix @ b.matrix - b.matrix @ a.matrix, a.grid, ell)


def operator_norm(op):
    """Largest singular value with respect to the weighted inner product."""
    m = op.matrix if isinstance(op, SectorOperator) else np.asarray(op)
    return float(np.linalg.norm(m, 2))


def build_kinetic(ell, m, grid, clamp_tol=1e-10):
    """``K_ell = sqrt(-d^2/dr^2 + l(l+1)/r^2 + m^2)`` on the ``u = r f`` grid.

    The square root is taken spectrally.  Eigenvalues of ``K_ell^2`` within
    ``clamp_tol`` (relative) below ``m^2`` are clamped; anything lower means
    the discretisation is broken and raises.
    """
    if int(ell) != ell or ell < 0:
        raise ValueError("sector index must be a nonnegative integer")
    if m < 0:
        raise ValueError("mass must be nonnegative")
    r = grid.points
    k2 = grid.laplacian + np.diag(ell * (ell + 1) / r**2 + m**2)
    evals, evecs = np.linalg.eigh(k2)
    floor = m**2 - clamp_tol * max(1.0, abs(evals).max())
    if evals.min() < floor:
        raise ValueError(
            f"K_{ell}^2 has eigenvalue {evals.min():.3e} below m^2 = {m**2:.3e}"
        )
    evals = np.maximum(evals, m**2)
    kvals = np.sqrt(evals)
    mat = (evecs * kvals) @ evecs.T
    mat = 0.5 * (mat + mat.T)
    return SectorOperator(mat, grid, int(ell), True, kvals, evecs)


def build_kinetics(lmax, m, grid):
    """``[K_0, ..., K_lmax]``."""
    return [build_kinetic(ell, m, grid) for ell in range(lmax + 1)]


def position(grid):
    """Multiplication by ``r`` (diagonal in every discretisation used here)."""
    return SectorOperator(np.diag(grid.points).astype(float), grid, None, True)


def radial_derivative(grid):
    """``d/dr`` acting on ``f`` (``u' - u/r`` on the ``u = r f`` grid)."""
    return SectorOperator(grid.derivative - np.diag(1.0 / grid.points), grid)


def build_dilation(grid):
    """Sector form of ``A = x.p + p.x``.

    On radial functions ``A = -i (2 r d/dr + 3)``; on ``u = r f`` this reads
    ``-i (2 r d/dr + 1)``.  The collocation version is symmetrised, so the
    result is exactly hermitian.  ``A`` commutes with rotations, hence the
    same matrix serves every sector.
    """
    r = grid.points
    raw = -1j * (2.0 * r[:, None] * grid.derivative + np.eye(grid.size))
    mat = 0.5 * (raw + raw.conj().T)
    return SectorOperator(mat, grid, None, True)
