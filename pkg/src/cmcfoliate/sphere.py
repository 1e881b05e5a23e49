"""Quadrature grid, real spherical-harmonic transforms and Galerkin spectra on S².

Real harmonics are orthonormal on the unit sphere and carry no Condon-Shortley
phase, so that Y_{1,1}, Y_{1,-1}, Y_{1,0} are positive multiples of x, y, z.
Coefficients are stored flat with index ``l*l + l + m``.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import GeometryError, SizeMismatchError


def lm_index(l: int, m: int) -> int:
    return l * l + l + m


def degree_order(l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (l, m) for every flat coefficient index."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(l_max + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(l_max + 1)])
    return ls, ms


def _legendre_column(m: int, l_max: int, x: np.ndarray, pmm: np.ndarray) -> np.ndarray:
    """Normalized associated Legendre P̄_l^m(x) for l = m..l_max, given P̄_m^m."""
    out = np.zeros((l_max + 1,) + x.shape)
    out[m] = pmm
    if m + 1 <= l_max:
        out[m + 1] = np.sqrt(2 * m + 3) * x * pmm
    for l in range(m + 2, l_max + 1):
        a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
        b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
        out[l] = a * (x * out[l - 1] - b * out[l - 2])
    return out


def legendre_tables(l_max: int, theta: np.ndarray, derivs: int = 0):
    """P̄_l^m(cos θ) and optionally θ-derivatives, each shaped (m, l, len(theta)).

    Normalized so that P̄_l^m(cos θ)·{√2 cos mφ, 1, √2 sin mφ} is orthonormal.
    """
    theta = np.asarray(theta, dtype=float)
    x, s = np.cos(theta), np.sin(theta)
    P = np.zeros((l_max + 1, l_max + 1, theta.size))
    pmm = np.full(theta.shape, 1.0 / np.sqrt(4 * np.pi))
    for m in range(l_max + 1):
        if m > 0:
            pmm = np.sqrt((2.0 * m + 1) / (2.0 * m)) * s * pmm
        P[m] = _legendre_column(m, l_max, x, pmm)
    if derivs == 0:
        return P
    ls = np.arange(l_max + 1)[None, :, None]
    ms = np.arange(l_max + 1)[:, None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.sqrt(np.where(ls > ms, (2 * ls + 1) * (ls**2 - ms**2) / np.maximum(2 * ls - 1, 1), 0.0))
    Pprev = np.zeros_like(P)
    Pprev[:, 1:, :] = P[:, :-1, :]
    dP = (ls * x * P - c * Pprev) / s
    if derivs == 1:
        return P, dP
    d2P = -(x / s) * dP - (ls * (ls + 1) - ms**2 / s**2) * P
    return P, dP, d2P


class SphereGrid:
    """Gauss-Legendre colatitudes times uniform longitudes for band limit ``l_max``."""

    def __init__(self, l_max: int):
        if l_max < 1:
            raise ValueError("l_max must be at least 1")
        self.l_max = L = int(l_max)
        self.n_theta = L + 1
        self.n_phi = 2 * L + 1
        xg, wg = np.polynomial.legendre.leggauss(self.n_theta)
        order = np.argsort(-xg)
        self.theta = np.arccos(xg[order])
        self.theta_weights = wg[order]
        self.phi = 2 * np.pi * np.arange(self.n_phi) / self.n_phi
        tt, pp = np.meshgrid(self.theta, self.phi, indexing="ij")
        self.node_theta = tt.ravel()
        self.node_phi = pp.ravel()
        self.quad_weights = np.repeat(self.theta_weights * 2 * np.pi / self.n_phi, self.n_phi)
        st = np.sin(self.node_theta)
        self.directions = np.stack(
            [st * np.cos(self.node_phi), st * np.sin(self.node_phi), np.cos(self.node_theta)], axis=-1
        )
        self.n_nodes = self.n_theta * self.n_phi
        self.n_coeffs = (L + 1) ** 2
        self.degrees, self.orders = degree_order(L)
        self._P, self._dP, self._d2P = legendre_tables(L, self.theta, derivs=2)
        # flat-index lookups for the cos (m >= 0) and sin (m > 0) parts
        self._cos_idx = np.full((L + 1, L + 1), -1)
        self._sin_idx = np.full((L + 1, L + 1), -1)
        for m in range(L + 1):
            for l in range(m, L + 1):
                self._cos_idx[m, l] = lm_index(l, m)
                if m > 0:
                    self._sin_idx[m, l] = lm_index(l, -m)

    # -- transforms -------------------------------------------------------
    def _check_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_nodes:
            raise SizeMismatchError(f"expected {self.n_nodes} nodal values, got {values.shape[0]}")
        return values

    def _check_coeffs(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.n_coeffs:
            raise SizeMismatchError(f"expected {self.n_coeffs} coefficients, got {coeffs.shape[0]}")
        return coeffs

    def _to_ml(self, coeffs):
        """Split flat coefficients into (cos, sin) arrays shaped (m, l)."""
        L = self.l_max
        A = np.zeros((L + 1, L + 1))
        B = np.zeros((L + 1, L + 1))
        mask = self._cos_idx >= 0
        A[mask] = coeffs[self._cos_idx[mask]]
        mask = self._sin_idx >= 0
        B[mask] = coeffs[self._sin_idx[mask]]
        return A, B

    def _from_ml(self, A, B):
        out = np.zeros(self.n_coeffs)
        mask = self._cos_idx >= 0
        out[self._cos_idx[mask]] = A[mask]
        mask = self._sin_idx >= 0
        out[self._sin_idx[mask]] = B[mask]
        return out

    def analyze(self, values) -> np.ndarray:
        """Nodal values to coefficients by exact quadrature."""
        values = self._check_values(values)
        if values.ndim > 1:
            return np.stack([self.analyze(values[:, i]) for i in range(values.shape[1])], axis=1)
        F = np.fft.rfft(values.reshape(self.n_theta, self.n_phi), axis=1)
        fac = np.full(self.l_max + 1, np.sqrt(2.0))
        fac[0] = 1.0
        fac *= 2 * np.pi / self.n_phi
        Cc = (F.real * fac).T * self.theta_weights  # (m, j)
        Cs = (-F.imag * fac).T * self.theta_weights
        A = np.einsum("mlj,mj->ml", self._P, Cc)
        B = np.einsum("mlj,mj->ml", self._P, Cs)
        return self._from_ml(A, B)

    def _synth_tables(self, A, B, table):
        amp_c = np.einsum("mlj,ml->jm", table, A)
        amp_s = np.einsum("mlj,ml->jm", table, B)
        N = self.n_phi
        X = np.empty((self.n_theta, self.l_max + 1), dtype=complex)
        X[:, 0] = N * amp_c[:, 0]
        X[:, 1:] = N * (np.sqrt(2.0) / 2) * (amp_c[:, 1:] - 1j * amp_s[:, 1:])
        return np.fft.irfft(X, n=N, axis=1).ravel()

    def synthesize(self, coeffs) -> np.ndarray:
        coeffs = self._check_coeffs(coeffs)
        A, B = self._to_ml(coeffs)
        return self._synth_tables(A, B, self._P)

    def phi_derivative_coeffs(self, coeffs) -> np.ndarray:
        """Coefficients of ∂_φ f (the φ-derivative maps the basis to itself)."""
        coeffs = self._check_coeffs(coeffs)
        A, B = self._to_ml(coeffs)
        m = np.arange(self.l_max + 1)[:, None]
        return self._from_ml(m * B, -m * A)

    def derivatives(self, coeffs, which=("", "t", "p", "tt", "tp", "pp")) -> dict:
        """Nodal values of θ/φ partial derivatives, keyed by strings like 'tp'.

        Up to two θ-derivatives and any number of φ-derivatives.
        """
        coeffs = self._check_coeffs(coeffs)
        tables = (self._P, self._dP, self._d2P)
        out = {}
        for key in which:
            nt, npd = key.count("t"), key.count("p")
            c = coeffs
            for _ in range(npd):
                c = self.phi_derivative_coeffs(c)
            A, B = self._to_ml(c)
            out[key] = self._synth_tables(A, B, tables[nt])
        return out

    def integrate(self, values) -> float:
        return float(self.quad_weights @ np.asarray(values))

    # -- dense basis -------------------------------------------------------
    @functools.cached_property
    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense (Y, ∂_θY, ∂_φY) at the nodes, each shaped (n_nodes, n_coeffs)."""
        L = self.l_max
        Y = np.empty((self.n_nodes, self.n_coeffs))
        Yt = np.empty_like(Y)
        Yp = np.empty_like(Y)
        ph = self.phi
        for m in range(L + 1):
            cos_m, sin_m = np.cos(m * ph), np.sin(m * ph)
            for l in range(m, L + 1):
                p = self._P[m, l][:, None]
                dp = self._dP[m, l][:, None]
                if m == 0:
                    k = lm_index(l, 0)
                    Y[:, k] = np.broadcast_to(p, (self.n_theta, self.n_phi)).ravel()
                    Yt[:, k] = np.broadcast_to(dp, (self.n_theta, self.n_phi)).ravel()
                    Yp[:, k] = 0.0
                    continue
                r2 = np.sqrt(2.0)
                k = lm_index(l, m)
                Y[:, k] = (r2 * p * cos_m).ravel()
                Yt[:, k] = (r2 * dp * cos_m).ravel()
                Yp[:, k] = (-r2 * m * p * sin_m).ravel()
                k = lm_index(l, -m)
                Y[:, k] = (r2 * p * sin_m).ravel()
                Yt[:, k] = (r2 * dp * sin_m).ravel()
                Yp[:, k] = (r2 * m * p * cos_m).ravel()
        return Y, Yt, Yp

    # -- off-grid evaluation ----------------------------------------------
    def evaluate(self, coeffs, directions) -> np.ndarray:
        """Evaluate a band-limited field at arbitrary unit vectors (N, 3)."""
        coeffs = self._check_coeffs(coeffs)
        d = np.asarray(directions, dtype=float)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        x = np.clip(d[:, 2], -1.0, 1.0)
        s = np.sqrt(np.maximum(1.0 - x * x, 0.0))
        phi = np.arctan2(d[:, 1], d[:, 0])
        A, B = self._to_ml(coeffs)
        L = self.l_max
        out = np.zeros(x.shape)
        pmm = np.full(x.shape, 1.0 / np.sqrt(4 * np.pi))
        for m in range(L + 1):
            if m > 0:
                pmm = np.sqrt((2.0 * m + 1) / (2.0 * m)) * s * pmm
            if not (np.any(A[m, m:]) or np.any(B[m, m:])):
                continue
            # Clenshaw-free forward recurrence with running sums
            p2, p1 = None, pmm
            ac = A[m, m] * p1
            bs = B[m, m] * p1
            for l in range(m + 1, L + 1):
                if l == m + 1:
                    p0 = np.sqrt(2 * m + 3) * x * p1
                else:
                    a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                    b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                    p0 = a * (x * p1 - b * p2)
                ac = ac + A[m, l] * p0
                bs = bs + B[m, l] * p0
                p2, p1 = p1, p0
            if m == 0:
                out += ac
            else:
                out += np.sqrt(2.0) * (ac * np.cos(m * phi) + bs * np.sin(m * phi))
        return out


@functools.lru_cache(maxsize=16)
def get_grid(l_max: int) -> SphereGrid:
    return SphereGrid(l_max)


def resample(coeffs, l_from: int, l_to: int) -> np.ndarray:
    """Truncate or zero-pad a coefficient vector to a new band limit."""
    out = np.zeros((l_to + 1) ** 2)
    n = min((l_from + 1) ** 2, (l_to + 1) ** 2)
    out[:n] = np.asarray(coeffs)[:n]
    return out


@dataclass
class ScalarField:
    """A function on a sphere held as nodal values on ``grid``; coefficients on demand."""

    grid: SphereGrid
    values: np.ndarray

    @classmethod
    def from_coeffs(cls, grid: SphereGrid, coeffs) -> "ScalarField":
        return cls(grid, grid.synthesize(coeffs))

    @property
    def coeffs(self) -> np.ndarray:
        return self.grid.analyze(self.values)

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _values(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _values(other))

    def __mul__(self, k):
        return ScalarField(self.grid, self.values * k)

    __rmul__ = __mul__


def _values(f):
    return f.values if isinstance(f, ScalarField) else f


# -- Galerkin spectra -------------------------------------------------------


@dataclass
class SpectralSystem:
    grid: SphereGrid
    mass_matrix: np.ndarray
    stiffness: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns are mass-orthonormal coefficient vectors
    measure: np.ndarray

    @property
    def area(self) -> float:
        return float(self.measure.sum())

    def eigenfunction(self, i: int) -> np.ndarray:
        """Nodal values of the i-th eigenfunction."""
        return self.grid.basis[0] @ self.eigenvectors[:, i]


def galerkin_mass(grid: SphereGrid, measure: np.ndarray, weight=None) -> np.ndarray:
    Y = grid.basis[0]
    w = measure if weight is None else measure * weight
    M = Y.T @ (w[:, None] * Y)
    return 0.5 * (M + M.T)


def galerkin_stiffness(grid: SphereGrid, measure: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """∫ g^{IJ} ∂_I Y_a ∂_J Y_b dμ from the inverse induced metric (n, 2, 2)."""
    _, Yt, Yp = grid.basis
    tt = measure * ginv[:, 0, 0]
    tp = measure * ginv[:, 0, 1]
    pp = measure * ginv[:, 1, 1]
    S = Yt.T @ (tt[:, None] * Yt) + Yp.T @ (pp[:, None] * Yp)
    C = Yt.T @ (tp[:, None] * Yp)
    S = S + C + C.T
    return 0.5 * (S + S.T)


def assemble_laplace(geometry) -> SpectralSystem:
    """Generalized eigen decomposition of the Laplace-Beltrami operator of a leaf."""
    grid = geometry.grid
    M = galerkin_mass(grid, geometry.measure)
    S = galerkin_stiffness(grid, geometry.measure, geometry.metric_inv)
    try:
        lam, vec = scipy.linalg.eigh(S, M)
    except np.linalg.LinAlgError as exc:
        raise GeometryError("mass matrix is not positive definite") from exc
    return SpectralSystem(grid, M, S, lam, vec, geometry.measure.copy())


@dataclass
class PartSplit:
    mean: float
    trans: ScalarField
    deform: ScalarField
    modes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    diagnostics: list = field(default_factory=list)


def translational_modes(sys: SpectralSystem, sigma: float) -> tuple[np.ndarray, list]:
    """Indices of eigenpairs in the window |λ − 2/σ²| ≤ 1/σ², with fallback to the nearest 3."""
    lam = sys.eigenvalues
    target = 2.0 / sigma**2
    idx = np.flatnonzero(np.abs(lam - target) <= 1.0 / sigma**2)
    notes = []
    if idx.size != 3:
        msg = f"translational window holds {idx.size} modes; using the 3 nearest to 2/sigma^2"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        idx = np.sort(np.argsort(np.abs(lam - target))[:3])
    return idx, notes


def split_parts(f, sys: SpectralSystem, sigma: float) -> PartSplit:
    """Rescaling (mean), translational and deformational parts of ``f`` on a leaf."""
    grid = sys.grid
    vals = _values(f)
    mu = sys.measure
    mean = float(mu @ vals) / sys.area
    idx, notes = translational_modes(sys, sigma)
    Y = grid.basis[0]
    phis = Y @ sys.eigenvectors[:, idx]
    proj = phis.T @ (mu * vals)
    trans = phis @ proj
    deform = vals - mean - trans
    return PartSplit(mean, ScalarField(grid, trans), ScalarField(grid, deform), idx, notes)


def sobolev_norm(f, k: int, p: float, geometry) -> float:
    """Σ_{j≤k} R_A^j ‖∇^j f‖_{L^p(dμ)} with covariant derivatives of the induced metric.

    ``p = inf`` uses the maximum over quadrature nodes.
    """
    if k > 2 or k < 0:
        raise ValueError("order k must be 0, 1 or 2")
    grid = geometry.grid
    coeffs = f.coeffs if isinstance(f, ScalarField) else grid.analyze(np.asarray(f))
    d = grid.derivatives(coeffs, ("", "t", "p", "tt", "tp", "pp")[: (1, 3, 6)[k]])
    mu = geometry.measure

    def lp(v):
        v = np.abs(v)
        if np.isinf(p):
            return float(v.max())
        return float((mu @ v**p) ** (1.0 / p))

    total = lp(d[""])
    if k >= 1:
        grad = np.stack([d["t"], d["p"]], axis=-1)
        gi = geometry.metric_inv
        g2 = np.einsum("ni,nij,nj->n", grad, gi, grad)
        total += geometry.area_radius * lp(np.sqrt(np.maximum(g2, 0.0)))
    if k >= 2:
        hess = np.stack(
            [np.stack([d["tt"], d["tp"]], -1), np.stack([d["tp"], d["pp"]], -1)], axis=-2
        )
        hess = hess - np.einsum("nkij,nk->nij", geometry.christoffel, grad)
        h2 = np.einsum("nik,njl,nij,nkl->n", gi, gi, hess, hess)
        total += geometry.area_radius**2 * lp(np.sqrt(np.maximum(h2, 0.0)))
    return total
