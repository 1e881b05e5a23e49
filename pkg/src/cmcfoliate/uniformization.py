"""Conformal factors on S², Möbius balancing and recovery of w from its Gauss curvature.

A factor w describes the metric e^{2w} g_std. Möbius maps are stored as
Lorentz matrices acting on the null cone {(1, x) : |x| = 1}; this makes
composition a matrix product and gives the pullback factor in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special

from .errors import UniformizationError
from .sphere import ScalarField, get_grid, resample

log = logging.getLogger(__name__)


# -- conformal factors -------------------------------------------------------------


@dataclass
class ConformalFactor:
    """w as real spherical-harmonic coefficients up to degree l_max."""

    coeffs: np.ndarray
    l_max: int

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != ((self.l_max + 1) ** 2,):
            raise ValueError(f"expected {(self.l_max + 1) ** 2} coefficients, got {self.coeffs.shape}")

    @classmethod
    def zero(cls, l_max: int = 24) -> "ConformalFactor":
        return cls(np.zeros((l_max + 1) ** 2), l_max)

    @classmethod
    def from_values(cls, values, l_max: int) -> "ConformalFactor":
        return cls(get_grid(l_max).analyze(values), l_max)

    @property
    def grid(self):
        return get_grid(self.l_max)

    @property
    def values(self) -> np.ndarray:
        return self.grid.synthesize(self.coeffs)

    @property
    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.values)

    def laplacian(self) -> np.ndarray:
        """Δ_std w in coefficient space."""
        deg = self.grid.degrees
        return -deg * (deg + 1.0) * self.coeffs

    def measure(self) -> float:
        return float(self.grid.integrate(np.exp(2 * self.values)))

    def h2_norm(self) -> float:
        """‖w‖_{H²} with ‖∇²w‖² = Σ(λ² − λ)c² (Bochner on the unit sphere), λ = l(l+1)."""
        lam = self.grid.degrees * (self.grid.degrees + 1.0)
        return float(np.sqrt(np.sum((1.0 + lam**2) * self.coeffs**2)))

    def with_l_max(self, l_max: int) -> "ConformalFactor":
        return ConformalFactor(resample(self.coeffs, self.l_max, l_max), l_max)

    def to_dict(self) -> dict:
        return {"l_max": self.l_max, "coeffs": self.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConformalFactor":
        return cls(np.asarray(d["coeffs"], dtype=float), int(d["l_max"]))


def gauss_curvature_conformal(w: ConformalFactor) -> ScalarField:
    """K = e^{−2w}(1 − Δ_std w) at the grid nodes."""
    grid = w.grid
    lap = grid.synthesize(w.laplacian())
    return ScalarField(grid, np.exp(-2 * w.values) * (1.0 - lap))


def l2_norm(grid, values) -> float:
    return float(np.sqrt(grid.integrate(np.asarray(values) ** 2)))


# -- Möbius maps ---------------------------------------------------------------------


def _boost_matrix(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    v2 = float(b @ b)
    if v2 >= 1.0:
        raise UniformizationError(f"boost parameter must satisfy |b| < 1 (|b| = {np.sqrt(v2):.6g})", operation="mobius")
    g = 1.0 / np.sqrt(1.0 - v2)
    M = np.eye(4)
    M[0, 0] = g
    M[0, 1:] = -g * b
    M[1:, 0] = -g * b
    if v2 > 0:
        M[1:, 1:] += (g - 1.0) * np.outer(b, b) / v2
    return M


@dataclass(frozen=True)
class MobiusMap:
    """Conformal automorphism x ↦ T(x) of S², held as a 4×4 Lorentz matrix.

    T(x) is the direction of Λ(1, x) and the pullback T*g_std = e^{2w_T} g_std
    has w_T(x) = −log (Λ(1, x))₀.
    """

    matrix: np.ndarray

    @classmethod
    def identity(cls) -> "MobiusMap":
        return cls(np.eye(4))

    @classmethod
    def boost(cls, b) -> "MobiusMap":
        return cls(_boost_matrix(b))

    @classmethod
    def rotation(cls, R) -> "MobiusMap":
        M = np.eye(4)
        M[1:, 1:] = np.asarray(R, dtype=float)
        return cls(M)

    @classmethod
    def from_parts(cls, b, R=None) -> "MobiusMap":
        """Rotation after boost: x ↦ R·T_b(x)."""
        rot = cls.identity() if R is None else cls.rotation(R)
        return rot.compose(cls.boost(b))

    def compose(self, other: "MobiusMap") -> "MobiusMap":
        """self ∘ other."""
        return MobiusMap(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusMap":
        eta = np.diag([1.0, -1.0, -1.0, -1.0])
        return MobiusMap(eta @ self.matrix.T @ eta)

    @property
    def boost_vector(self) -> np.ndarray:
        """b in the factorization Λ = Rot·Boost(b)."""
        B = scipy.linalg.sqrtm(self.matrix.T @ self.matrix).real
        return -B[0, 1:] / B[0, 0]

    @property
    def rotation_matrix(self) -> np.ndarray:
        B = _boost_matrix(self.boost_vector)
        return (self.matrix @ np.linalg.inv(B))[1:, 1:]

    def _lift(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.concatenate([np.ones((x.shape[0], 1)), x], axis=1) @ self.matrix.T

    def apply(self, x) -> np.ndarray:
        y = self._lift(x)
        return y[:, 1:] / y[:, :1]

    def log_factor(self, x) -> np.ndarray:
        return -np.log(self._lift(x)[:, 0])


def mobius_apply(w: ConformalFactor, T: MobiusMap, l_max: int | None = None) -> ConformalFactor:
    """Pullback T*(e^{2w} g_std) = e^{2(w∘T + w_T)} g_std, sampled on the grid of ``l_max``."""
    l_max = w.l_max if l_max is None else l_max
    grid = get_grid(l_max)
    x = grid.directions
    vals = w.grid.evaluate(w.coeffs, T.apply(x)) + T.log_factor(x)
    return ConformalFactor(grid.analyze(vals), l_max)


# -- balancing -----------------------------------------------------------------------


def _cap_weights(l_max: int, s: float) -> np.ndarray:
    """2π ∫_s^1 P_l(t) dt for l = 0..l_max (Funk–Hecke weight of the cap {n·y ≥ s})."""
    l = np.arange(l_max + 2)
    P = scipy.special.eval_legendre(l, s)
    out = np.empty(l_max + 1)
    out[0] = 1.0 - s
    out[1:] = (P[: l_max] - P[2 : l_max + 2]) / (2 * l[1 : l_max + 1] + 1.0)
    return 2 * np.pi * out


@dataclass
class _DensityExpansion:
    """Harmonic expansion of the density e^{2w} for analytic cap integrals."""

    coeffs: np.ndarray
    l_max: int
    total: float

    @classmethod
    def of(cls, w: ConformalFactor) -> "_DensityExpansion":
        grid = w.grid
        E = grid.analyze(np.exp(2 * w.values))
        return cls(E, w.l_max, float(E[0] * np.sqrt(4 * np.pi)))

    def cap(self, normal, s) -> float:
        grid = get_grid(self.l_max)
        weights = _cap_weights(self.l_max, s)[grid.degrees]
        return float(grid.evaluate(self.coeffs * weights, np.asarray(normal)[None, :])[0])


def _asymmetry(dens: _DensityExpansion, T: MobiusMap) -> np.ndarray:
    """μ'({x_i ≥ 0}) − μ'({x_i ≤ 0}) for the pullback by T, i = 1, 2, 3.

    T maps {x_i ≥ 0} onto the cap {y : (Λ⁻¹(1, y))_i ≥ 0} = {n·y ≥ s}.
    """
    Minv = T.inverse().matrix
    out = np.empty(3)
    for i in range(3):
        row = Minv[i + 1]
        n = row[1:]
        nn = np.linalg.norm(n)
        s = np.clip(-row[0] / nn, -1.0, 1.0)
        out[i] = 2 * dens.cap(n / nn, s) - dens.total
    return out


def hemisphere_asymmetry(w: ConformalFactor) -> np.ndarray:
    """μ({x_i ≥ 0}) − μ({x_i ≤ 0}) computed from the expansion of e^{2w}."""
    return _asymmetry(_DensityExpansion.of(w), MobiusMap.identity())


@dataclass
class BalanceResult:
    map: MobiusMap
    factor: ConformalFactor
    boost: np.ndarray
    iterations: int
    residual: float  # max_i |hemisphere asymmetry| / μ(S²)
    history: list = field(default_factory=list)


def balance(
    w: ConformalFactor,
    tol: float = 1e-12,
    accept: float = 1e-8,
    max_iter: int = 50,
    delta: float = np.pi,
    fd_step: float = 1e-7,
) -> BalanceResult:
    """Find a boost T_b with T_b*(e^{2w} g_std) balanced across the three coordinate planes.

    Damped Newton on b in the open unit ball with a finite-difference
    Jacobian. The factor is accepted when the relative asymmetry is ≤ ``accept``.
    """
    dens = _DensityExpansion.of(w)
    mu = dens.total
    if not (delta < mu < 8 * np.pi - delta):
        raise UniformizationError(
            f"total measure {mu:.6g} outside ({delta:.4g}, {8 * np.pi - delta:.4g})", operation="balance"
        )

    def F(b):
        return _asymmetry(dens, MobiusMap.boost(b)) / mu

    b = np.zeros(3)
    r = F(b)
    history = [float(np.abs(r).max())]
    it = 0
    while history[-1] > tol and it < max_iter:
        J = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = fd_step
            J[:, j] = (F(b + e) - F(b - e)) / (2 * fd_step)
        step = -np.linalg.lstsq(J, r, rcond=None)[0]
        # keep the iterate inside the ball
        room = 1.0 - np.linalg.norm(b)
        ns = np.linalg.norm(step)
        if ns > 0.5 * room:
            step *= 0.5 * room / ns
        t = 1.0
        while True:
            trial = b + t * step
            rt = F(trial)
            if np.abs(rt).max() < history[-1] or t < 1e-4:
                break
            t *= 0.5
        it += 1
        if np.abs(rt).max() >= history[-1]:
            break
        b, r = trial, rt
        history.append(float(np.abs(r).max()))
    if history[-1] > accept:
        raise UniformizationError(
            f"balancing did not converge in {it} iterations (asymmetry {history[-1]:.3e}·μ)", operation="balance"
        )
    T = MobiusMap.boost(b)
    balanced = mobius_apply(w, T)
    log.debug("balance: b=%s iterations=%d residual=%.3e", b, it, history[-1])
    return BalanceResult(T, balanced, b, it, history[-1], history)


# -- recovery from curvature ---------------------------------------------------------


@dataclass
class RecoveryResult:
    factor: ConformalFactor
    residual: float  # ‖K(w) − K_target‖_{L²(S²)}
    iterations: int
    history: list
    balance_residual: float  # max_i |hemisphere asymmetry| / μ(S²)
    l1_residual: float  # norm of the l = 1 content of the curvature residual


def recover_conformal_factor(
    K_target,
    l_max: int = 24,
    tol: float = 1e-10,
    max_iter: int = 40,
    trust: float = 0.5,
    singular_rtol: float = 1e-9,
) -> RecoveryResult:
    """Solve e^{−2w}(1 − Δw) = K_target by Newton on F(w) = 1 − Δw − K_target e^{2w}.

    F = e^{2w}(K(w) − K_target) has the symmetric Galerkin derivative
    −Δ − 2K_target e^{2w}. Near w = 0 this is −Δ − 2 with kernel l = 1; the
    Newton update is a spectral pseudo-inverse, so near-null directions are
    dropped while singular and used once the curvature breaks the symmetry.
    ``K_target`` is a ScalarField on the grid of ``l_max`` or nodal values.
    """
    grid = get_grid(l_max)
    Kt = np.asarray(K_target.values if isinstance(K_target, ScalarField) else K_target, dtype=float)
    if Kt.shape != (grid.n_nodes,):
        raise ValueError(f"K_target must have {grid.n_nodes} nodal values for l_max={l_max}")
    if l2_norm(grid, Kt - 1.0) > trust:
        raise UniformizationError(
            f"‖K − 1‖_L2 = {l2_norm(grid, Kt - 1.0):.3g} exceeds the trust region {trust}", operation="recover"
        )
    Y = grid.basis[0]
    W = grid.quad_weights
    lam = grid.degrees * (grid.degrees + 1.0)
    w = np.zeros(grid.n_coeffs)

    def residual(c):
        vals = grid.synthesize(c)
        lap = grid.synthesize(-lam * c)
        K = np.exp(-2 * vals) * (1.0 - lap)
        return vals, K, l2_norm(grid, K - Kt)

    vals, K, res = residual(w)
    history = [res]
    it = 0
    while res > tol:
        if it >= max_iter:
            raise UniformizationError(
                f"Newton did not reach {tol:.1e} in {max_iter} iterations (residual {res:.3e})", operation="recover"
            )
        E = np.exp(2 * vals)
        F = E * (K - Kt)
        A = np.diag(lam) - 2 * (Y.T * (W * Kt * E)) @ Y
        rhs = -(Y.T @ (W * F))
        ev, V = np.linalg.eigh(A)
        big = np.abs(ev).max()
        keep = np.abs(ev) > singular_rtol * big
        proj = V.T @ rhs
        dropped = np.linalg.norm(proj[~keep])
        if dropped > 1e-3 * max(np.linalg.norm(proj), 1e-300) and dropped > tol:
            raise UniformizationError(
                f"linearized operator near-singular with load {dropped:.3e} on its kernel", operation="recover"
            )
        dw = V[:, keep] @ (proj[keep] / ev[keep])
        t = 1.0
        while True:
            tvals, tK, tres = residual(w + t * dw)
            if tres < res or t < 1e-3:
                break
            t *= 0.5
        it += 1
        if tres >= res:
            raise UniformizationError(f"residual stagnated at {res:.3e}", operation="recover")
        w, vals, K, res = w + t * dw, tvals, tK, tres
        history.append(res)
        log.debug("recover iter=%d step=%g residual=%.3e", it, t, res)
    factor = ConformalFactor(w, l_max)
    mu = factor.measure()
    asym = np.abs(hemisphere_asymmetry(factor)).max() / mu
    l1 = np.linalg.norm(grid.analyze(K - Kt)[grid.degrees == 1])
    return RecoveryResult(factor, res, it, history, float(asym), float(l1))


def linearization_norm(l_max: int = 24) -> float:
    """κ = H²/L² operator norm of (−Δ − 2)⁻¹ off the l = 1 space: max_l √(1 + λ²)/|λ − 2|."""
    l = np.array([d for d in range(l_max + 1) if d != 1])
    lam = l * (l + 1.0)
    return float(np.max(np.sqrt(1 + lam**2) / np.abs(lam - 2)))


def random_balanced_factor(
    rng: np.random.Generator, l_max: int = 24, degrees=(2, 6), curvature_size: float = 0.1
) -> ConformalFactor:
    """Random smooth balanced factor whose linearized curvature deviation ‖(−Δ − 2)w‖_{L²}
    is uniform in [0.2, 1]·``curvature_size``."""
    grid = get_grid(l_max)
    lo, hi = degrees
    lam = grid.degrees * (grid.degrees + 1.0)
    c = np.zeros(grid.n_coeffs)
    sel = (grid.degrees >= lo) & (grid.degrees <= hi)
    c[sel] = rng.normal(size=sel.sum()) / (1.0 + grid.degrees[sel]) ** 2
    c *= curvature_size * rng.uniform(0.2, 1.0) / np.linalg.norm((lam - 2) * c)
    return balance(ConformalFactor(c, l_max)).factor


# -- bubbles ------------------------------------------------------------------------


def _stereographic(x) -> np.ndarray:
    """Projection from the north pole, S² \\ {e₃} → ℝ²."""
    return x[:, :2] / (1.0 - x[:, 2:3])


def bubble_factor_values(lam: float, x0, directions) -> np.ndarray:
    """w = w̃∘π − w₀∘π with w̃ = ln(2λ/(λ² + |y − x₀|²)) and w₀ = ln(2/(1 + |y|²)).

    Written as ln(λ(1 + |y|²)/(λ² + |y − x₀|²)) with |y|² and |y − x₀|²
    expressed through x to stay finite at the pole.
    """
    x = np.asarray(directions, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    one_minus = 1.0 - x[:, 2]
    # (1 + |y|²)(1 − x₃) = 2 and |y − x₀|²(1 − x₃) = 1 + x₃ − 2x₀·x_{12} + |x₀|²(1 − x₃)
    num = 2.0 * lam
    den = lam**2 * one_minus + (1 + x[:, 2]) - 2 * x[:, :2] @ x0 + (x0 @ x0) * one_minus
    return np.log(num / den)


def bubble_planar_check(lam: float, x0, points, h: float = 1e-4) -> np.ndarray:
    """Finite-difference residual of −Δw̃ − e^{2w̃} on ℝ² at ``points`` (n, 2)."""
    x0 = np.asarray(x0, dtype=float)

    def wt(p):
        return np.log(2 * lam / (lam**2 + np.sum((p - x0) ** 2, axis=-1)))

    p = np.asarray(points, dtype=float)
    lap = sum(
        (wt(p + h * e) - 2 * wt(p) + wt(p - h * e)) / h**2 for e in (np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    )
    return -lap - np.exp(2 * wt(p))


def bubble_transfer(lam: float, x0=(0.0, 0.0), l_max: int | None = None, tail_tol: float = 1e-13, max_l: int = 192):
    """Stereographic transfer of the planar bubble to a factor on S².

    Without ``l_max`` the band limit doubles from 16 until the top-degree
    coefficients fall below ``tail_tol`` relative to the largest one.
    """
    if lam <= 0:
        raise ValueError("bubble scale must be positive")
    if l_max is not None:
        grid = get_grid(l_max)
        return ConformalFactor(grid.analyze(bubble_factor_values(lam, x0, grid.directions)), l_max)
    L = 16
    while True:
        grid = get_grid(L)
        c = grid.analyze(bubble_factor_values(lam, x0, grid.directions))
        scale = max(np.abs(c).max(), 1e-300)
        tail = np.abs(c[grid.degrees >= L - 2]).max()
        if tail <= tail_tol * scale or np.abs(c).max() < tail_tol:
            return ConformalFactor(c, L)
        if L >= max_l:
            log.warning("bubble(λ=%g, x0=%s) not resolved at l_max=%d (tail %.2e)", lam, x0, L, tail / scale)
            return ConformalFactor(c, L)
        L = min(2 * L, max_l)
