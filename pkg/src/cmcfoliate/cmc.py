"""Newton solver for constant-mean-curvature radial graphs and σ-continuation.

The Jacobian is the stability operator J = Δ + |k|² + Ric̄(ν,ν), the
linearization of H under normal variations. A radial update δf moves the
surface normally by ψ·δf with ψ = ḡ(ω, ν), so each Newton step solves
J w = −(H + 2/σ) and sets δf = w/ψ; tangential terms are dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg.lapack import dgecon

from .ambient import AmbientMetric
from .errors import ContinuationAborted, GeometryError, NearCriticalLeafError, NoConvergenceError
from .sphere import (
    PartSplit,
    ScalarField,
    SpectralSystem,
    assemble_laplace,
    galerkin_mass,
    galerkin_stiffness,
    lm_index,
    split_parts,
)
from .surface import EmbeddedSphere, SurfaceGeometry, geometry

log = logging.getLogger(__name__)

Y1_NORM = np.sqrt(3.0 / (4 * np.pi))


def mean_curvature_map(metric: AmbientMetric, S: EmbeddedSphere) -> ScalarField:
    return ScalarField(S.grid, geometry(metric, S).mean_curvature)


@dataclass
class StabilityOperator:
    """Galerkin matrix ∫(J Y_a) Y_b dμ = −∫⟨∇Y_a,∇Y_b⟩ + ∫V Y_a Y_b with V = |k|² + Ric̄(ν,ν)."""

    matrix: np.ndarray
    mass: np.ndarray
    potential: np.ndarray
    measure: np.ndarray
    _eig: tuple | None = field(default=None, repr=False)

    def action(self, coeffs) -> np.ndarray:
        """Coefficients of the L²(dμ) projection of J f onto the harmonic basis."""
        return scipy.linalg.solve(self.mass, self.matrix @ coeffs, assume_a="pos")

    def eigen(self) -> tuple[np.ndarray, np.ndarray]:
        """Ascending eigenpairs of −J, mass-orthonormal."""
        if self._eig is None:
            self._eig = scipy.linalg.eigh(-self.matrix, self.mass)
        return self._eig

    def mean_free_eigenvalues(self, grid) -> np.ndarray:
        """Spectrum of −J restricted to functions with ∫f dμ = 0."""
        row = grid.basis[0].T @ self.measure
        Q = scipy.linalg.null_space(row[None, :])
        A = Q.T @ (-self.matrix) @ Q
        B = Q.T @ self.mass @ Q
        return scipy.linalg.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)


def assemble_stability(metric: AmbientMetric, geom: SurfaceGeometry) -> StabilityOperator:
    grid = geom.grid
    V = geom.stability_potential
    S = galerkin_stiffness(grid, geom.measure, geom.metric_inv)
    M = galerkin_mass(grid, geom.measure)
    Vm = galerkin_mass(grid, geom.measure, V)
    return StabilityOperator(Vm - S, M, V, geom.measure.copy())


def solve_stability(
    op: StabilityOperator, rhs: np.ndarray, cond_limit: float = 1e12, load_scale: float = 0.0
) -> np.ndarray:
    """Solve op.matrix·c = rhs for Galerkin load vector ``rhs``.

    When the matrix is numerically singular (condition > ``cond_limit``) the
    solve falls back to the pseudo-inverse, provided the load has no weight on
    the near-null modes beyond 1e-8 of its norm or 1e-12 of ``load_scale``;
    otherwise the leaf is near-critical.
    """
    A = op.matrix
    lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    rcond, info = dgecon(lu, np.linalg.norm(A, 1), norm="1")
    if info == 0 and rcond > 0 and 1.0 / rcond <= cond_limit:
        return scipy.linalg.lu_solve((lu, piv), rhs)
    lam, V = op.eigen()  # −A V = M V Λ, so A⁻¹ = −V Λ⁻¹ Vᵀ
    scale = np.abs(lam).max()
    near = np.abs(lam) <= scale / cond_limit
    proj = V.T @ rhs
    if np.linalg.norm(proj[near]) > max(1e-8 * np.linalg.norm(proj), 1e-12 * load_scale, 1e-300):
        raise NearCriticalLeafError(
            f"stability operator is numerically singular ({int(near.sum())} near-null modes) "
            "and the right-hand side excites them"
        )
    keep = ~near
    return -V[:, keep] @ (proj[keep] / lam[keep])


def recenter(S: EmbeddedSphere, iterations: int = 50) -> EmbeddedSphere:
    """Re-express the same surface about a center that removes the degree-1 part of f."""
    c = S.coeffs
    shift = Y1_NORM * np.array([c[lm_index(1, 1)], c[lm_index(1, -1)], c[lm_index(1, 0)]])
    if not np.any(shift):
        return S
    grid = S.grid
    new_center = S.center + shift
    w = grid.directions
    rho = S.radius_at(w) - shift @ w.T
    for _ in range(iterations):
        p = new_center - S.center + rho[:, None] * w  # same point seen from the old center
        old_dir = p / np.linalg.norm(p, axis=1, keepdims=True)
        new = np.einsum("ni,ni->n", S.center + S.radius_at(old_dir)[:, None] * old_dir - new_center, w)
        done = np.abs(new - rho).max() <= 1e-15 * S.base_radius
        rho = new
        if done:
            break
    coeffs = grid.analyze(rho - S.base_radius)
    return EmbeddedSphere(new_center, S.base_radius, coeffs, S.l_max)


@dataclass
class LeafSolution:
    sphere: EmbeddedSphere
    geom: SurfaceGeometry
    sigma: float
    newton_iters: int
    residual: float  # max nodal |H + 2/σ| of the degree ≤ l_max part
    history: list = field(default_factory=list)
    metric: AmbientMetric | None = field(default=None, repr=False)
    unresolved: float = 0.0  # max nodal residual above degree l_max (discretization floor)
    _stability: StabilityOperator | None = field(default=None, repr=False)
    _laplace: SpectralSystem | None = field(default=None, repr=False)

    @property
    def stability(self) -> StabilityOperator:
        if self._stability is None:
            self._stability = assemble_stability(self.metric, self.geom)
        return self._stability

    @property
    def laplace(self) -> SpectralSystem:
        if self._laplace is None:
            self._laplace = assemble_laplace(self.geom)
        return self._laplace

    @property
    def center(self) -> np.ndarray:
        return self.sphere.center

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "newton_iters": self.newton_iters,
            "residual": self.residual,
            "unresolved": self.unresolved,
            "area_radius": self.geom.area_radius,
            "sphere": self.sphere.to_dict(),
        }


ROUNDOFF_FLOOR = 1e-11
STALL_ACCEPT = 100.0


def _residual(geom: SurfaceGeometry, sigma: float) -> np.ndarray:
    return geom.mean_curvature + 2.0 / sigma


def _resolved_max(grid, R) -> float:
    return float(np.abs(grid.synthesize(grid.analyze(R))).max())


def solve_cmc(
    metric: AmbientMetric,
    sigma: float,
    guess: EmbeddedSphere,
    tol: float | None = None,
    max_iter: int = 30,
    cond_limit: float = 1e12,
    max_halvings: int = 12,
) -> LeafSolution:
    """Newton iteration for H ≡ −2/σ starting from ``guess``.

    Convergence is measured on the band-limited part of the residual, the
    part Newton controls; the remainder is the truncation floor and is
    reported as ``unresolved``. The effective tolerance never drops below a
    relative 1e-11 of |H|, and a stalled line search within STALL_ACCEPT·tol
    of the target is accepted as the round-off floor.
    """
    tol = 1e-9 / sigma**2 if tol is None else tol
    tol = max(tol, ROUNDOFF_FLOOR * 2.0 / sigma)
    S = guess
    grid = S.grid
    Y = grid.basis[0]
    geom = geometry(metric, S)
    R = _residual(geom, sigma)
    res = _resolved_max(grid, R)
    history = [res]
    iters = 0
    while res > tol:
        if iters >= max_iter:
            raise NoConvergenceError(
                f"Newton did not reach {tol:.3e} in {max_iter} iterations (residual {res:.3e})",
                residual_history=history,
            )
        op = assemble_stability(metric, geom)
        load = Y.T @ (geom.measure * R)
        scale = np.linalg.norm(Y.T @ (geom.measure * geom.mean_curvature))
        cw = solve_stability(op, -load, cond_limit, scale)
        dfn = (Y @ cw) / geom.radial_normal_factor
        df = grid.analyze(dfn)
        t = 1.0
        tres = np.inf
        for _ in range(max_halvings):
            trial = EmbeddedSphere(S.center, S.base_radius, S.coeffs + t * df, S.l_max)
            try:
                trial = recenter(trial).normalized()
                tgeom = geometry(metric, trial)
            except GeometryError:
                t *= 0.5
                continue
            tR = _residual(tgeom, sigma)
            tres = _resolved_max(grid, tR)
            if tres < res or t < 2.0**-max_halvings * 2:
                break
            t *= 0.5
        iters += 1
        if res <= STALL_ACCEPT * tol and tres > 0.5 * res:
            # no quadratic progress just above the target: the round-off floor
            if tres < res:
                S, geom, R, res = trial, tgeom, tR, tres
            history.append(res)
            log.info("sigma=%g: accepting residual %.3e at the round-off floor (target %.3e)", sigma, res, tol)
            break
        if tres >= res:
            history.append(tres)
            reason = "line search stalled" if np.isfinite(tres) else "line search failed to produce a valid surface"
            raise NoConvergenceError(f"{reason} at residual {res:.3e} (target {tol:.3e})", residual_history=history)
        S, geom, R, res = trial, tgeom, tR, tres
        history.append(res)
        log.debug("sigma=%g iter=%d step=%g residual=%.3e", sigma, iters, t, res)
    unresolved = float(np.abs(R - grid.synthesize(grid.analyze(R))).max())
    return LeafSolution(S, geom, sigma, iters, res, history, metric, unresolved=unresolved)


# -- lapse ------------------------------------------------------------------------


@dataclass
class LapseRecord:
    sigma: float
    u: ScalarField
    split: PartSplit
    mean: float  # ū = rescaling part
    trans_sup: float  # ‖u^t‖_{L∞}, grid sup
    deform_sup: float
    deform_l2: float

    def as_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "ubar": self.mean,
            "u_trans_sup": self.trans_sup,
            "u_deform_sup": self.deform_sup,
            "u_deform_l2": self.deform_l2,
        }


def solve_lapse(metric: AmbientMetric, leaf: LeafSolution, cond_limit: float = 1e12) -> LapseRecord:
    """u = J⁻¹(2/σ²) and its rescaling/translational/deformational split."""
    grid = leaf.geom.grid
    Y = grid.basis[0]
    op = leaf.stability
    load = Y.T @ (leaf.geom.measure * np.full(grid.n_nodes, 2.0 / leaf.sigma**2))
    c = solve_stability(op, load, cond_limit, np.linalg.norm(load))
    u = ScalarField(grid, Y @ c)
    parts = split_parts(u, leaf.laplace, leaf.sigma)
    mu = leaf.geom.measure
    return LapseRecord(
        leaf.sigma,
        u,
        parts,
        parts.mean,
        float(np.abs(parts.trans.values).max()),
        float(np.abs(parts.deform.values).max()),
        float(np.sqrt(mu @ parts.deform.values**2)),
    )


def instability_margin(leaf: LeafSolution, c: float, exponent: float = 1.5) -> float:
    """λ_min(−J on mean-free functions) + c·σ^{−exponent}; positive when the control holds."""
    lam = leaf.stability.mean_free_eigenvalues(leaf.geom.grid)
    return float(lam[0] + c * leaf.sigma ** (-exponent))


def jacobian_check(metric: AmbientMetric, leaf: LeafSolution, delta_coeffs, t: float) -> float:
    """Relative error between a finite difference of H along a radial direction and J(ψδ).

    Compared as Galerkin load vectors so that both sides live in the same space.
    At a CMC leaf tangential reparametrization does not change H to first order.
    """
    geom = leaf.geom
    grid = geom.grid
    Y = grid.basis[0]
    S = leaf.sphere
    moved = EmbeddedSphere(S.center, S.base_radius, S.coeffs + t * np.asarray(delta_coeffs), S.l_max)
    dH = (geometry(metric, moved).mean_curvature - geom.mean_curvature) / t
    fd = Y.T @ (geom.measure * dH)
    w = grid.synthesize(delta_coeffs) * geom.radial_normal_factor
    cw = scipy.linalg.solve(leaf.stability.mass, Y.T @ (geom.measure * w), assume_a="pos")
    lin = leaf.stability.matrix @ cw
    return float(np.linalg.norm(fd - lin) / np.linalg.norm(lin))


# -- continuation ------------------------------------------------------------


@dataclass
class ContinuationPolicy:
    l_max: int = 24
    initial_step: float = 0.125  # first Δσ as a fraction of σ
    min_step: float = 0.01
    max_step: float = 0.25
    max_halvings: int = 6
    easy_iters: int = 3
    tol_scale: float = 1e-9
    max_iter: int = 30
    center: tuple = (0.0, 0.0, 0.0)
    initial_radius: float | None = None


@dataclass
class Foliation:
    metric: AmbientMetric
    leaves: list
    lapses: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([leaf.sigma for leaf in self.leaves])

    def pair_gaps(self) -> np.ndarray:
        """Minimum radial separation between each pair of consecutive leaves."""
        return np.array([leaf_gap(a, b).min() for a, b in zip(self.leaves, self.leaves[1:])])


def leaf_gap(inner: LeafSolution, outer: LeafSolution) -> np.ndarray:
    """Per-node radial gap from ``inner`` to ``outer`` along rays from the outer center."""
    p = inner.geom.points - outer.center
    dist = np.linalg.norm(p, axis=1)
    return outer.sphere.radius_at(p / dist[:, None]) - dist


def trace_foliation(
    metric: AmbientMetric,
    sigma_min: float,
    sigma_max: float,
    policy: ContinuationPolicy | None = None,
    with_lapse: bool = True,
    guess: EmbeddedSphere | None = None,
    sigma_grid=None,
) -> Foliation:
    """Adaptive continuation in σ from ``sigma_min`` to ``sigma_max``.

    With ``sigma_grid`` the leaves land exactly on those σ values (ascending);
    failed steps are still halved, inserting intermediate leaves.
    """
    targets = None if sigma_grid is None else [float(s) for s in sorted(sigma_grid)]
    if targets is not None:
        sigma_min, sigma_max = targets[0], targets[-1]
    policy = policy or ContinuationPolicy()
    tol = policy.tol_scale

    def solve(sig, g):
        return solve_cmc(metric, sig, g, tol=tol / sig**2, max_iter=policy.max_iter)

    if guess is None:
        r0 = policy.initial_radius or sigma_min
        guess = EmbeddedSphere.round(r0, policy.l_max, policy.center)
    fol = Foliation(metric, [])
    try:
        leaf = solve(sigma_min, guess)
    except (NoConvergenceError, NearCriticalLeafError, GeometryError) as exc:
        raise ContinuationAborted(f"first leaf at sigma={sigma_min} failed: {exc}", partial=fol) from exc
    fol.leaves.append(leaf)
    if with_lapse:
        fol.lapses.append(solve_lapse(metric, leaf))
    step = policy.initial_step * sigma_min
    easy = 0
    while leaf.sigma < sigma_max * (1 - 1e-12):
        sig = leaf.sigma
        if targets is not None:
            goal = next(t for t in targets if t > sig * (1 + 1e-12))
            step = goal - sig
        else:
            goal = sigma_max
            step = float(np.clip(step, policy.min_step * sig, policy.max_step * sig))
        halvings = 0
        while True:
            nxt = min(sig + step, goal)
            ratio = nxt / sig
            prev = leaf.sphere
            g = EmbeddedSphere(prev.center, prev.base_radius * ratio, prev.coeffs * ratio, prev.l_max)
            try:
                new = solve(nxt, g)
                break
            except (NoConvergenceError, NearCriticalLeafError, GeometryError) as exc:
                halvings += 1
                fol.events.append({"sigma": nxt, "event": "halve", "reason": str(exc)})
                log.info("continuation step to sigma=%g failed (%s); halving", nxt, exc)
                if halvings > policy.max_halvings:
                    raise ContinuationAborted(
                        f"continuation stalled at sigma={sig:g} after {policy.max_halvings} halvings", partial=fol
                    ) from exc
                step *= 0.5
                easy = 0
        leaf = new
        fol.leaves.append(leaf)
        if with_lapse:
            fol.lapses.append(solve_lapse(metric, leaf))
        easy = easy + 1 if leaf.newton_iters <= policy.easy_iters else 0
        if easy >= 2:
            step *= 2.0
            easy = 0
    return fol
