"""Masses, linear momenta and foliation-property residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ambient import AmbientMetric, InitialDataSet, eval_metric
from .cmc import Foliation, LeafSolution
from .sphere import translational_modes
from .surface import EmbeddedSphere, gauss_curvature, geometry
from .surface import hawking_mass as _hawking_mass

hawking_mass = _hawking_mass


def _coordinate_sphere(metric: AmbientMetric, r: float, l_max: int, center=(0.0, 0.0, 0.0)):
    return geometry(metric, EmbeddedSphere.round(r, l_max, center))


def adm_mass_flux(
    metric: AmbientMetric, r: float, l_max: int = 24, convention: str = "euclidean", center=(0.0, 0.0, 0.0)
) -> float:
    """(1/16π) ∮_{S_r} (∂_j ḡ_ij − ∂_i ḡ_jj) ν^i dμ.

    ``convention="euclidean"`` uses the flat unit normal and area element of the
    coordinate sphere; ``"induced"`` uses the ḡ-unit normal and induced measure.
    Both have the same limit; they differ at O(m²/r).
    """
    geom = _coordinate_sphere(metric, r, l_max, center)
    dg = eval_metric(metric, geom.points).dg
    vec = np.einsum("njij->ni", dg) - np.einsum("nijj->ni", dg)
    if convention == "euclidean":
        nu = geom.grid.directions
        mu = geom.grid.quad_weights * r**2
    elif convention == "induced":
        nu, mu = geom.normal, geom.measure
    else:
        raise ValueError(f"unknown flux convention {convention!r}")
    return float(mu @ np.einsum("ni,ni->n", vec, nu)) / (16 * np.pi)


def adm_mass_ricci(metric: AmbientMetric, r: float, l_max: int = 24, center=(0.0, 0.0, 0.0)) -> float:
    """−r/(8π) ∮_{S_r} (Ric̄(ν,ν) − Sc̄/2) dμ with the induced normal and measure."""
    geom = _coordinate_sphere(metric, r, l_max, center)
    integrand = geom.ricci_normal - 0.5 * geom.ambient_scalar
    return -r / (8 * np.pi) * geom.integrate(integrand)


def hawking_limit_mass(sigmas, masses) -> tuple[float, float]:
    """Extrapolate m_H(σ) to σ → ∞ with the model a + b/σ + c/σ².

    Each window of three consecutive leaves gives an exact extrapolant; the value
    is the last one and the uncertainty is its distance to the previous one.
    """
    s = np.asarray(sigmas, dtype=float)
    m = np.asarray(masses, dtype=float)
    order = np.argsort(s)
    s, m = s[order], m[order]
    if s.size < 4 or s[-1] < 4 * s[0] * (1 - 1e-12):
        raise ValueError("need at least 4 leaves spanning a factor of 4 in sigma")
    ext = []
    for i in range(s.size - 2):
        x = 1.0 / s[i : i + 3]
        V = np.stack([np.ones(3), x, x * x], axis=1)
        ext.append(np.linalg.solve(V, m[i : i + 3])[0])
    return float(ext[-1]), float(abs(ext[-1] - ext[-2]))


@dataclass
class MassReport:
    hawking: list
    sigmas: list
    radii: list
    adm_flux: list
    adm_ricci: list
    hawking_limit: tuple

    def rows(self):
        for s, v in zip(self.sigmas, self.hawking):
            yield {"x": s, "value": v, "method": "hawking"}
        for r, v in zip(self.radii, self.adm_flux):
            yield {"x": r, "value": v, "method": "adm_flux"}
        for r, v in zip(self.radii, self.adm_ricci):
            yield {"x": r, "value": v, "method": "adm_ricci"}
        if self.hawking_limit is not None:
            yield {"x": math.inf, "value": self.hawking_limit[0], "method": "hawking_limit"}
            yield {"x": math.inf, "value": self.hawking_limit[1], "method": "hawking_limit_uncertainty"}


def mass_report(foliation: Foliation, radii, l_max: int = 24) -> MassReport:
    sig = [leaf.sigma for leaf in foliation.leaves]
    mh = [hawking_mass(leaf.geom) for leaf in foliation.leaves]
    try:
        lim = hawking_limit_mass(sig, mh)
    except ValueError:
        lim = None
    return MassReport(
        mh,
        sig,
        list(radii),
        [adm_mass_flux(foliation.metric, r, l_max) for r in radii],
        [adm_mass_ricci(foliation.metric, r, l_max) for r in radii],
        lim,
    )


# -- momentum ---------------------------------------------------------------


def adm_linear_momentum(data: InitialDataSet, r: float, l_max: int = 24, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """p_i = (1/8π) ∮_{S_r} (H̄ ν_i − K(ν, e_i)) dμ with H̄ = tr K."""
    geom = _coordinate_sphere(data.metric, r, l_max, center)
    K = data.extrinsic(geom.points)
    Gi = np.linalg.inv(geom.ambient_metric)
    H = np.einsum("nij,nij->n", Gi, K)
    integrand = H[:, None] * geom.normal_lower - np.einsum("nij,nj->ni", K, geom.normal)
    return geom.measure @ integrand / (8 * np.pi)


@dataclass
class CMCMomentum:
    sigma: float
    vector: np.ndarray
    mode_coeffs: np.ndarray  # ⟨p̃_σ, φ_i⟩ on the translational eigenfunctions
    field: np.ndarray  # nodal p̃_σ
    modes: np.ndarray


def cmc_linear_momentum(leaf: LeafSolution, data: InitialDataSet, chart=None) -> CMCMomentum:
    """p̃_σ = (σ²/6)·trans(σ div K(ν,·) − σ J(ν) + tr_M K) and its vector form.

    The divergence is taken weakly against each translational eigenfunction,
    ∫ div(ω) φ dμ = −∫ ⟨ω, ∇φ⟩ dμ. The vector is (3/(4πσ³)) ∫ p̃_σ x̄ dμ with
    x̄ the ambient Cartesian position, or ``chart`` (nodal x̄, shape (n, 3)) if given.
    """
    geom = leaf.geom
    grid = geom.grid
    sigma = leaf.sigma
    sys = leaf.laplace
    idx, _ = translational_modes(sys, sigma)
    Y, Yt, Yp = grid.basis
    vecs = sys.eigenvectors[:, idx]
    phi = Y @ vecs
    dphi = np.stack([Yt @ vecs, Yp @ vecs], axis=1)  # (n, I, mode)
    K = data.extrinsic(geom.points)
    J = data.momentum_density(geom.points)
    omega = np.einsum("nij,ni,nIj->nI", K, geom.normal, geom.tangents)
    trK = np.einsum("nIJ,nIa,nab,nJb->n", geom.metric_inv, geom.tangents, K, geom.tangents)
    Jnu = np.einsum("ni,ni->n", J, geom.normal)
    mu = geom.measure
    weak_div = -np.einsum("n,nIJ,nI,nJk->k", mu, geom.metric_inv, omega, dphi)
    coeffs = (sigma**2 / 6.0) * (sigma * weak_div - sigma * (phi.T @ (mu * Jnu)) + phi.T @ (mu * trK))
    field_vals = phi @ coeffs
    xbar = geom.points if chart is None else np.asarray(chart)
    vector = 3.0 / (4 * np.pi * sigma**3) * (xbar.T @ (mu * field_vals))
    return CMCMomentum(sigma, vector, coeffs, field_vals, idx)


@dataclass
class MomentumReport:
    adm: np.ndarray
    adm_radius: float
    sigmas: list
    cmc: list
    agreement: list

    def rows(self):
        for s, p, gap in zip(self.sigmas, self.cmc, self.agreement):
            yield {
                "sigma": s,
                "p1": p[0],
                "p2": p[1],
                "p3": p[2],
                "adm1": self.adm[0],
                "adm2": self.adm[1],
                "adm3": self.adm[2],
                "gap": gap,
            }


def momentum_report(foliation: Foliation, data: InitialDataSet, adm_radius: float, l_max: int = 24) -> MomentumReport:
    adm = adm_linear_momentum(data, adm_radius, l_max)
    cmc = [cmc_linear_momentum(leaf, data).vector for leaf in foliation.leaves]
    return MomentumReport(
        adm, adm_radius, [leaf.sigma for leaf in foliation.leaves], cmc, [float(np.linalg.norm(p - adm)) for p in cmc]
    )


# -- foliation properties ------------------------------------------------------


def central_difference(s: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order derivative on a nonuniform grid; NaN at the two ends."""
    out = np.full(len(s), np.nan)
    for i in range(1, len(s) - 1):
        h0, h1 = s[i] - s[i - 1], s[i + 1] - s[i]
        out[i] = (
            -h1 / (h0 * (h0 + h1)) * y[i - 1] + (h1 - h0) / (h0 * h1) * y[i] + h0 / (h1 * (h0 + h1)) * y[i + 1]
        )
    return out


@dataclass
class PropertyResiduals:
    sigma: np.ndarray
    a1: np.ndarray  # NaN where m_H = 0 (not applicable)
    a1_alt_normalization: np.ndarray  # same ratio with √(16π/3) in place of √(π/3)
    a2: np.ndarray
    a3: np.ndarray
    area_identity: np.ndarray  # ||M| − 4πσ²(1 − 2m_H/σ)| / σ^{1/2}
    mass_derivative_identity: np.ndarray  # |∂_σ m_H − 2(1 + m_H/σ − ū)|
    hawking: np.ndarray
    area: np.ndarray
    ubar: np.ndarray
    notes: list = field(default_factory=list)

    def rows(self):
        for i, s in enumerate(self.sigma):
            yield {
                "sigma": s,
                "a1": self.a1[i],
                "a2": self.a2[i],
                "a3": self.a3[i],
                "area_identity": self.area_identity[i],
                "mass_derivative_identity": self.mass_derivative_identity[i],
            }


def a1_ratio(leaf: LeafSolution, normalization: float = math.sqrt(math.pi / 3)) -> float:
    """max_i |∫K φ_i dμ| / (normalization·|m_H|/σ²·‖φ_i‖_{L²}) over eigenfunctions with λ ∈ (0, 3/σ²]."""
    geom = leaf.geom
    mH = hawking_mass(geom)
    if abs(mH) < 1e-12:
        return math.nan
    sys = leaf.laplace
    lam = sys.eigenvalues
    sel = np.flatnonzero((lam > 1e-12 / leaf.sigma**2) & (lam <= 3.0 / leaf.sigma**2))
    if sel.size == 0:
        return 0.0
    K = gauss_curvature(geom)
    phi = geom.grid.basis[0] @ sys.eigenvectors[:, sel]
    mu = geom.measure
    num = np.abs(phi.T @ (mu * K))
    norms = np.sqrt(np.einsum("n,nk->k", mu, phi**2))
    return float(np.max(num / (normalization * abs(mH) / leaf.sigma**2 * norms)))


def foliation_properties(foliation: Foliation) -> PropertyResiduals:
    leaves = foliation.leaves
    if len(leaves) < 3:
        raise ValueError("need at least 3 leaves for central differences")
    if len(foliation.lapses) != len(leaves):
        raise ValueError("foliation lacks per-leaf lapse records")
    s = np.array([leaf.sigma for leaf in leaves])
    mH = np.array([hawking_mass(leaf.geom) for leaf in leaves])
    area = np.array([leaf.geom.area for leaf in leaves])
    ubar = np.array([lap.mean for lap in foliation.lapses])
    dA = central_difference(s, area)
    dm = central_difference(s, mH)
    a1 = np.array([a1_ratio(leaf) for leaf in leaves])
    a1p = np.array([a1_ratio(leaf, math.sqrt(16 * math.pi / 3)) for leaf in leaves])
    notes = []
    if np.all(np.isnan(a1)):
        notes.append("a1 not applicable: Hawking mass vanishes on every leaf")
    return PropertyResiduals(
        sigma=s,
        a1=a1,
        a1_alt_normalization=a1p,
        a2=np.abs(dA - 2.0 / s * area * (1 - mH / s)) / s,
        a3=np.abs(dm) * s,
        area_identity=np.abs(area - 4 * np.pi * s**2 * (1 - 2 * mH / s)) / np.sqrt(s),
        mass_derivative_identity=np.abs(dm - 2 * (1 + mH / s - ubar)),
        hawking=mH,
        area=area,
        ubar=ubar,
        notes=notes,
    )
