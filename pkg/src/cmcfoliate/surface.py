"""Radial graph spheres in an ambient metric: fundamental forms, curvature, diagnostics.

Mean curvature follows the sign where a Euclidean round sphere of radius r has
H = −2/r: k_IJ = ḡ(∇̄_I ∂_J X, ν) with ν the outward unit normal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ambient import AmbientMetric, christoffel_from_jet, eval_metric, ricci_from_jet
from .errors import GeometryError
from .sphere import SphereGrid, get_grid, resample

_DERIV_KEYS = ("", "t", "p", "tt", "tp", "pp", "ttp", "tpp")


@dataclass
class EmbeddedSphere:
    """X(ω) = c + (r₀ + f(ω))·ω with f stored as real harmonic coefficients."""

    center: np.ndarray
    base_radius: float
    coeffs: np.ndarray
    l_max: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != ((self.l_max + 1) ** 2,):
            raise GeometryError(
                f"expected {(self.l_max + 1) ** 2} coefficients for l_max={self.l_max}", operation="EmbeddedSphere"
            )
        if self.base_radius <= 0:
            raise GeometryError("base radius must be positive", operation="EmbeddedSphere")

    @classmethod
    def round(cls, radius: float, l_max: int, center=(0.0, 0.0, 0.0)) -> "EmbeddedSphere":
        return cls(np.asarray(center, dtype=float), float(radius), np.zeros((l_max + 1) ** 2), l_max)

    @property
    def grid(self) -> SphereGrid:
        return get_grid(self.l_max)

    def radial(self) -> np.ndarray:
        """Nodal values of r₀ + f."""
        return self.base_radius + self.grid.synthesize(self.coeffs)

    def radius_at(self, directions) -> np.ndarray:
        return self.base_radius + self.grid.evaluate(self.coeffs, directions)

    def points(self) -> np.ndarray:
        return self.center + self.radial()[:, None] * self.grid.directions

    def with_l_max(self, l_max: int) -> "EmbeddedSphere":
        return EmbeddedSphere(self.center.copy(), self.base_radius, resample(self.coeffs, self.l_max, l_max), l_max)

    def normalized(self) -> "EmbeddedSphere":
        """Move the degree-0 coefficient into the base radius."""
        c = self.coeffs.copy()
        r0 = self.base_radius + c[0] / np.sqrt(4 * np.pi)
        c[0] = 0.0
        return EmbeddedSphere(self.center.copy(), r0, c, self.l_max)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "base_radius": float(self.base_radius),
            "l_max": int(self.l_max),
            "coeffs": [float(v) for v in self.coeffs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddedSphere":
        return cls(np.array(d["center"], dtype=float), float(d["base_radius"]), np.array(d["coeffs"], dtype=float), int(d["l_max"]))

    @classmethod
    def from_json(cls, text: str) -> "EmbeddedSphere":
        return cls.from_dict(json.loads(text))


def _omega_derivs(theta, phi):
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    z = np.zeros_like(theta)
    w = np.stack([st * cp, st * sp, ct], -1)
    return {
        "": w,
        "t": np.stack([ct * cp, ct * sp, -st], -1),
        "p": np.stack([-st * sp, st * cp, z], -1),
        "tt": -w,
        "tp": np.stack([-ct * sp, ct * cp, z], -1),
        "pp": np.stack([-st * cp, -st * sp, z], -1),
        "ttp": np.stack([st * sp, -st * cp, z], -1),  # ∂_φ(−ω)
        "tpp": np.stack([-ct * cp, -ct * sp, z], -1),
    }


def _embedding_derivs(rho: dict, om: dict) -> dict:
    """Partial derivatives of X = c + ρω (c drops out of every derivative)."""

    def r(k):
        return rho[k][:, None]

    X = {
        "t": r("t") * om[""] + r("") * om["t"],
        "p": r("p") * om[""] + r("") * om["p"],
        "tt": r("tt") * om[""] + 2 * r("t") * om["t"] + r("") * om["tt"],
        "tp": r("tp") * om[""] + r("t") * om["p"] + r("p") * om["t"] + r("") * om["tp"],
        "pp": r("pp") * om[""] + 2 * r("p") * om["p"] + r("") * om["pp"],
    }
    X["ttp"] = (
        r("ttp") * om[""]
        + r("tt") * om["p"]
        + 2 * r("tp") * om["t"]
        + 2 * r("t") * om["tp"]
        + r("p") * om["tt"]
        + r("") * om["ttp"]
    )
    X["tpp"] = (
        r("tpp") * om[""]
        + 2 * r("tp") * om["p"]
        + r("t") * om["pp"]
        + r("pp") * om["t"]
        + 2 * r("p") * om["tp"]
        + r("") * om["tpp"]
    )
    return X


def _key(*idx):
    return "".join("tp"[i] for i in sorted(idx))


@dataclass
class SurfaceGeometry:
    grid: SphereGrid
    sphere: EmbeddedSphere
    points: np.ndarray
    tangents: np.ndarray  # (n, 2, 3): ∂_θX, ∂_φX
    metric: np.ndarray  # g_IJ (n, 2, 2)
    metric_inv: np.ndarray
    dmetric: np.ndarray  # ∂_K g_IJ laid out (n, K, I, J)
    christoffel: np.ndarray  # intrinsic Γ^K_IJ (n, K, I, J)
    second_form: np.ndarray  # k_IJ
    mean_curvature: np.ndarray  # H
    traceless: np.ndarray  # k̊_IJ
    normal: np.ndarray  # ν^i, outward ḡ-unit
    normal_lower: np.ndarray  # ν_i
    measure: np.ndarray  # per-node dμ weight
    ambient_metric: np.ndarray  # ḡ at the nodes
    ambient_ricci: np.ndarray
    ambient_scalar: np.ndarray
    _mixed2: dict = field(repr=False, default_factory=dict)  # second metric derivatives for Brioschi

    @property
    def area(self) -> float:
        return float(self.measure.sum())

    @property
    def area_radius(self) -> float:
        return float(np.sqrt(self.area / (4 * np.pi)))

    @property
    def k_norm2(self) -> np.ndarray:
        gi = self.metric_inv
        return np.einsum("nik,njl,nij,nkl->n", gi, gi, self.second_form, self.second_form)

    @property
    def traceless_norm2(self) -> np.ndarray:
        gi = self.metric_inv
        return np.einsum("nik,njl,nij,nkl->n", gi, gi, self.traceless, self.traceless)

    @property
    def ricci_normal(self) -> np.ndarray:
        return np.einsum("ni,nij,nj->n", self.normal, self.ambient_ricci, self.normal)

    @property
    def stability_potential(self) -> np.ndarray:
        return self.k_norm2 + self.ricci_normal

    @property
    def mean_curvature_radius(self) -> float:
        """σ = −2/H̄ with H̄ the area-weighted mean of H."""
        hbar = float(self.measure @ self.mean_curvature) / self.area
        return -2.0 / hbar

    @property
    def radial_normal_factor(self) -> np.ndarray:
        """ψ = ḡ(ω, ν): normal displacement per unit radial displacement."""
        return np.einsum("ni,ni->n", self.grid.directions, self.normal_lower)

    def integrate(self, values) -> float:
        return float(self.measure @ np.asarray(values))

    def intrinsic_gauss_curvature(self) -> np.ndarray:
        """Gauss curvature from g_IJ and its derivatives alone (Brioschi formula)."""
        g, dg = self.metric, self.dmetric
        E, F, G = g[:, 0, 0], g[:, 0, 1], g[:, 1, 1]
        Eu, Ev = dg[:, 0, 0, 0], dg[:, 1, 0, 0]
        Fu, Fv = dg[:, 0, 0, 1], dg[:, 1, 0, 1]
        Gu, Gv = dg[:, 0, 1, 1], dg[:, 1, 1, 1]
        Evv, Fuv, Guu = self._mixed2["Evv"], self._mixed2["Fuv"], self._mixed2["Guu"]
        A = np.stack(
            [
                np.stack([-0.5 * Evv + Fuv - 0.5 * Guu, 0.5 * Eu, Fu - 0.5 * Ev], -1),
                np.stack([Fv - 0.5 * Gu, E, F], -1),
                np.stack([0.5 * Gv, F, G], -1),
            ],
            -2,
        )
        B = np.stack(
            [
                np.stack([np.zeros_like(E), 0.5 * Ev, 0.5 * Gu], -1),
                np.stack([0.5 * Ev, E, F], -1),
                np.stack([0.5 * Gu, F, G], -1),
            ],
            -2,
        )
        return (np.linalg.det(A) - np.linalg.det(B)) / (E * G - F * F) ** 2


def geometry(metric: AmbientMetric, S: EmbeddedSphere) -> SurfaceGeometry:
    """Induced metric, normal, second fundamental form and measure at the grid nodes."""
    grid = S.grid
    d = grid.derivatives(S.coeffs, _DERIV_KEYS)
    rho = dict(d)
    rho[""] = S.base_radius + d[""]
    if np.any(rho[""] <= 0):
        raise GeometryError("radial function is not positive", operation="geometry")
    om = _omega_derivs(grid.node_theta, grid.node_phi)
    X = _embedding_derivs(rho, om)
    pts = S.center + rho[""][:, None] * om[""]
    jet = eval_metric(metric, pts)
    G, dG, d2G = jet.g, jet.dg, jet.d2g
    gamma_bar, ric, scal = ricci_from_jet(G, dG, d2G)

    T = np.stack([X["t"], X["p"]], axis=1)  # (n, I, a)
    g = np.einsum("nIa,nab,nJb->nIJ", T, G, T)
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
    if np.any(det <= 1e-300):
        raise GeometryError("degenerate tangent plane at a grid node", operation="geometry")
    gi = np.linalg.inv(g)

    def XD(*idx):
        return X[_key(*idx)]

    def dgIJ(K, I, J):
        XI, XJ, XK = XD(I), XD(J), XD(K)
        return (
            np.einsum("ncab,nc,na,nb->n", dG, XK, XI, XJ)
            + np.einsum("nab,na,nb->n", G, XD(I, K), XJ)
            + np.einsum("nab,na,nb->n", G, XI, XD(J, K))
        )

    def d2gIJ(L, K, I, J):
        XI, XJ, XK, XL = XD(I), XD(J), XD(K), XD(L)
        out = np.einsum("ndcab,nd,nc,na,nb->n", d2G, XL, XK, XI, XJ)
        out += np.einsum("ncab,nc,na,nb->n", dG, XD(K, L), XI, XJ)
        out += np.einsum("ncab,nc,na,nb->n", dG, XK, XD(I, L), XJ)
        out += np.einsum("ncab,nc,na,nb->n", dG, XK, XI, XD(J, L))
        out += np.einsum("ndab,nd,na,nb->n", dG, XL, XD(I, K), XJ)
        out += np.einsum("ndab,nd,na,nb->n", dG, XL, XI, XD(J, K))
        out += np.einsum("nab,na,nb->n", G, XD(I, K, L), XJ)
        out += np.einsum("nab,na,nb->n", G, XD(I, K), XD(J, L))
        out += np.einsum("nab,na,nb->n", G, XD(I, L), XD(J, K))
        out += np.einsum("nab,na,nb->n", G, XI, XD(J, K, L))
        return out

    dg = np.empty((grid.n_nodes, 2, 2, 2))
    for K in range(2):
        for I in range(2):
            for J in range(I, 2):
                dg[:, K, I, J] = dg[:, K, J, I] = dgIJ(K, I, J)
    mixed2 = {"Evv": d2gIJ(1, 1, 0, 0), "Fuv": d2gIJ(0, 1, 0, 1), "Guu": d2gIJ(0, 0, 1, 1)}
    christ = christoffel_from_jet(g, dg)

    n_low = np.cross(X["t"], X["p"])
    Gi = np.linalg.inv(G)
    nn = np.einsum("ni,nij,nj->n", n_low, Gi, n_low)
    if np.any(nn <= 0):
        raise GeometryError("degenerate normal at a grid node", operation="geometry")
    nu_low = n_low / np.sqrt(nn)[:, None]
    if np.any(np.einsum("ni,ni->n", nu_low, om[""]) <= 0):
        raise GeometryError("surface is not a star-shaped radial graph", operation="geometry")
    nu = np.einsum("nij,nj->ni", Gi, nu_low)

    k = np.empty((grid.n_nodes, 2, 2))
    for I in range(2):
        for J in range(I, 2):
            acc = XD(I, J) + np.einsum("nkij,ni,nj->nk", gamma_bar, XD(I), XD(J))
            k[:, I, J] = k[:, J, I] = np.einsum("nk,nk->n", nu_low, acc)
    H = np.einsum("nIJ,nIJ->n", gi, k)
    kt = k - 0.5 * H[:, None, None] * g

    measure = grid.quad_weights * np.sqrt(det) / np.sin(grid.node_theta)
    return SurfaceGeometry(
        grid, S, pts, T, g, gi, dg, christ, k, H, kt, nu, nu_low, measure, G, ric, scal, mixed2
    )


def gauss_curvature(geom: SurfaceGeometry) -> np.ndarray:
    """K = Sc/2 from the Gauss equation Sc = Sc̄ − 2Ric̄(ν,ν) + H²/2 − |k̊|²."""
    sc = geom.ambient_scalar - 2 * geom.ricci_normal + 0.5 * geom.mean_curvature**2 - geom.traceless_norm2
    return 0.5 * sc


def hawking_mass(geom: SurfaceGeometry) -> float:
    """m_H = √(|M|/16π)·(1 − (1/16π)∫H² dμ)."""
    w = geom.integrate(geom.mean_curvature**2)
    return float(np.sqrt(geom.area / (16 * np.pi)) * (1 - w / (16 * np.pi)))


@dataclass
class RegularityReport:
    l2_tracefree: float
    l4_tracefree: float
    linf_tracefree: float
    radius_gap: float
    hawking: float
    ricci_lp: float
    sigma: float
    area_radius: float
    radius_identity_residual: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def regularity_report(metric: AmbientMetric, S: EmbeddedSphere, p: float = 2.0, geom=None) -> RegularityReport:
    geom = geom if geom is not None else geometry(metric, S)
    kt = np.sqrt(np.maximum(geom.traceless_norm2, 0.0))
    mu = geom.measure
    Gi = np.linalg.inv(geom.ambient_metric)
    ric_abs = np.sqrt(
        np.maximum(np.einsum("nia,njb,nij,nab->n", Gi, Gi, geom.ambient_ricci, geom.ambient_ricci), 0.0)
    )
    ric_lp = float(ric_abs.max()) if np.isinf(p) else float((mu @ ric_abs**p) ** (1 / p))
    sigma = geom.mean_curvature_radius
    RA = geom.area_radius
    mH = hawking_mass(geom)
    return RegularityReport(
        l2_tracefree=float(np.sqrt(mu @ kt**2)),
        l4_tracefree=float((mu @ kt**4) ** 0.25),
        linf_tracefree=float(kt.max()),
        radius_gap=abs(sigma - RA),
        hawking=mH,
        ricci_lp=ric_lp,
        sigma=sigma,
        area_radius=RA,
        radius_identity_residual=abs(1 - RA**2 / sigma**2) - 2 * abs(mH) / RA,
    )
