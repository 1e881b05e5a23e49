"""Catalog of analytic 3-metrics, their curvature, and initial-data sets.

All tensors live in the Cartesian exterior chart. Array layout is
``g[..., i, j]``, ``dg[..., k, i, j] = ∂_k g_ij`` and
``d2g[..., l, k, i, j] = ∂_l ∂_k g_ij``; every evaluator accepts a single
point of shape (3,) or a batch of shape (N, 3).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError

EYE = np.eye(3)


@dataclass
class MetricJet:
    g: np.ndarray
    dg: np.ndarray
    d2g: np.ndarray


@dataclass
class CurvatureSample:
    ric: np.ndarray
    scal: np.ndarray
    christoffel: np.ndarray  # [..., k, i, j] = Γ^k_ij


# -- conformal factors -------------------------------------------------------
# Every catalog family has g = F(x) δ_ij; a factor returns (F, ∂F, ∂∂F).


def _radial(x):
    r = np.linalg.norm(x, axis=-1)
    return r


def _flat_factor(x):
    n = x.shape[0]
    return np.ones(n), np.zeros((n, 3)), np.zeros((n, 3, 3))


def _schwarzschild_factor(x, m):
    r = _radial(x)
    phi = 1.0 + m / (2 * r)
    dphi = -m * x / (2 * r[:, None] ** 3)
    d2phi = -0.5 * m * (
        EYE / r[:, None, None] ** 3 - 3 * np.einsum("ni,nj->nij", x, x) / r[:, None, None] ** 5
    )
    F = phi**4
    dF = 4 * phi[:, None] ** 3 * dphi
    d2F = 12 * phi[:, None, None] ** 2 * np.einsum("ni,nj->nij", dphi, dphi) + 4 * phi[:, None, None] ** 3 * d2phi
    return F, dF, d2F


def _perturbation_factor(x, amplitude, tau, omega, phase):
    """h = A r^{-τ} sin(ω s) with s = x₁/r (angular) or s = x₁ (cartesian)."""
    r = _radial(x)
    rr = r[:, None]
    q = r**-tau
    dq = -tau * r[:, None] ** (-tau - 2) * x
    d2q = -tau * rr[:, :, None] ** (-tau - 2) * EYE + tau * (tau + 2) * rr[:, :, None] ** (
        -tau - 4
    ) * np.einsum("ni,nj->nij", x, x)
    e1 = np.zeros(3)
    e1[0] = 1.0
    if phase == "angular":
        s = x[:, 0] / r
        ds = e1 / rr - x[:, :1] * x / rr**3
        d2s = (
            -(np.einsum("i,nj->nij", e1, x) + np.einsum("ni,j->nij", x, e1)) / rr[:, :, None] ** 3
            - x[:, 0, None, None] * EYE / rr[:, :, None] ** 3
            + 3 * x[:, 0, None, None] * np.einsum("ni,nj->nij", x, x) / rr[:, :, None] ** 5
        )
    elif phase == "cartesian":
        s = x[:, 0]
        ds = np.broadcast_to(e1, x.shape)
        d2s = np.zeros(x.shape + (3,))
    else:
        raise ValueError(f"unknown phase {phase!r}")
    S, C = np.sin(omega * s), np.cos(omega * s)
    h = amplitude * q * S
    dh = amplitude * (dq * S[:, None] + (q * omega * C)[:, None] * ds)
    d2h = amplitude * (
        d2q * S[:, None, None]
        + (omega * C)[:, None, None] * (np.einsum("ni,nj->nij", dq, ds) + np.einsum("ni,nj->nij", ds, dq))
        + q[:, None, None]
        * (-(omega**2) * S[:, None, None] * np.einsum("ni,nj->nij", ds, ds) + (omega * C)[:, None, None] * d2s)
    )
    return h, dh, d2h


@dataclass
class AmbientMetric:
    id: str
    params: dict
    factor: Callable = field(repr=False)
    r_min: float = 0.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def local(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        r = np.linalg.norm(x, axis=-1)
        if np.any(r < self.r_min):
            raise DomainError(
                f"point at distance {r.min():.6g} from the center lies inside the excluded ball r < {self.r_min}",
                operation="eval_metric",
            )
        return x

    def conformal(self, x):
        return self.factor(self.local(x))

    def translated(self, c) -> "AmbientMetric":
        c = np.asarray(c, dtype=float)
        params = dict(self.params, center=(self.center + c).tolist())
        return AmbientMetric(self.id, params, self.factor, self.r_min, self.center + c)


def euclidean() -> AmbientMetric:
    return AmbientMetric("euclidean", {}, _flat_factor, 0.0)


def schwarzschild(mass: float, center=(0.0, 0.0, 0.0), r_min: float | None = None) -> AmbientMetric:
    if r_min is None:
        r_min = abs(mass) / 2.0  # minimal sphere (m > 0) or singular sphere (m < 0) of the isotropic chart
    return AmbientMetric(
        "schwarzschild",
        {"mass": mass, "center": list(center)},
        lambda x: _schwarzschild_factor(x, mass),
        r_min,
        np.asarray(center, dtype=float),
    )


def perturbed_schwarzschild(
    mass: float,
    amplitude: float,
    tau: float,
    omega: float,
    center=(0.0, 0.0, 0.0),
    phase: str = "angular",
    r_min: float = 1.0,
) -> AmbientMetric:
    """Schwarzschild plus h_ij = A r^{-τ} sin(ω s) δ_ij; see ``_perturbation_factor``."""

    def factor(x):
        F, dF, d2F = _schwarzschild_factor(x, mass) if mass else _flat_factor(x)
        h, dh, d2h = _perturbation_factor(x, amplitude, tau, omega, phase)
        return F + h, dF + dh, d2F + d2h

    params = {"mass": mass, "amplitude": amplitude, "tau": tau, "omega": omega, "center": list(center), "phase": phase}
    return AmbientMetric("perturbed", params, factor, max(r_min, abs(mass) / 2.0), np.asarray(center, dtype=float))


FAMILIES = ("euclidean", "schwarzschild", "perturbed")


def make_metric(family: str, mass=0.0, amplitude=0.0, tau=1.0, omega=1.0, center=(0, 0, 0), phase="angular"):
    if family == "euclidean":
        return euclidean().translated(center)
    if family == "schwarzschild":
        return schwarzschild(mass, center)
    if family == "perturbed":
        return perturbed_schwarzschild(mass, amplitude, tau, omega, center, phase)
    raise ValueError(f"unknown metric family {family!r}; expected one of {', '.join(FAMILIES)}")


# -- jets and curvature -------------------------------------------------------


def eval_metric(metric: AmbientMetric, x) -> MetricJet:
    """Analytic (g, ∂g, ∂∂g) at one point or a batch of points."""
    single = np.ndim(x) == 1
    F, dF, d2F = metric.conformal(x)
    g = F[:, None, None] * EYE
    dg = dF[:, :, None, None] * EYE
    d2g = d2F[:, :, :, None, None] * EYE
    if single:
        return MetricJet(g[0], dg[0], d2g[0])
    return MetricJet(g, dg, d2g)


def christoffel_from_jet(g, dg, d2g=None):
    """Γ^k_ij and, if ``d2g`` is given, ∂_m Γ^k_ij laid out [..., m, k, i, j]."""
    gi = np.linalg.inv(g)
    # lowered symbol Γ_lij = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij)
    low = 0.5 * (
        np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg
    )
    gamma = np.einsum("...kl,...lij->...kij", gi, low)
    if d2g is None:
        return gamma
    dlow = 0.5 * (
        np.einsum("...mijl->...mlij", d2g) + np.einsum("...mjil->...mlij", d2g) - d2g
    )
    dgi = -np.einsum("...ka,...mab,...bl->...mkl", gi, dg, gi)
    dgamma = np.einsum("...mkl,...lij->...mkij", dgi, low) + np.einsum("...kl,...mlij->...mkij", gi, dlow)
    return gamma, dgamma


def ricci_from_jet(g, dg, d2g):
    gamma, dgamma = christoffel_from_jet(g, dg, d2g)
    ric = (
        np.einsum("...kkij->...ij", dgamma)
        - np.einsum("...jkik->...ij", dgamma)
        + np.einsum("...kkl,...lij->...ij", gamma, gamma)
        - np.einsum("...kjl,...lik->...ij", gamma, gamma)
    )
    ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    scal = np.einsum("...ij,...ij->...", np.linalg.inv(g), ric)
    return gamma, ric, scal


def curvature(metric: AmbientMetric, x) -> CurvatureSample:
    jet = eval_metric(metric, x)
    if np.any(np.linalg.det(jet.g) <= 0):
        raise DomainError("metric is singular at the sample point", operation="curvature")
    gamma, ric, scal = ricci_from_jet(jet.g, jet.dg, jet.d2g)
    return CurvatureSample(ric, scal, gamma)


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5**0.5) * k
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


DECAY_COLUMNS = ("metric", "christoffel", "ricci", "scalar")


def decay_report(metric: AmbientMetric, radii, eps: float, n_samples: int = 200, floor: float = 1e-10) -> dict:
    """Weighted sups r^{1/2+ε}|g−δ|, r^{3/2+ε}|Γ̄|, r^{5/2+ε}|Ric̄|, r^{3+ε}|Sc̄| per radius.

    Norms are the largest absolute component. A column is flagged as decaying
    when it is nonincreasing along the sorted radii (relative slack 1e-9,
    absolute floor ``floor`` so round-off on vanishing columns is ignored).
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    dirs = fibonacci_sphere(n_samples)
    rows = []
    for r in radii:
        pts = metric.center + r * dirs
        jet = eval_metric(metric, pts)
        gamma, ric, scal = ricci_from_jet(jet.g, jet.dg, jet.d2g)
        rows.append(
            [
                r ** (0.5 + eps) * np.abs(jet.g - EYE).max(),
                r ** (1.5 + eps) * np.abs(gamma).max(),
                r ** (2.5 + eps) * np.abs(ric).max(),
                r ** (3.0 + eps) * np.abs(scal).max(),
            ]
        )
    table = np.array(rows)
    flags = {}
    for j, name in enumerate(DECAY_COLUMNS):
        col = table[:, j]
        flags[name] = bool(np.all(np.diff(col) <= np.maximum(1e-9 * col[:-1], floor)))
    return {"radii": radii, "eps": eps, "columns": DECAY_COLUMNS, "table": table, "decaying": flags}


# -- initial data ----------------------------------------------------------------


@dataclass
class InitialDataSet:
    metric: AmbientMetric
    extrinsic: Callable  # x -> K_ij
    momentum_density: Callable  # x -> J_i
    energy_density: Callable  # x -> ρ
    extrinsic_derivative: Callable | None = None  # x -> ∂_k K_ij laid out [k, i, j]
    name: str = "initial-data"


def _batch(fn):
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return fn(x[None])[0]
        return fn(x)

    return wrapped


def time_symmetric(metric: AmbientMetric) -> InitialDataSet:
    zK = _batch(lambda x: np.zeros((x.shape[0], 3, 3)))
    return InitialDataSet(
        metric,
        zK,
        _batch(lambda x: np.zeros((x.shape[0], 3))),
        _batch(lambda x: np.zeros(x.shape[0])),
        _batch(lambda x: np.zeros((x.shape[0], 3, 3, 3))),
        name="time-symmetric",
    )


def _textbook_energy(K, g):
    gi = np.linalg.inv(g)
    H = np.einsum("...ij,...ij->...", gi, K)
    K2 = np.einsum("...ia,...jb,...ij,...ab->...", gi, gi, K, K)
    return H, K2


def toy_momentum_data(a: float) -> InitialDataSet:
    """Flat metric with K_ij = ∂_iW_j + ∂_jW_i for W = (a/|x|, 0, 0)."""
    metric = euclidean()

    def K(x):
        r = np.linalg.norm(x, axis=-1)
        grad = -a * x / r[:, None] ** 3  # ∂_i W_1
        out = np.zeros((x.shape[0], 3, 3))
        out[:, :, 0] += grad
        out[:, 0, :] += grad
        return out

    def dK(x):
        r = np.linalg.norm(x, axis=-1)[:, None, None]
        hess = -a * (EYE / r**3 - 3 * np.einsum("ni,nj->nij", x, x) / r**5)  # ∂_k∂_i W_1
        out = np.zeros((x.shape[0], 3, 3, 3))
        out[:, :, :, 0] += hess
        out[:, :, 0, :] += hess
        return out

    def J(x):
        r = np.linalg.norm(x, axis=-1)[:, None]
        e1 = np.array([1.0, 0.0, 0.0])
        return -a * (e1 / r**3 - 3 * x[:, :1] * x / r**5)

    def rho(x):
        H, K2 = _textbook_energy(K(x), np.broadcast_to(EYE, (x.shape[0], 3, 3)))
        return 0.5 * (0.0 - K2 + H**2)

    return InitialDataSet(metric, _batch(K), _batch(J), _batch(rho), _batch(dK), name="toy-momentum")


def bowen_york_data(P) -> InitialDataSet:
    """Flat metric with the traceless, divergence-free boosted extrinsic curvature.

    K_ij = (3/2r²)[P_iν_j + P_jν_i − (δ_ij − ν_iν_j) P·ν]; J = 0 away from the origin.
    """
    P = np.asarray(P, dtype=float)
    metric = euclidean()

    def K(x):
        r = np.linalg.norm(x, axis=-1)
        nu = x / r[:, None]
        pn = nu @ P
        out = np.einsum("i,nj->nij", P, nu) + np.einsum("ni,j->nij", nu, P)
        out -= (EYE - np.einsum("ni,nj->nij", nu, nu)) * pn[:, None, None]
        return 1.5 * out / r[:, None, None] ** 2

    def rho(x):
        _, K2 = _textbook_energy(K(x), np.broadcast_to(EYE, (x.shape[0], 3, 3)))
        return -0.5 * K2

    return InitialDataSet(
        metric, _batch(K), _batch(lambda x: np.zeros((x.shape[0], 3))), _batch(rho), None, name="bowen-york"
    )


def _fd_derivative(fn, x, h):
    """Fourth-order central differences of a tensor field, derivative index first."""
    out = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        out.append((-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h))
    return np.stack(out, axis=1)


def constraint_residual(data: InitialDataSet, x, h: float = 1e-3) -> dict:
    """Energy and momentum constraint residuals at one point or a batch.

    The momentum residual is J_i − (∂_i H̄ − g^{jk}∇_k K_ij). Energy residuals are
    reported against ½(Sc̄ − |K|² + H̄²) ("textbook") and ½(Sc̄ − |K|² − H̄²) ("printed").
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    jet = eval_metric(data.metric, x)
    gamma, ric, scal = ricci_from_jet(jet.g, jet.dg, jet.d2g)
    gi = np.linalg.inv(jet.g)
    K = data.extrinsic(x)
    if data.extrinsic_derivative is not None:
        dK = data.extrinsic_derivative(x)
    else:
        dK = _fd_derivative(data.extrinsic, x, h * np.maximum(1.0, np.linalg.norm(x, axis=-1).min()))
    # ∇_k K_ij = ∂_k K_ij − Γ^a_ki K_aj − Γ^a_kj K_ia
    nablaK = dK - np.einsum("naki,naj->nkij", gamma, K) - np.einsum("nakj,nia->nkij", gamma, K)
    divK = np.einsum("njk,nkij->ni", gi, nablaK)
    # ∂_i H̄ with H̄ = g^{jk}K_jk
    dgi = -np.einsum("nja,nkab,nbl->nkjl", gi, jet.dg, gi)
    dH = np.einsum("nijk,njk->ni", dgi, K) + np.einsum("njk,nijk->ni", gi, dK)
    H, K2 = _textbook_energy(K, jet.g)
    J = data.momentum_density(x)
    rho = data.energy_density(x)
    out = {
        "energy_textbook": rho - 0.5 * (scal - K2 + H**2),
        "energy_printed": rho - 0.5 * (scal - K2 - H**2),
        "momentum": J - (dH - divK),
    }
    if single:
        out = {k: v[0] for k, v in out.items()}
    return out
