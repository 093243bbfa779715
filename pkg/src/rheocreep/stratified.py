"""Shear stripe with prescribed slip: gradient regularizers under unbounded slip.

The stripe R × [-ℓ, ℓ] is sheared by y = (x1 + f(t, x2), x2) with
f(t, x2) = t·g(x2) and g(±ℓ) = ±1. The material is rigid-elastic
(F_el = I), so Π = ∇y = [[1, t g'], [0, 1]]. Each regularizer candidate is
evaluated from this Π with the generic tensor kernels, integrated across the
stripe, and its growth in t is classified.
"""

from dataclasses import dataclass, field
from enum import Enum
import json

import numpy as np

from . import tensor as tn

VANISH_TOL = 1e-12
BOUNDED_DRIFT = 1e-3
MIN_QUAD_POINTS = 16


class RegularizerKind(Enum):
    StandardGradP = "StandardGradP"    # |∇Π|²
    PushForward = "PushForward"        # |F^{-T}∇Π|²
    MetricTensor = "MetricTensor"      # |∇(ΠᵀΠ)|²
    CurlP = "CurlP"                    # |curl Π|²
    PCurlP = "PCurlP"                  # |Π^{-T} curl Π|²
    GradFel = "GradFel"                # |∇F_el|²
    GradPdot = "GradPdot"              # |∇Π̇|²


ALL_KINDS = tuple(RegularizerKind)


@dataclass(frozen=True)
class SlipProfile:
    """Slip shape g with f(t, x2) = t·g(x2); ``kind`` is 'linear' or 'tanh'."""
    kind: str
    ell: float = 1.0
    width: float = 0.2

    def __post_init__(self):
        if self.kind not in ("linear", "tanh"):
            raise ValueError(f"profile kind must be 'linear' or 'tanh', got {self.kind!r}")
        if not self.ell > 0:
            raise ValueError("ell must be positive")
        if self.kind == "tanh" and not self.width > 0:
            raise ValueError("width must be positive")

    @property
    def label(self):
        return self.kind if self.kind == "linear" else f"tanh(w={self.width:g})"

    def g(self, x2, order=0):
        """g and its first two derivatives."""
        x2 = np.asarray(x2, dtype=float)
        if self.kind == "linear":
            return [x2 / self.ell, np.full_like(x2, 1.0 / self.ell), np.zeros_like(x2)][order]
        w = self.width
        norm = np.tanh(self.ell / w)
        th = np.tanh(x2 / w)
        sech2 = 1.0 - th * th
        if order == 0:
            return th / norm
        if order == 1:
            return sech2 / (w * norm)
        if order == 2:
            return -2.0 * th * sech2 / (w * w * norm)
        raise ValueError("order must be 0, 1 or 2")

    def slip(self, t, x2):
        return t * self.g(x2)


def plastic_strain_stripe(profile, t, x2):
    """Π(t, x2) = [[1, t g'(x2)], [0, 1]], shape (..., 2, 2)."""
    a = t * profile.g(x2, 1)
    P = np.zeros(np.shape(a) + (2, 2))
    P[..., 0, 0] = 1.0
    P[..., 1, 1] = 1.0
    P[..., 0, 1] = a
    return P


def _grad_stripe(profile, t, x2):
    """∇Π with (∇Π)_ijk = ∂_k Π_ij; only ∂_2 Π_12 = t g'' is non-zero."""
    b = t * profile.g(x2, 2)
    G = np.zeros(np.shape(b) + (2, 2, 2))
    G[..., 0, 1, 1] = b
    return G


def _curl_rows(P, gradP):
    """Row-wise 2D curl: (∂_1 Π_i2 - ∂_2 Π_i1)_i."""
    return gradP[..., :, 1, 0] - gradP[..., :, 0, 1]


def regularizer_density(kind, profile, t, x2, kappa=1.0):
    """(κ/2)|argument|² of the chosen regularizer on the stripe."""
    kind = RegularizerKind(kind)
    x2 = np.asarray(x2, dtype=float)
    P = plastic_strain_stripe(profile, t, x2)
    gradP = _grad_stripe(profile, t, x2)
    if kind is RegularizerKind.StandardGradP:
        arg = gradP
    elif kind is RegularizerKind.PushForward:
        # rigid-elastic: F = Π
        arg = tn.batched_einsum("...im,...mjk->...ijk", tn.inverse_transpose(P), gradP)
    elif kind is RegularizerKind.MetricTensor:
        arg = (np.einsum("...mik,...mj->...ijk", gradP, P)
               + np.einsum("...mi,...mjk->...ijk", P, gradP))
    elif kind is RegularizerKind.CurlP:
        arg = _curl_rows(P, gradP)
    elif kind is RegularizerKind.PCurlP:
        arg = np.einsum("...ij,...j->...i", tn.inverse_transpose(P), _curl_rows(P, gradP))
    elif kind is RegularizerKind.GradFel:
        # F_el = ∇y Π^{-1} with ∇y = Π
        arg = tn.grad_product(P, gradP, tn.inverse(P), tn.grad_inverse(P, gradP))
    else:
        # Π̇ = [[0, g'], [0, 0]] for f = t·g, so ∇Π̇ is ∇Π at t = 1
        arg = _grad_stripe(profile, np.ones_like(np.asarray(t, dtype=float)), x2)
    extra = arg.ndim - np.broadcast(np.asarray(t), x2).ndim
    sq = np.sum(arg * arg, axis=tuple(range(-extra, 0))) if extra else arg * arg
    return 0.5 * kappa * sq


def _gauss(profile, quad_points):
    if quad_points < MIN_QUAD_POINTS:
        raise ValueError(f"quad_points must be >= {MIN_QUAD_POINTS}")
    x, w = np.polynomial.legendre.leggauss(int(quad_points))
    return profile.ell * x, profile.ell * w


def stripe_energy(kind, profile, t, kappa=1.0, quad_points=200):
    """∫_{-ℓ}^{ℓ} regularizer density dx2 by Gauss-Legendre quadrature."""
    return float(stripe_energies(kind, profile, [t], kappa, quad_points)[0])


def stripe_energies(kind, profile, times, kappa=1.0, quad_points=200):
    """Vectorized :func:`stripe_energy` over an array of times."""
    x, w = _gauss(profile, quad_points)
    times = np.asarray(times, dtype=float)[:, None]
    return regularizer_density(kind, profile, times, x, kappa) @ w


def mean_rate_gradient(profile, t):
    """(1/2ℓ)∫ Π̇ dx2, evaluated from the boundary values of ḟ = g."""
    del t  # ḟ = g does not depend on t
    ell = profile.ell
    M = np.zeros((2, 2))
    M[0, 1] = (profile.g(ell) - profile.g(-ell)) / (2.0 * ell)
    return M


def mean_slip_gradient(profile, t):
    """(1/2ℓ)∫ ∂_2 f dx2 = (f(t, ℓ) - f(t, -ℓ))/(2ℓ)."""
    ell = profile.ell
    return float((profile.slip(t, ell) - profile.slip(t, -ell)) / (2.0 * ell))


# -- audit ---------------------------------------------------------------------

@dataclass
class AuditEntry:
    profile: SlipProfile
    kind: RegularizerKind
    energies: np.ndarray
    exponent: float
    classification: str

    def as_dict(self):
        return {"profile": self.profile.label, "kind": self.kind.value,
                "classification": self.classification,
                "exponent": None if not np.isfinite(self.exponent) else round(float(self.exponent), 6),
                "max_energy": float(np.max(self.energies))}


@dataclass
class AuditReport:
    t: np.ndarray
    kappa: float
    entries: list = field(default_factory=list)

    def entry(self, kind, profile=None):
        kind = RegularizerKind(kind)
        for e in self.entries:
            if e.kind is kind and (profile is None or e.profile == profile):
                return e
        raise KeyError(kind)

    def summary(self):
        return {"kappa": self.kappa, "t_min": float(self.t[0]), "t_max": float(self.t[-1]),
                "entries": [e.as_dict() for e in self.entries]}


def trailing_decade(t):
    t = np.asarray(t, dtype=float)
    return t >= t[-1] / 10.0


def fit_exponent(t, energies):
    """Least-squares slope of log E against log t over the trailing decade."""
    sel = trailing_decade(t) & (np.asarray(energies) > 0)
    if np.count_nonzero(sel) < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(t[sel]), np.log(np.asarray(energies)[sel]), 1)
    return float(slope)


def classify(t, energies):
    """Return (classification, exponent) with classes vanishes / bounded / grows."""
    energies = np.asarray(energies, dtype=float)
    if np.max(np.abs(energies)) <= VANISH_TOL:
        return "vanishes", float("nan")
    tail = energies[trailing_decade(t)]
    drift = (tail.max() - tail.min()) / np.max(np.abs(tail))
    exponent = fit_exponent(t, energies)
    if drift <= BOUNDED_DRIFT:
        return "bounded", exponent
    return "grows", exponent


def default_time_grid(t_max=100.0, points=41):
    """Logarithmic grid spanning two decades up to t_max."""
    return np.logspace(np.log10(t_max) - 2.0, np.log10(t_max), points)


def audit(profiles, kinds=ALL_KINDS, t_grid=None, kappa=1.0, quad_points=200):
    t = default_time_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) <= 0) or t[0] <= 0:
        raise ValueError("t_grid must be positive and strictly increasing")
    if t[-1] / t[0] < 100.0 * (1 - 1e-12):
        raise ValueError("t_grid must span at least two decades")
    if isinstance(profiles, SlipProfile):
        profiles = [profiles]
    report = AuditReport(t=t, kappa=float(kappa))
    for prof in profiles:
        for kind in kinds:
            kind = RegularizerKind(kind)
            E = stripe_energies(kind, prof, t, kappa, quad_points)
            cls, expo = classify(t, E)
            report.entries.append(AuditEntry(prof, kind, E, expo, cls))
    return report


def write_audit_csv(report, path):
    """Columns: t, then one energy column per (profile, kind)."""
    labels = {e.profile.label for e in report.entries}
    several = len(labels) > 1
    header = ["t"] + [(f"{e.profile.label}:" if several else "") + e.kind.value for e in report.entries]
    cols = [report.t] + [e.energies for e in report.entries]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def write_audit_summary(report, path, extra=None):
    data = report.summary()
    if extra:
        data.update(extra)
    with open(path, "w") as fh:
        fh.write(json.dumps(data, indent=2) + "\n")
