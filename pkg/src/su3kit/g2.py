"""G2-structures on I x N built from an SU(3)-structure on N.

The 7D coframe is (e^1, ..., e^7) with e^1 = dt and e^{i+1} the base
coframe e^i; the orientation is dt ^ e^1...e^6.  A slice carries
closed-form coefficient functions of t for the three built-in warpings
(cylinder, cone, sin-cone), so the t-part of d is analytic; central
finite differences with Richardson extrapolation are the fallback for
user-supplied profiles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, cos, sin
from typing import Callable, Optional

import numpy as np

from .coframe import exterior_d
from .errors import ReconstructionError, ValidationError
from .forms import (
    KForm,
    MetricData,
    basis,
    basis_position,
    contract,
    hodge_star,
    star_matrix,
    wedge,
    wedge_matrix,
)
from .torsion import _null_space

G2_RECONSTRUCTION_TOL = 1e-7


@dataclass(frozen=True)
class Profile:
    """Warping data: A = Re F^3, B = Im F^3, F2 = |F|^2 and G, on (t_min, t_max)."""

    name: str
    t_min: float
    t_max: float
    a: Callable[[float], float]
    b: Callable[[float], float]
    f2: Callable[[float], float]
    g: Callable[[float], float]
    da: Optional[Callable[[float], float]] = None
    db: Optional[Callable[[float], float]] = None
    df2: Optional[Callable[[float], float]] = None

    def check_t(self, t):
        if not (self.t_min < t < self.t_max):
            raise ValidationError(
                f"t = {t} outside the {self.name} interval "
                f"({self.t_min}, {self.t_max})"
            )

    def derivatives(self, t, dt_step=1e-4):
        if self.da is not None:
            return self.da(t), self.db(t), self.df2(t)
        return (
            _richardson(self.a, t, dt_step),
            _richardson(self.b, t, dt_step),
            _richardson(self.f2, t, dt_step),
        )


def _richardson(f, t, h):
    # central difference with one Richardson step, O(h^4)
    d1 = (f(t + h) - f(t - h)) / (2 * h)
    d2 = (f(t + 2 * h) - f(t - 2 * h)) / (4 * h)
    return (4 * d1 - d2) / 3


_PROFILES = {
    "cylinder": Profile(
        "cylinder",
        -np.inf,
        np.inf,
        a=lambda t: 1.0,
        b=lambda t: 0.0,
        f2=lambda t: 1.0,
        g=lambda t: 1.0,
        da=lambda t: 0.0,
        db=lambda t: 0.0,
        df2=lambda t: 0.0,
    ),
    "cone": Profile(
        "cone",
        0.0,
        np.inf,
        a=lambda t: t**3,
        b=lambda t: 0.0,
        f2=lambda t: t**2,
        g=lambda t: 1.0,
        da=lambda t: 3 * t**2,
        db=lambda t: 0.0,
        df2=lambda t: 2 * t,
    ),
    "sincone": Profile(
        "sincone",
        0.0,
        np.pi,
        a=lambda t: sin(t) ** 3 * cos(t),
        b=lambda t: sin(t) ** 4,
        f2=lambda t: sin(t) ** 2,
        g=lambda t: 1.0,
        da=lambda t: 3 * sin(t) ** 2 * cos(t) ** 2 - sin(t) ** 4,
        db=lambda t: 4 * sin(t) ** 3 * cos(t),
        df2=lambda t: sin(2 * t),
    ),
}


def builtin_profile(name):
    try:
        return _PROFILES[name]
    except KeyError:
        known = ", ".join(sorted(_PROFILES))
        raise ValidationError(f"unknown profile {name!r} (known: {known})")


# ---------------------------------------------------------------------------
# 6D -> 7D plumbing


def inject(a):
    """A base k-form as a 7D form (indices shifted by one; no dt factor)."""
    out = np.zeros(comb(7, a.degree))
    pos7 = basis_position(7, a.degree)
    for idx6, c in zip(basis(6, a.degree), a.coeffs):
        out[pos7[tuple(i + 1 for i in idx6)]] = c
    return KForm(7, a.degree, out)


def dt_wedge(a7):
    """dt ^ a for a 7D form without dt factor (dt is the lowest index)."""
    return wedge(KForm.monomial(7, (1,)), a7)


def dt_form(coeff=1.0):
    return KForm.monomial(7, (1,), coeff)


@dataclass(frozen=True)
class G2Slice:
    t: float
    phi: KForm
    metric: MetricData
    star_phi: KForm
    profile: Profile


@dataclass(frozen=True)
class G2Torsion:
    tau0: float
    tau1: KForm
    tau2: KForm
    tau3: KForm
    diagnostics: dict = field(default_factory=dict, compare=False)

    def component_norms(self):
        return {
            "tau0": abs(self.tau0),
            "tau1": self.tau1.coeff_norm,
            "tau2": self.tau2.coeff_norm,
            "tau3": self.tau3.coeff_norm,
        }


@dataclass(frozen=True)
class G2Classes:
    parallel: bool
    calibrated: bool
    locally_conformal_calibrated: bool
    integrable: bool
    label: str


def g2_slice(S, profile, t):
    """phi = Re(F^3 Psi) + G |F|^2 omega ^ dt at parameter t, with its metric
    G^2 dt^2 + |F|^2 h and Hodge dual."""
    if isinstance(profile, str):
        profile = builtin_profile(profile)
    profile.check_t(t)
    a, b, f2, g = profile.a(t), profile.b(t), profile.f2(t), profile.g(t)
    phi = (
        a * inject(S.psi_plus)
        - b * inject(S.psi_minus)
        + g * f2 * dt_wedge(inject(S.omega))
    )
    matrix = np.zeros((7, 7))
    matrix[0, 0] = g**2
    matrix[1:, 1:] = f2 * S.metric.matrix
    vol = KForm(7, 7, [g * f2**3 * S.metric.volume.coeffs[0]])
    metric = MetricData(matrix, volume=vol)
    return G2Slice(
        t=float(t),
        phi=phi,
        metric=metric,
        star_phi=hodge_star(phi, metric),
        profile=profile,
    )


def metric_from_phi(phi):
    """Recover (g, dV) from a definite 3-form via
    g(X, Y) dV = 1/6 i_X phi ^ i_Y phi ^ phi."""
    n = phi.dim
    bmat = np.zeros((n, n))
    eye = np.eye(n)
    contractions = [contract(eye[i], phi) for i in range(n)]
    for i in range(n):
        for j in range(i, n):
            top = wedge(wedge(contractions[i], contractions[j]), phi)
            bmat[i, j] = bmat[j, i] = top.coeffs[0] / 6.0
    det_b = np.linalg.det(bmat)
    if det_b <= 0:
        raise ValidationError("3-form does not induce a positive metric")
    vol = det_b ** (1.0 / 9.0)
    return bmat / vol, vol


def _d7(S, alg, slice_, dt_step):
    """(d phi, d *phi) on I x N using d = dt ^ d/dt + d_6."""
    profile, t = slice_.profile, slice_.t
    a, b = profile.a(t), profile.b(t)
    f2, g = profile.f2(t), profile.g(t)
    da, db, df2 = profile.derivatives(t, dt_step or 1e-4)

    d_omega = inject(exterior_d(S.omega, alg))
    d_psi_p = inject(exterior_d(S.psi_plus, alg))
    d_psi_m = inject(exterior_d(S.psi_minus, alg))
    psi_p7, psi_m7 = inject(S.psi_plus), inject(S.psi_minus)
    omega2_7 = inject(wedge(S.omega, S.omega))
    d_omega2 = inject(exterior_d(wedge(S.omega, S.omega), alg))

    d_phi = (
        a * d_psi_p
        - b * d_psi_m
        + dt_wedge(da * psi_p7 - db * psi_m7 - g * f2 * d_omega)
    )
    # *phi = (1/2) F2^2 omega^2 + dt ^ (m psi+ + n psi-), m = -G B, n = -G A
    s_dot = 2.0 * f2 * df2
    m, n = -g * b, -g * a
    d_star = 0.5 * f2**2 * d_omega2 + dt_wedge(
        0.5 * s_dot * omega2_7 - m * d_psi_p - n * d_psi_m
    )
    return d_phi, d_star


def lambda2_14_basis(phi, metric):
    """Basis of {beta in Lambda^2 : *(phi ^ beta) = -beta} (14-dimensional)."""
    op = star_matrix(metric, 5) @ wedge_matrix(phi, 2)
    return _null_space(op + np.eye(21), rtol=1e-8)


def g2_torsion(S, alg, profile, t, dt_step=None):
    """Extract (tau0, tau1, tau2, tau3) of the slice G2-structure.

    d phi    = tau0 *phi + 3 tau1 ^ phi + *tau3,
    d *phi   = 4 tau1 ^ *phi + tau2 ^ phi,
    with tau2 in Lambda^2_14 and tau3 in Lambda^3_27; the reconstruction
    identities are the acceptance oracle for the fit.
    """
    slice_ = g2_slice(S, profile, t)
    d_phi, d_star = _d7(S, alg, slice_, dt_step)
    return _extract_torsion(slice_.phi, slice_.star_phi, slice_.metric, d_phi, d_star)


def _extract_torsion(phi, star_phi, metric, d_phi, d_star, tol=G2_RECONSTRUCTION_TOL):
    g4 = metric.gram(4)
    star_norm_sq = star_phi.coeffs @ g4 @ star_phi.coeffs
    tau0 = float((d_phi.coeffs @ g4 @ star_phi.coeffs) / star_norm_sq)

    cols = wedge_matrix(phi, 1)  # 35 x 7, alpha -> alpha ^ phi
    gram = cols.T @ g4 @ cols
    rhs = cols.T @ g4 @ d_phi.coeffs
    tau1 = KForm(7, 1, np.linalg.solve(gram, rhs) / 3.0)

    star_tau3 = d_phi - tau0 * star_phi - wedge(3.0 * tau1, phi)
    tau3 = hodge_star(star_tau3, metric)  # ** = +1 in dim 7

    residual2 = d_star - wedge(4.0 * tau1, star_phi)
    b14 = lambda2_14_basis(phi, metric)
    design = wedge_matrix(phi, 2) @ b14
    coeffs, *_ = np.linalg.lstsq(design, residual2.coeffs, rcond=None)
    tau2 = KForm(7, 2, b14 @ coeffs)

    scale = max(d_phi.coeff_norm, d_star.coeff_norm, phi.coeff_norm, 1.0)
    rec1 = (
        d_phi.coeffs
        - tau0 * star_phi.coeffs
        - wedge(3.0 * tau1, phi).coeffs
        - hodge_star(tau3, metric).coeffs
    )
    rec2 = residual2.coeffs - wedge(tau2, phi).coeffs
    residual = max(np.linalg.norm(rec1), np.linalg.norm(rec2))
    if residual > tol * scale:
        raise ReconstructionError(
            f"G2 torsion reconstruction residual {residual:.3e} "
            f"exceeds {tol:.1e} * {scale:.3e}"
        )

    tau2_type = wedge(phi, tau2)
    tau2_defect = float(
        np.linalg.norm(hodge_star(tau2_type, metric).coeffs + tau2.coeffs)
    )
    tau3_phi = wedge(phi, tau3).coeff_norm
    tau3_star = wedge(star_phi, tau3).coeff_norm
    return G2Torsion(
        tau0=tau0,
        tau1=tau1,
        tau2=tau2,
        tau3=tau3,
        diagnostics={
            "reconstruction_residual": residual,
            "tau2_type_defect": tau2_defect,
            "tau3_phi_pairing": tau3_phi,
            "tau3_star_pairing": tau3_star,
        },
    )


def expected_cone_torsion(c, w2, t):
    """Closed-form cone torsion of a coupled base structure:
    tau1 = (1/t - c/(3t)) dt, tau2 = -t w2-."""
    tau1 = dt_form(1.0 / t - c / (3.0 * t))
    return G2Torsion(
        tau0=0.0,
        tau1=tau1,
        tau2=-t * inject(w2),
        tau3=KForm.zero(7, 3),
    )


def expected_sincone_torsion(c, w2, omega, psi_plus, psi_minus, t):
    """Closed-form sin-cone torsion of a coupled base structure."""
    st, ct = sin(t), cos(t)
    tau0 = (8.0 * c + 4.0) / 7.0
    tau1 = dt_form((1.0 - c / 3.0) * (ct / st))
    tau2 = -(sin(2.0 * t) / 2.0) * inject(w2)
    tau3 = (c - 3.0) / 7.0 * (
        st**4 * inject(psi_minus)
        - st**3 * ct * inject(psi_plus)
        + (4.0 / 3.0) * st**2 * dt_wedge(inject(omega))
    ) - st**2 * dt_wedge(inject(w2))
    return G2Torsion(tau0=tau0, tau1=tau1, tau2=tau2, tau3=tau3)


def g2_classify(torsion, tol=1e-8):
    """Class flags from the vanishing pattern (inclusive, with tolerance)."""
    norms = torsion.component_norms()
    scale = max(max(norms.values()), 1e-30)

    def gone(key):
        return norms[key] <= tol * scale

    all_zero = scale <= 1e-9 or all(gone(k) for k in norms)
    parallel = all_zero
    calibrated = all(gone(k) for k in ("tau0", "tau1", "tau3"))
    lcc = gone("tau0") and gone("tau3")
    integrable = gone("tau2")

    if parallel:
        label = "parallel"
    elif calibrated:
        label = "calibrated"
    elif lcc:
        label = "locally conformal calibrated"
    elif integrable:
        label = "integrable"
    elif not any(gone(k) for k in norms):
        label = "full torsion"
    else:
        label = "generic"
    return G2Classes(
        parallel=bool(parallel),
        calibrated=bool(calibrated),
        locally_conformal_calibrated=bool(lcc),
        integrable=bool(integrable),
        label=label,
    )
