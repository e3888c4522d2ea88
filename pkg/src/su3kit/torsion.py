"""Intrinsic torsion of SU(3)-structures and coupled-structure diagnostics.

The five torsion components are extracted from (d omega, d psi+, d psi-):
the scalars via wedge pairings against the volume, w4 by inverting the
Lefschetz isomorphism on 1-forms, w5 by a Gram solve against the 1-form
module alpha ^ psi+, and w2+/-, w3 as least-squares solutions of the
residual systems constrained to their irreducible modules.  Correctness is
enforced by reconstructing the three derivatives, never by trusting any
single closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coframe import exterior_d
from .errors import ReconstructionError, ValidationError
from .forms import (
    KForm,
    basis,
    hodge_star,
    lefschetz_solve,
    pullback,
    pullback_matrix,
    wedge,
    wedge_matrix,
    wedge_solve,
)
from .stable import complete_su3

RECONSTRUCTION_TOL = 1e-8
COUPLED_C_REL = 1e-8
PROPORTIONALITY_REL = 1e-8
CLASS_TOL = 1e-9


def _null_space(mat, rtol=1e-9):
    _, s, vt = np.linalg.svd(mat, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * max(smax, 1e-300)))
    return vt[rank:].T


def primitive_11_basis(omega, j):
    """Orthonormal-ish basis of {beta : J beta = beta, beta ^ omega^2 = 0}."""
    p2 = pullback_matrix(j.matrix, 2)
    omega2 = wedge(omega, omega)
    trace_row = wedge_matrix(omega2, 2)  # 1 x 15
    constraints = np.vstack([p2 - np.eye(15), trace_row])
    return _null_space(constraints)


def primitive_21_basis(omega, psi_plus, psi_minus):
    """Basis of the 12-dim module {rho : rho^omega = 0, rho^psi+- = 0}."""
    constraints = np.vstack(
        [
            wedge_matrix(omega, 3),       # 6 rows
            wedge_matrix(psi_plus, 3),    # 1 row
            wedge_matrix(psi_minus, 3),   # 1 row
        ]
    )
    return _null_space(constraints)


def _constrained_fit(basis_cols, map_matrix, target):
    """min_c || map_matrix @ (basis_cols @ c) - target ||; returns (vec, defect)."""
    design = map_matrix @ basis_cols
    c, *_ = np.linalg.lstsq(design, target, rcond=None)
    vec = basis_cols @ c
    defect = float(np.linalg.norm(design @ c - target))
    return vec, defect


@dataclass(frozen=True)
class TorsionForms:
    """Components of (d omega, d psi+, d psi-) in irreducible SU(3)-modules."""

    w1_plus: float
    w1_minus: float
    w2_plus: KForm
    w2_minus: KForm
    w3: KForm
    w4: KForm
    w5: KForm
    diagnostics: dict = field(default_factory=dict, compare=False)

    def component_norms(self):
        return {
            "w1_plus": abs(self.w1_plus),
            "w1_minus": abs(self.w1_minus),
            "w2_plus": self.w2_plus.coeff_norm,
            "w2_minus": self.w2_minus.coeff_norm,
            "w3": self.w3.coeff_norm,
            "w4": self.w4.coeff_norm,
            "w5": self.w5.coeff_norm,
        }


def torsion_forms(S, alg, tol=RECONSTRUCTION_TOL):
    """Extract the intrinsic torsion of a structure over a coframe algebra."""
    h = S.metric
    omega, psi_p, psi_m = S.omega, S.psi_plus, S.psi_minus
    d_omega = exterior_d(omega, alg)
    d_psi_p = exterior_d(psi_p, alg)
    d_psi_m = exterior_d(psi_m, alg)
    omega2 = wedge(omega, omega)

    def star_scalar(top):
        return hodge_star(top, h).coeffs[0]

    w1p = star_scalar(wedge(d_psi_p, omega)) / 6.0
    w1m = star_scalar(wedge(d_psi_m, omega)) / 6.0
    w1m_alt = -star_scalar(wedge(d_omega, psi_m)) / 6.0

    # w4 from d(omega) ^ omega = w4 ^ omega^2 (Lambda^1 -> Lambda^5)
    w4 = wedge_solve(wedge(d_omega, omega), omega2, 1)

    # w5 from the pairing of d(psi+) against the module {alpha ^ psi+}
    psi_cols = wedge_matrix(psi_p, 1)  # 15 x 6, columns e^i ^ psi+
    g4 = h.gram(4)
    gram = psi_cols.T @ g4 @ psi_cols
    rhs = psi_cols.T @ g4 @ d_psi_p.coeffs
    w5 = KForm(6, 1, np.linalg.solve(gram, rhs))

    # w2+/- as constrained least squares on the 4-form residuals
    p11 = primitive_11_basis(omega, S.j)
    lef = wedge_matrix(omega, 2)
    res_p = d_psi_p.coeffs - w1p * omega2.coeffs - wedge(w5, psi_p).coeffs
    w2p_vec, w2p_defect = _constrained_fit(p11, lef, -res_p)
    w2p = KForm(6, 2, w2p_vec)

    jw5 = pullback(S.j, w5)
    res_m = d_psi_m.coeffs - w1m * omega2.coeffs - wedge(jw5, psi_p).coeffs
    w2m_vec, w2m_defect = _constrained_fit(p11, lef, -res_m)
    w2m = KForm(6, 2, w2m_vec)

    # w3 as the projection of the d(omega) residual onto primitive (2,1)+(1,2)
    p21 = primitive_21_basis(omega, psi_p, psi_m)
    res_o = (
        d_omega.coeffs
        + 1.5 * w1m * psi_p.coeffs
        - 1.5 * w1p * psi_m.coeffs
        - wedge(w4, omega).coeffs
    )
    c3, *_ = np.linalg.lstsq(p21, res_o, rcond=None)
    w3 = KForm(6, 3, p21 @ c3)
    w3_defect = float(np.linalg.norm(p21 @ c3 - res_o))

    # reconstruction oracle
    rec_o = (
        -1.5 * w1m * psi_p.coeffs
        + 1.5 * w1p * psi_m.coeffs
        + w3.coeffs
        + wedge(w4, omega).coeffs
    )
    rec_p = w1p * omega2.coeffs - wedge(w2p, omega).coeffs + wedge(w5, psi_p).coeffs
    rec_m = w1m * omega2.coeffs - wedge(w2m, omega).coeffs + wedge(jw5, psi_p).coeffs
    scale = max(
        d_omega.coeff_norm,
        d_psi_p.coeff_norm,
        d_psi_m.coeff_norm,
        omega.coeff_norm,
        1.0,
    )
    residual = max(
        np.linalg.norm(rec_o - d_omega.coeffs),
        np.linalg.norm(rec_p - d_psi_p.coeffs),
        np.linalg.norm(rec_m - d_psi_m.coeffs),
    )
    if residual > tol * scale:
        raise ReconstructionError(
            f"torsion reconstruction residual {residual:.3e} exceeds "
            f"{tol:.1e} * {scale:.3e}"
        )
    if abs(w1m - w1m_alt) > tol * max(abs(w1m), abs(w1m_alt), scale):
        raise ReconstructionError(
            f"w1- routes disagree: {w1m:.12g} (d psi-) vs {w1m_alt:.12g} (d omega)"
        )

    return TorsionForms(
        w1_plus=float(w1p),
        w1_minus=float(w1m),
        w2_plus=w2p,
        w2_minus=w2m,
        w3=w3,
        w4=w4,
        w5=w5,
        diagnostics={
            "reconstruction_residual": residual,
            "w1_minus_route_gap": abs(w1m - w1m_alt),
            "w2_plus_module_defect": w2p_defect,
            "w2_minus_module_defect": w2m_defect,
            "w3_module_defect": w3_defect,
        },
    )


@dataclass(frozen=True)
class TorsionClasses:
    calabi_yau: bool
    nearly_kahler: bool
    half_flat: bool
    coupled: bool
    double_half_flat: bool
    label: str


def classify(torsion, tol=CLASS_TOL):
    """Torsion-class flags from the vanishing pattern of the components.

    Flags are inclusive (coupled implies half-flat, nearly Kahler implies
    coupled); ``label`` names the most specific class.
    """
    norms = torsion.component_norms()
    scale = max(max(norms.values()), 1e-30)

    def gone(key):
        return norms[key] <= tol * scale

    all_zero = scale <= 1e-12 or all(gone(k) for k in norms)
    half_flat = all(gone(k) for k in ("w1_plus", "w2_plus", "w4", "w5"))
    w1m_alive = not gone("w1_minus")
    coupled = half_flat and gone("w3") and w1m_alive
    nearly_kahler = coupled and gone("w2_minus")
    double_half_flat = half_flat and gone("w1_minus") and gone("w2_minus")

    if all_zero:
        label = "Calabi-Yau"
    elif nearly_kahler:
        label = "nearly Kahler"
    elif coupled:
        label = "coupled"
    elif double_half_flat:
        label = "double half-flat"
    elif half_flat:
        label = "half-flat"
    else:
        label = "generic"

    return TorsionClasses(
        calabi_yau=bool(all_zero),
        nearly_kahler=bool(nearly_kahler),
        half_flat=bool(half_flat),
        coupled=bool(coupled),
        double_half_flat=bool(double_half_flat),
        label=label,
    )


@dataclass(frozen=True)
class CoupledReport:
    is_coupled: bool
    c: float | None = None
    w2_norm_sq: float | None = None
    dw2_proportional: bool | None = None
    dw2_factor: float | None = None
    dw2_residual: float | None = None
    susy_inequality: bool | None = None
    scal: float | None = None
    einstein_residual: float | None = None
    einstein_conclusive: bool | None = None


def scalar_curvature(w1_minus, w2_norm_sq):
    """Scal(h) = (15/2) (w1-)^2 - (1/2) |w2-|^2 for a coupled structure."""
    return 7.5 * w1_minus**2 - 0.5 * w2_norm_sq


def einstein_defect(w1_minus, w2, omega, metric):
    """*(w2 ^ w2) - w1- w2 + |w2|^2/3 omega; zero iff the metric is Einstein
    (conclusive only under d(w2-) proportional to psi+)."""
    w2_sq = wedge(w2, w2)
    return (
        hodge_star(w2_sq, metric)
        - w1_minus * w2
        + (metric.inner(w2, w2) / 3.0) * omega
    )


def coupled_report(S, alg, tol=RECONSTRUCTION_TOL):
    """Coupled diagnostics: constant, d(w2-) proportionality, SUSY bound,
    scalar curvature, Einstein residual."""
    h = S.metric
    torsion = torsion_forms(S, alg)
    classes = classify(torsion)
    d_omega = exterior_d(S.omega, alg)
    c = -1.5 * torsion.w1_minus
    d_scale = np.sqrt(max(h.inner(d_omega, d_omega), 0.0))
    psi_scale = np.sqrt(max(h.inner(S.psi_plus, S.psi_plus), 0.0))
    c_alive = abs(c) > COUPLED_C_REL * d_scale / max(psi_scale, 1e-30)
    if not (classes.coupled and c_alive):
        return CoupledReport(is_coupled=False)

    w2 = torsion.w2_minus
    w2_norm_sq = h.inner(w2, w2)
    dw2 = exterior_d(w2, alg)
    psi_sq = h.inner(S.psi_plus, S.psi_plus)
    factor = h.inner(dw2, S.psi_plus) / psi_sq
    fit_residual = dw2 - factor * S.psi_plus
    dw2_norm = np.sqrt(max(h.inner(dw2, dw2), 0.0))
    residual = np.sqrt(max(h.inner(fit_residual, fit_residual), 0.0))
    proportional = residual <= PROPORTIONALITY_REL * max(dw2_norm, 1e-30)

    susy = 3.0 * torsion.w1_minus**2 >= w2_norm_sq - 1e-12 * max(w2_norm_sq, 1.0)
    defect = einstein_defect(torsion.w1_minus, w2, S.omega, h)
    return CoupledReport(
        is_coupled=True,
        c=float(c),
        w2_norm_sq=float(w2_norm_sq),
        dw2_proportional=bool(proportional),
        dw2_factor=float(factor),
        dw2_residual=float(residual / max(dw2_norm, 1e-30)),
        susy_inequality=bool(susy),
        scal=float(scalar_curvature(torsion.w1_minus, w2_norm_sq)),
        einstein_residual=float(np.sqrt(max(h.inner(defect, defect), 0.0))),
        einstein_conclusive=bool(proportional),
    )


# ---------------------------------------------------------------------------
# fixtures and closed forms


def twistor_fixture(sigma):
    """Adapted-frame torsion of the twistor family:
    w1- = 2/3 (sigma+2), w2- = -4/3 (sigma-1) (e12 + e34 - 2 e56)."""
    w1m = 2.0 / 3.0 * (sigma + 2.0)
    w2m = KForm.from_terms(
        6,
        2,
        [
            (-4.0 / 3.0 * (sigma - 1.0), (1, 2)),
            (-4.0 / 3.0 * (sigma - 1.0), (3, 4)),
            (8.0 / 3.0 * (sigma - 1.0), (5, 6)),
        ],
    )
    return w1m, w2m


def torsion_scal_einstein(w1_minus, w2, omega, psi_plus, metric):
    """(Scal, Einstein residual) from coupled torsion data.

    Rejects w2 outside the primitive (1,1) module.
    """
    from .stable import almost_complex

    j = almost_complex(psi_plus)
    scale = max(w2.coeff_norm, 1e-30)
    type_defect = np.abs(pullback(j, w2).coeffs - w2.coeffs).max()
    trace_defect = wedge(w2, wedge(omega, omega)).coeff_norm
    if type_defect > 1e-8 * scale or trace_defect > 1e-8 * scale * omega.coeff_norm**2:
        raise ValidationError(
            f"w2 is not primitive (1,1): type defect {type_defect:.3e}, "
            f"trace defect {trace_defect:.3e}"
        )
    scal = scalar_curvature(w1_minus, metric.inner(w2, w2))
    defect = einstein_defect(w1_minus, w2, omega, metric)
    return float(scal), float(np.sqrt(max(metric.inner(defect, defect), 0.0)))


def rescale(S, r):
    """Rescaled structure (r^2 omega, r^3 psi+); coupled constants map to c/r."""
    if r == 0:
        raise ValidationError("rescale factor must be nonzero")
    return complete_su3(r**2 * S.omega, r**3 * S.psi_plus)


SUSY_SIGMA_LO = (10.0 - 6.0 * np.sqrt(2.0)) / 7.0
SUSY_SIGMA_HI = (10.0 + 6.0 * np.sqrt(2.0)) / 7.0


def susy_inequality_range_check(sigma):
    """Closed-form range of 3 (w1-)^2 >= |w2-|^2 on the twistor family."""
    return bool(SUSY_SIGMA_LO <= sigma <= SUSY_SIGMA_HI)
