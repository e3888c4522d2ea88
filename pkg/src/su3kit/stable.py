"""Hitchin's stable-form machinery in dimension six.

Everything is computed in the trivialization e^123456 -> 1 of the top
exterior power, so K_rho is a plain 6x6 matrix and lambda(rho) a real
number carrying (e^123456)^{otimes 2} units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CompatibilityError,
    DegenerateOmegaError,
    MetricError,
    NormalizationError,
    StabilityError,
)
from .forms import (
    Endomorphism,
    KForm,
    MetricData,
    basis,
    pullback,
    wedge,
    wedge_coeffs,
)

# lambda < -STABILITY_REL * ||rho||^4 counts as stable of negative type
STABILITY_REL = 1e-10


def k_matrix_coeffs(rho):
    """K_rho as a 6x6 array from the coefficient vector of a 3-form.

    K_rho(v) = A((i_v rho) ^ rho) with A the trivialized inverse of
    v -> i_v e^123456; column i holds K(e_i).
    """
    k = np.empty((6, 6))
    jv, ii, sg, io = _contraction_arrays()
    for i in range(6):
        sel = jv == i
        contracted = np.zeros(15)
        np.add.at(contracted, io[sel], sg[sel] * rho[ii[sel]])
        xi = wedge_coeffs(6, 2, 3, contracted, rho)
        # Lambda^5 lex position of the 5-set missing j is 6 - j (1-based j)
        k[:, i] = _A_SIGNS * xi[::-1]
    return k


_A_SIGNS = np.array([(-1.0) ** (j - 1) for j in range(1, 7)])


def _contraction_arrays():
    from .forms import _contraction_table

    return _contraction_table(6, 3)


def k_endomorphism(rho):
    """Volume-trivialized K_rho; quadratic in rho."""
    _require_three_form(rho)
    return Endomorphism(6, k_matrix_coeffs(rho.coeffs))


def lambda_invariant(rho):
    """lambda(rho) = tr(K_rho^2) / 6; negative exactly on the stable orbit
    that induces an almost complex structure."""
    _require_three_form(rho)
    k = k_matrix_coeffs(rho.coeffs)
    return float(np.trace(k @ k) / 6.0)


def stability_threshold(rho):
    return -STABILITY_REL * max(rho.coeff_norm, 1e-300) ** 4


def almost_complex(rho):
    """J_rho = -K_rho / sqrt(-lambda(rho)); requires lambda(rho) < 0."""
    _require_three_form(rho)
    k = k_matrix_coeffs(rho.coeffs)
    lam = float(np.trace(k @ k) / 6.0)
    if lam >= stability_threshold(rho):
        raise StabilityError(
            f"3-form is not stable of negative type: lambda = {lam:.6e}"
        )
    return Endomorphism(6, -k / np.sqrt(-lam))


@dataclass(frozen=True)
class StableFormReport:
    lambda_: float
    k_matrix: Endomorphism
    j_matrix: Endomorphism | None


def stable_report(rho):
    _require_three_form(rho)
    k = k_matrix_coeffs(rho.coeffs)
    lam = float(np.trace(k @ k) / 6.0)
    j = None
    if lam < stability_threshold(rho):
        j = Endomorphism(6, -k / np.sqrt(-lam))
    return StableFormReport(lam, Endomorphism(6, k), j)


def _require_three_form(rho):
    if rho.dim != 6 or rho.degree != 3:
        raise CompatibilityError("stable-form machinery expects a 3-form in dim 6")


# ---------------------------------------------------------------------------
# SU(3)-structures


@dataclass(frozen=True)
class SU3Structure:
    """Compatible normalized pair (omega, psi_plus) with its derived data."""

    omega: KForm
    psi_plus: KForm
    psi_minus: KForm
    j: Endomorphism
    metric: MetricData
    orientation_flipped: bool = False

    @property
    def volume(self):
        return self.metric.volume

    def residuals(self):
        """Invariant residuals, all ~0 for a valid structure."""
        compat_p = wedge(self.omega, self.psi_plus).coeff_norm
        compat_m = wedge(self.omega, self.psi_minus).coeff_norm
        omega3 = wedge(wedge(self.omega, self.omega), self.omega)
        norm_defect = (
            wedge(self.psi_plus, self.psi_minus).coeffs[0]
            - 2.0 / 3.0 * omega3.coeffs[0]
        )
        jj = self.j.matrix @ self.j.matrix + np.eye(6)
        return {
            "compatibility_plus": compat_p,
            "compatibility_minus": compat_m,
            "normalization": abs(norm_defect),
            "j_squared": float(np.abs(jj).max()),
            "metric_min_eigenvalue": float(self.metric.eigenvalues()[0]),
        }


def omega_matrix(omega):
    """Antisymmetric matrix W with W[i,j] = omega(e_i, e_j)."""
    w = np.zeros((6, 6))
    for (i, j), c in zip(basis(6, 2), omega.coeffs):
        w[i - 1, j - 1] = c
        w[j - 1, i - 1] = -c
    return w


def normalization_scale(omega, psi_plus, psi_minus=None):
    """The s > 0 making (omega, s psi_plus) normalized, if it exists."""
    if psi_minus is None:
        psi_minus = pullback(almost_complex(psi_plus), psi_plus)
    omega3 = wedge(wedge(omega, omega), omega).coeffs[0]
    if omega3 == 0.0:
        raise DegenerateOmegaError("omega^3 = 0: cannot normalize")
    q = wedge(psi_plus, psi_minus).coeffs[0] / (2.0 / 3.0 * omega3)
    if q <= 0:
        raise NormalizationError(
            f"psi+ ^ psi- and (2/3) omega^3 have opposite signs (ratio {q:.3e})"
        )
    return 1.0 / np.sqrt(q)


def complete_su3(omega, psi_plus, tol=1e-9, require_normalized=True):
    """Complete a compatible pair to a full SU(3)-structure.

    Raises a distinct error per failed precondition: degenerate omega,
    incompatibility, instability, indefinite metric, or (when
    ``require_normalized``) a normalization defect together with the
    rescale factor that would repair it.
    """
    if omega.dim != 6 or omega.degree != 2:
        raise CompatibilityError("omega must be a 2-form in dim 6")
    _require_three_form(psi_plus)

    omega3 = wedge(wedge(omega, omega), omega).coeffs[0]
    omega_scale = max(omega.coeff_norm, 1e-300)
    if abs(omega3) <= 6.0 * tol * omega_scale**3:
        raise DegenerateOmegaError(f"omega^3 = {omega3:.3e} ~ 0: omega degenerate")

    compat = wedge(omega, psi_plus).coeff_norm
    if compat > tol * max(omega_scale * psi_plus.coeff_norm, 1e-30):
        raise CompatibilityError(
            f"omega ^ psi+ != 0 (residual {compat:.3e}): pair incompatible"
        )

    j = almost_complex(psi_plus)
    psi_minus = pullback(j, psi_plus)

    h = omega_matrix(omega) @ j.matrix
    asym = np.abs(h - h.T).max()
    if asym > tol * max(np.abs(h).max(), 1e-30):
        raise MetricError(f"omega(., J.) not symmetric (defect {asym:.3e})")
    h = 0.5 * (h + h.T)
    eigenvalues = np.linalg.eigvalsh(h)
    if eigenvalues[0] <= 0 or eigenvalues[0] <= 1e-14 * abs(eigenvalues[-1]):
        raise MetricError(
            f"induced metric not positive definite (min eig {eigenvalues[0]:.3e})"
        )

    # orientation follows omega^3; flag the flip instead of relabeling
    flipped = omega3 < 0
    metric = MetricData(h, orientation=-1.0 if flipped else 1.0)

    norm_ratio = wedge(psi_plus, psi_minus).coeffs[0] / (2.0 / 3.0 * omega3)
    if require_normalized and abs(norm_ratio - 1.0) > tol:
        rescale = 1.0 / np.sqrt(norm_ratio) if norm_ratio > 0 else None
        raise NormalizationError(
            f"psi+ ^ psi- != (2/3) omega^3 (ratio {norm_ratio:.12g}); "
            f"rescaling psi+ by {rescale} would normalize",
            rescale=rescale,
        )

    return SU3Structure(
        omega=omega,
        psi_plus=psi_plus,
        psi_minus=psi_minus,
        j=j,
        metric=metric,
        orientation_flipped=bool(flipped),
    )


def standard_pair():
    """Adapted-frame model: omega = e12+e34+e56, psi+ = e135-e146-e236-e245."""
    omega = KForm.from_terms(6, 2, [(1, (1, 2)), (1, (3, 4)), (1, (5, 6))])
    psi_plus = KForm.from_terms(
        6, 3, [(1, (1, 3, 5)), (-1, (1, 4, 6)), (-1, (2, 3, 6)), (-1, (2, 4, 5))]
    )
    return omega, psi_plus


def standard_psi_minus():
    return KForm.from_terms(
        6, 3, [(1, (1, 3, 6)), (1, (1, 4, 5)), (1, (2, 3, 5)), (-1, (2, 4, 6))]
    )
