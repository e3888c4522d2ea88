"""Multistart numerical search for coupled structures on a coframe algebra.

The parametrization follows the nonexistence-proof setup: omega ranges over
the 15 two-form coefficients, psi+ := c d(omega) for a scalar c bounded away
from zero, which makes d(psi+) = 0 and d(omega) proportional to psi+
automatic.  The objective is a sum of squared residuals (compatibility,
(1,1)-type defect, normalization solvability) plus hinge penalties for the
open-cone constraints (stability, metric positivity, parameter box), and
optionally the d(w2-) proportionality defect.  It vanishes exactly on valid
coupled structures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .coframe import exterior_d
from .errors import EngineError, ValidationError
from .forms import KForm, wedge_coeffs, wedge_matrix
from .stable import complete_su3, k_matrix_coeffs, normalization_scale, omega_matrix
from .torsion import classify, coupled_report, torsion_forms

PENALTY_WEIGHT = 1e3
# hinge threshold: constraints must clear their boundary by this margin
# before the hinge releases.  1e-2 keeps the feasible interior attractive;
# with much smaller margins the minimizer settles on boundary artifacts
# (semi-definite metrics, orientation-degenerate pairs) that never certify.
HINGE_EPS = 1e-2
CERTIFY_TOL = 1e-8

_PAIRS = [(i, j) for i in range(6) for j in range(i + 1, 6)]
_ROW_I = np.array([p[0] for p in _PAIRS])
_ROW_J = np.array([p[1] for p in _PAIRS])


def _pullback2(jmat):
    """Induced action on 2-form coefficients (15x15 of 2x2 minors)."""
    a1 = jmat[np.ix_(_ROW_I, _ROW_I)]
    a2 = jmat[np.ix_(_ROW_J, _ROW_J)]
    b1 = jmat[np.ix_(_ROW_I, _ROW_J)]
    b2 = jmat[np.ix_(_ROW_J, _ROW_I)]
    # out[pJ, pI] = det(jmat[[i1,i2],[j1,j2]]) with rows from the input index
    return (a1 * a2 - b1 * b2).T


@dataclass(frozen=True)
class SearchProblem:
    algebra: object
    require_dw2_prop: bool = False
    starts: int = 50
    seed: int = 0
    box: float = 3.0
    c_min: float = 0.05
    c_max: float = 3.0

    def __post_init__(self):
        if self.starts < 1:
            raise ValidationError("starts must be >= 1")
        if not (np.isfinite(self.box) and self.box > 0):
            raise ValidationError("box bound must be finite and positive")
        if not (0 < self.c_min < self.c_max < np.inf):
            raise ValidationError("need 0 < c_min < c_max < inf")


@dataclass
class SearchResult:
    best_residual: float
    candidate: dict | None
    certified: bool
    feasible_point_seen: bool
    reason: str
    starts: list = field(default_factory=list)
    certification: dict | None = None


class _Objective:
    """Residual blocks and penalties for x = (omega coefficients, c).

    Every branch keeps whatever residuals are still computable, so the
    landscape stays informative outside the feasible cone; the open-cone
    constraints (stability, positivity, nondegeneracy, normalizability)
    enter as squared hinges with threshold HINGE_EPS.
    """

    def __init__(self, prob):
        self.prob = prob
        self.d2 = prob.algebra.d_matrix(2)
        self.abelian = not np.any(self.d2)
        self.saw_stable = False
        # 21 smooth + 21 hinge residuals (+ 20 for the d(w2-) block)
        self.length = 42 + (20 if prob.require_dw2_prop else 0)
        self._hinge_scale = np.sqrt(PENALTY_WEIGHT)

    def pieces(self, x):
        """(residual vector of fixed length, infeasibility constant)."""
        prob = self.prob
        omega = x[:15]
        c = x[15]
        dom = self.d2 @ omega
        psi = c * dom
        omega_norm = np.linalg.norm(omega)
        psi_norm = np.linalg.norm(psi)

        w = self._hinge_scale
        hinges = np.zeros(21)
        # parameter box (sampling bounds double as soft search bounds)
        hinges[:15] = w * np.maximum(np.abs(x[:15]) - prob.box, 0.0)
        hinges[15] = w * (
            max(0.0, abs(c) - prob.c_max) + max(0.0, prob.c_min - abs(c))
        )
        # keep away from d(omega) = 0, where psi+ = c d(omega) degenerates
        dscale = np.linalg.norm(dom) / max(omega_norm, 1e-30)
        hinges[16] = w * max(0.0, 1e-3 - dscale)

        if psi_norm < 1e-12 or omega_norm < 1e-12:
            return self._assemble(hinges), 1.0

        compat = wedge_coeffs(6, 2, 3, omega, psi) / (omega_norm * psi_norm)

        k = k_matrix_coeffs(psi)
        lam = np.trace(k @ k) / 6.0
        lam_hat = lam / psi_norm**4
        hinges[17] = w * max(0.0, lam_hat + HINGE_EPS)
        if lam_hat >= -HINGE_EPS:
            # outside the stable cone J does not exist; the constant keeps
            # these points above every feasible one
            return self._assemble(hinges, compat=compat), 1.0
        self.saw_stable = True

        jmat = -k / np.sqrt(-lam)
        type_defect = (_pullback2(jmat) @ omega - omega) / omega_norm

        h = _omega_matrix_fast(omega) @ jmat
        h = 0.5 * (h + h.T)
        eigs = np.linalg.eigvalsh(h)
        pd_hinge = max(0.0, -(eigs[0] / max(abs(eigs).max(), 1e-30)) + HINGE_EPS)
        hinges[18] = w * pd_hinge

        omega3 = wedge_coeffs(6, 2, 4, omega, wedge_coeffs(6, 2, 2, omega, omega))[0]
        omega3_hat = abs(omega3) / omega_norm**3
        hinges[19] = w * max(0.0, 1e-3 - omega3_hat)

        ratio = None
        if omega3_hat > 1e-6:
            # normalization is solvable by a positive rescale of psi+ iff
            # (psi+ ^ psi-) / ((2/3) omega^3) > 0; no smooth defect remains
            psi_m = _pullback3(jmat) @ psi
            ratio = wedge_coeffs(6, 3, 3, psi, psi_m)[0] / (2.0 / 3.0 * omega3)
            hinges[20] = w * max(0.0, HINGE_EPS - ratio)

        dw2 = None
        if prob.require_dw2_prop and pd_hinge == 0.0 and ratio is not None and ratio > 0:
            dw2 = self._dw2_block(omega, psi, psi_m, omega3)
        return self._assemble(hinges, compat=compat, type_defect=type_defect, dw2=dw2), 0.0

    def _assemble(self, hinges, compat=None, type_defect=None, dw2=None):
        """Fixed layout [compat(6), type(15), dw2(20)?, hinges(21)];
        blocks that are not computable at x are held at 1."""
        parts = [
            compat if compat is not None else np.ones(6),
            type_defect if type_defect is not None else np.ones(15),
        ]
        if self.prob.require_dw2_prop:
            parts.append(dw2 if dw2 is not None else np.ones(20))
        parts.append(hinges)
        return np.concatenate(parts)

    def _dw2_block(self, omega, psi, psi_m, omega3):
        """Relative defect of d(w2-) against the span of psi+.

        w2- is recovered from the d(psi-) residual by Lefschetz inversion;
        at a valid coupled point this is exact (w5 = 0), which keeps the
        zero set of the block honest.
        """
        d3 = self.prob.algebra.d_matrix(3)
        d_psi_m = d3 @ psi_m
        lef = wedge_matrix(KForm(6, 2, omega), 2)
        # d(psi-) ^ omega = w1- omega^3 (the other modules wedge to zero)
        top = wedge_coeffs(6, 4, 2, d_psi_m, omega)[0]
        w1m = top / omega3
        omega2 = wedge_coeffs(6, 2, 2, omega, omega)
        try:
            w2 = np.linalg.solve(lef, w1m * omega2 - d_psi_m)
        except np.linalg.LinAlgError:
            return np.ones(20)
        dw2 = self.d2 @ w2
        kfit = (dw2 @ psi) / (psi @ psi)
        resid = dw2 - kfit * psi
        return resid / max(np.linalg.norm(dw2), 1e-12)

    def smooth_vector(self, x):
        vec, _ = self.pieces(x)
        return vec

    def __call__(self, x):
        vec, const = self.pieces(x)
        return const + float(vec @ vec)


def _omega_matrix_fast(omega):
    w = np.zeros((6, 6))
    w[_ROW_I, _ROW_J] = omega
    w[_ROW_J, _ROW_I] = -omega
    return w


_TRIPLES = np.array(
    [(i, j, k) for i in range(6) for j in range(i + 1, 6) for k in range(j + 1, 6)]
)
# rows index the input monomial, columns the output monomial
_TR = [_TRIPLES[:, a][:, None] for a in range(3)]
_TC = [_TRIPLES[:, a][None, :] for a in range(3)]


def _pullback3(jmat):
    """Induced action on 3-form coefficients (20x20 of 3x3 minors)."""
    m = [[jmat[_TR[a], _TC[b]] for b in range(3)] for a in range(3)]
    det = (
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    )
    return det.T


def objective(x, prob):
    """Scalar objective; zero exactly on valid coupled structures
    (plus d(w2-) proportionality when the problem requires it)."""
    return _Objective(prob)(np.asarray(x, dtype=float))


def canonicalize(omega_coeffs, c):
    """Fix the rescaling gauge (r^2 omega, r c) by ||omega|| = sqrt(3)."""
    omega_coeffs = np.asarray(omega_coeffs, dtype=float)
    r = (np.sqrt(3.0) / np.linalg.norm(omega_coeffs)) ** 0.5
    return r**2 * omega_coeffs, r * c


def certify(candidate, prob, tol=CERTIFY_TOL):
    """Validate a candidate end to end: completion after the normalization
    rescale, torsion extraction, classification, and (optionally) the
    d(w2-) proportionality test."""
    omega = KForm(6, 2, np.asarray(candidate["omega"], dtype=float))
    c = float(candidate["c"])
    psi = c * exterior_d(omega, prob.algebra)
    try:
        scale = normalization_scale(omega, psi)
        S = complete_su3(omega, scale * psi, tol=tol)
        torsion = torsion_forms(S, prob.algebra)
        classes = classify(torsion, tol=tol)
        report = coupled_report(S, prob.algebra)
    except EngineError as exc:
        return {
            "certified": False,
            "reason": f"{type(exc).__name__}: {exc}",
            "classes": None,
            "coupled": None,
        }
    certified = classes.coupled and report.is_coupled
    reason = "coupled structure validated" if certified else "not coupled"
    if certified and prob.require_dw2_prop and not report.dw2_proportional:
        certified = False
        reason = (
            f"coupled but d(w2-) not proportional to psi+ "
            f"(relative residual {report.dw2_residual:.3e})"
        )
    return {
        "certified": bool(certified),
        "reason": reason,
        "classes": classes,
        "coupled": report,
        "structure_coupled_constant": report.c if report.is_coupled else None,
    }


def _sample(rng, prob, size):
    xs = np.empty((size, 16))
    xs[:, :15] = rng.uniform(-prob.box, prob.box, size=(size, 15))
    signs = np.where(rng.random(size) < 0.5, 1.0, -1.0)
    xs[:, 15] = signs * rng.uniform(prob.c_min, prob.c_max, size=size)
    return xs


def search(prob, nm_maxfev=800, probes=300, polish_threshold=25.0):
    """Multistart local descent for coupled structures.

    Each start draws ``probes`` random points in the box and runs
    Nelder-Mead from the best one, then polishes with Levenberg-Marquardt
    on the residual vector.  Deterministic for a fixed seed: per-start
    seeds come from a split SeedSequence, so results do not depend on
    execution order.  Nonexistence is only ever reported as a residual
    floor over the starts, never as a proof.
    """
    obj = _Objective(prob)
    if obj.abelian:
        return SearchResult(
            best_residual=float("inf"),
            candidate=None,
            certified=False,
            feasible_point_seen=False,
            reason=(
                "infeasible: d(omega) = 0 for every omega on an abelian "
                "algebra, so psi+ = c d(omega) can never be stable "
                "(stability penalty floor)"
            ),
        )

    seeds = np.random.SeedSequence(prob.seed).spawn(prob.starts)
    log = []
    best = None  # (residual, start_index, x)
    for start_idx, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        candidates = _sample(rng, prob, probes)
        values = [obj(x) for x in candidates]
        x0 = candidates[int(np.argmin(values))]

        res = optimize.minimize(
            obj,
            x0,
            method="Nelder-Mead",
            options={
                "maxfev": nm_maxfev,
                "xatol": 1e-12,
                "fatol": 1e-14,
                "adaptive": True,
            },
        )
        x_best, f_best = res.x, float(res.fun)
        for _ in range(3):
            if f_best >= polish_threshold or f_best < 1e-28:
                break
            try:
                lsq = optimize.least_squares(
                    obj.smooth_vector,
                    x_best,
                    method="lm",
                    xtol=1e-15,
                    ftol=1e-15,
                    gtol=1e-15,
                    max_nfev=4000,
                )
            except Exception:
                break
            f_lsq = obj(lsq.x)
            if f_lsq < f_best:
                x_best, f_best = lsq.x, float(f_lsq)
            else:
                break
        residual = float(np.sqrt(max(f_best, 0.0)))
        log.append(
            {
                "start": start_idx,
                "residual": residual,
                "nm_evals": int(res.nfev),
                "converged": bool(res.success),
            }
        )
        if best is None or (residual, start_idx) < (best[0], best[1]):
            best = (residual, start_idx, x_best.copy())

    residual, start_idx, x = best
    omega_c, c_c = canonicalize(x[:15], x[15])
    candidate = {"omega": omega_c.tolist(), "c": float(c_c), "start": start_idx}
    certification = certify(candidate, prob)
    reason = certification["reason"]
    if not certification["certified"]:
        reason = (
            f"best residual {residual:.3e} over {prob.starts} starts; "
            f"{reason} (evidence-grade floor, not a proof of nonexistence)"
        )
    return SearchResult(
        best_residual=residual,
        candidate=candidate,
        certified=certification["certified"],
        feasible_point_seen=obj.saw_stable,
        reason=reason,
        starts=log,
        certification=certification,
    )
