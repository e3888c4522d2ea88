"""Hitchin flow and its restricted generalization on a coframe algebra.

Both flows ride the same embedded Dormand-Prince 4(5) stepper.  Every
accepted state is revalidated (stability, metric positivity, half-flatness
or constraint drift); a rejected step halves until either it passes or the
step collapses, which is reported as detected blow-up rather than an error.
psi- is always recomputed from psi+ through the stable-form machinery, so
the constraint manifold is exact and never advected.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .coframe import exterior_d
from .errors import EngineError, IntegrationError, ValidationError
from .forms import KForm, lefschetz_solve, pullback, wedge
from .stable import complete_su3
from .torsion import classify, torsion_forms

TERMINATION_REACHED = "reached_t_end"
TERMINATION_BLOWUP = "blowup_detected"
TERMINATION_INVALID = "structure_invalid"

COEFF_LIMIT = 1e12
MIN_STEP = 1e-12


@dataclass(frozen=True)
class FlowState:
    t: float
    omega: KForm
    psi_plus: KForm


@dataclass(frozen=True)
class RestrictedFlowState:
    t: float
    omega: KForm
    psi_plus: KForm
    psi_minus: KForm
    c: float
    w2: KForm


@dataclass
class FlowTrace:
    states: list
    coupled_residuals: np.ndarray
    c_fit: np.ndarray
    termination: str
    t_final: float
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared embedded RK 4(5) core (Dormand-Prince coefficients)

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


def _rk45(rhs, t0, y0, t_end, tol, validate=None, samples=None):
    """Adaptive DP45 from t0 to t_end.

    ``rhs`` may raise EngineError at infeasible trial points (treated as a
    step rejection).  ``validate`` is called on candidate states before
    acceptance.  Returns (ts, ys, termination, t_final, last_rejection);
    the trajectory always lands exactly on the requested sample times.
    """
    t, y = float(t0), np.array(y0, dtype=float)
    stops = sorted({float(s) for s in (samples or [])} | {float(t_end)})
    stops = [s for s in stops if s > t + 1e-15]
    ts, ys = [t], [y.copy()]
    dt = min(1e-2, (t_end - t0) / 10 if t_end > t0 else 1e-2)
    dt = max(dt, 10 * MIN_STEP)
    termination = TERMINATION_REACHED
    last_rejection = None

    while stops:
        target = stops[0]
        if t >= target - 1e-15:
            stops.pop(0)
            continue
        dt = min(dt, target - t)
        if dt < MIN_STEP * max(1.0, abs(t)):
            termination = TERMINATION_BLOWUP
            break
        try:
            k = [rhs(t, y)]
            for row, c in zip(_DP_A[1:], _DP_C[1:]):
                yi = y + dt * sum(a * ki for a, ki in zip(row, k))
                if np.abs(yi).max() > COEFF_LIMIT:
                    raise _Reject("coefficient explosion")
                k.append(rhs(t + c * dt, yi))
            k = np.array(k)
            y5 = y + dt * (_DP_B5 @ k)
            y4 = y + dt * (_DP_B4 @ k)
        except (_Reject, EngineError) as exc:
            last_rejection = exc
            dt *= 0.5
            continue
        if not np.all(np.isfinite(y5)) or np.abs(y5).max() > COEFF_LIMIT:
            last_rejection = _Reject("coefficient explosion")
            dt *= 0.5
            continue
        scale = tol + tol * np.maximum(np.abs(y), np.abs(y5))
        err = np.sqrt(np.mean(((y5 - y4) / scale) ** 2))
        if err > 1.0:
            dt *= max(0.2, 0.9 * err ** (-0.2))
            continue
        if validate is not None:
            try:
                validate(t + dt, y5)
            except EngineError as exc:
                last_rejection = exc
                dt *= 0.5
                continue
        t = t + dt
        y = y5
        ts.append(t)
        ys.append(y.copy())
        if err > 1e-30:
            dt *= min(5.0, 0.9 * err ** (-0.2))
        else:
            dt *= 5.0
    return ts, ys, termination, t, last_rejection


class _Reject(Exception):
    pass


class _DriftError(ValidationError):
    pass


# ---------------------------------------------------------------------------
# Hitchin flow


def _unpack(y):
    return KForm(6, 2, y[:15]), KForm(6, 3, y[15:35])


def _pack(omega, psi_plus):
    return np.concatenate([omega.coeffs, psi_plus.coeffs])


def hitchin_rhs(state, alg):
    """d/dt psi+ = d omega and (d/dt omega) ^ omega = -d psi-."""
    S = complete_su3(state.omega, state.psi_plus, require_normalized=False)
    d_omega = exterior_d(state.omega, alg)
    d_psi_m = exterior_d(S.psi_minus, alg)
    domega_dt = lefschetz_solve(-1.0 * d_psi_m, state.omega)
    return domega_dt, d_omega


def half_flat_residual(omega, psi_plus, alg):
    """max of ||d psi+|| and ||d(omega ^ omega)||, relative to the state."""
    r1 = exterior_d(psi_plus, alg).coeff_norm / max(psi_plus.coeff_norm, 1.0)
    omega2 = wedge(omega, omega)
    r2 = exterior_d(omega2, alg).coeff_norm / max(omega2.coeff_norm, 1.0)
    return max(r1, r2)


def integrate(s0, alg, t_end, tol=1e-9, samples=None, half_flat_tol=1e-7):
    """Integrate the Hitchin flow; the trace records every accepted state.

    The initial structure must be half-flat.  Termination is
    ``reached_t_end``, ``blowup_detected`` (step collapse or coefficient
    explosion) or ``structure_invalid`` (drift from the flow's invariants).
    """
    hf0 = half_flat_residual(s0.omega, s0.psi_plus, alg)
    if hf0 > half_flat_tol:
        raise ValidationError(
            f"initial structure is not half-flat (residual {hf0:.3e})"
        )
    complete_su3(s0.omega, s0.psi_plus, require_normalized=False)

    drift_tol = max(10.0 * tol, hf0 * 10.0, 1e-12)

    def rhs(t, y):
        omega, psi = _unpack(y)
        domega, dpsi = hitchin_rhs(FlowState(t, omega, psi), alg)
        return _pack(domega, dpsi)

    def validate(t, y):
        omega, psi = _unpack(y)
        complete_su3(omega, psi, require_normalized=False)
        if half_flat_residual(omega, psi, alg) > drift_tol:
            raise _DriftError("half-flatness drift")

    ts, ys, termination, t_final, last_rejection = _rk45(
        rhs, s0.t, _pack(s0.omega, s0.psi_plus), t_end, tol,
        validate=validate, samples=samples,
    )
    if termination == TERMINATION_BLOWUP and isinstance(last_rejection, _DriftError):
        termination = TERMINATION_INVALID

    states = [FlowState(t, *_unpack(y)) for t, y in zip(ts, ys)]
    trace = FlowTrace(
        states=states,
        coupled_residuals=np.zeros(len(states)),
        c_fit=np.zeros(len(states)),
        termination=termination,
        t_final=t_final,
        diagnostics={
            "tol": tol,
            "initial_half_flat_residual": hf0,
            "algebra": alg,
        },
    )
    trace.coupled_residuals, trace.c_fit = coupled_residual_series(trace)
    return trace


def coupled_residual_series(trace, alg=None):
    """Per-state min_c || d omega - c psi+ ||_h and the fitted c."""
    residuals = np.zeros(len(trace.states))
    c_fit = np.zeros(len(trace.states))
    if alg is None:
        alg = trace.diagnostics["algebra"]
    for i, state in enumerate(trace.states):
        residuals[i], c_fit[i] = _coupled_residual(state.omega, state.psi_plus, alg)
    return residuals, c_fit


def _coupled_residual(omega, psi_plus, alg):
    S = complete_su3(omega, psi_plus, require_normalized=False)
    d_omega = exterior_d(omega, alg)
    h = S.metric
    psi_sq = h.inner(psi_plus, psi_plus)
    c = h.inner(d_omega, psi_plus) / psi_sq
    res = d_omega - c * psi_plus
    return float(np.sqrt(max(h.inner(res, res), 0.0))), float(c)


# ---------------------------------------------------------------------------
# restricted generalized Hitchin flow


def restricted_state_from(S, alg, t=0.0):
    """Seed a restricted flow from a coupled structure's torsion data."""
    torsion = torsion_forms(S, alg)
    c = -1.5 * torsion.w1_minus
    return RestrictedFlowState(
        t=t,
        omega=S.omega,
        psi_plus=S.psi_plus,
        psi_minus=S.psi_minus,
        c=c,
        w2=torsion.w2_minus,
    )


def restricted_rhs(state, nu, gamma, alg=None, constraint_tol=None):
    """Evolution of (omega, psi+, psi-, c, w2-) under the restricted flow.

    With the algebra supplied, the consistency constraint
    d(w2-) = -|w2-|^2/4 psi+ - c gamma is checked before differentiating.
    """
    S = complete_su3(state.omega, state.psi_plus, require_normalized=False)
    h = S.metric
    omega, psi_p, psi_m = state.omega, state.psi_plus, S.psi_minus
    c, w2 = state.c, state.w2
    w2_sq = h.inner(w2, w2)

    if alg is not None:
        defect = exterior_d(w2, alg) + (w2_sq / 4.0) * psi_p + c * gamma
        scale = max(exterior_d(w2, alg).coeff_norm, psi_p.coeff_norm, 1.0)
        tol = constraint_tol if constraint_tol is not None else 1e-6
        if defect.coeff_norm > tol * scale:
            raise ValidationError(
                f"restricted-flow constraint violated: ||d w2 + |w2|^2/4 psi+ "
                f"+ c gamma|| = {defect.coeff_norm:.3e}"
            )

    d_omega = (2.0 / 3.0) * nu * c * omega + nu * w2
    d_psi_p = nu * c * psi_p - nu * gamma
    d_psi_m = nu * c * psi_m + nu * pullback(S.j, gamma)
    d_c = -(1.0 / 3.0) * nu * c**2 - 0.25 * nu * w2_sq

    # d/dt w2 is the unique Lefschetz preimage of its wedge equation.  It is
    # not itself primitive (1,1): w2(t) is primitive for the moving omega(t),
    # so the derivative carries trace terms.  Module drift of w2 along a
    # trajectory is reported per accepted state instead.
    omega2 = wedge(omega, omega)
    target = (
        (nu * w2_sq / 6.0) * omega2
        - nu * c * wedge(w2, omega)
        - nu * wedge(w2, w2)
    )
    d_w2 = lefschetz_solve(target, omega)
    return {
        "omega": d_omega,
        "psi_plus": d_psi_p,
        "psi_minus": d_psi_m,
        "c": d_c,
        "w2": d_w2,
        "w2_module_defect": w2_module_defect(w2, omega, S.j),
    }


def w2_module_defect(w2, omega, j):
    """How far w2 sits from the primitive (1,1) module of (omega, J)."""
    type_defect = float(np.abs(pullback(j, w2).coeffs - w2.coeffs).max())
    trace_defect = wedge(w2, wedge(omega, omega)).coeff_norm
    scale = max(w2.coeff_norm, 1e-30)
    return max(type_defect, trace_defect / max(omega.coeff_norm**2, 1e-30)) / scale


def _check_gamma(gamma, S, alg, tol=1e-9):
    if gamma.is_zero(1e-300):
        return
    scale = max(gamma.coeff_norm, 1e-30)
    checks = {
        "gamma ^ omega": wedge(gamma, S.omega).coeff_norm,
        "gamma ^ psi+": wedge(gamma, S.psi_plus).coeff_norm,
        "gamma ^ psi-": wedge(gamma, S.psi_minus).coeff_norm,
        "d gamma": exterior_d(gamma, alg).coeff_norm,
        "d (J gamma)": exterior_d(pullback(S.j, gamma), alg).coeff_norm,
    }
    for name, value in checks.items():
        if value > tol * scale:
            raise ValidationError(
                f"gamma is not an admissible torsion 3-form: ||{name}|| = {value:.3e}"
            )


def restricted_integrate(s0, alg, t_end, nu=1.0, gamma=None, tol=1e-9, samples=None):
    """Integrate the restricted flow from a coupled, constraint-consistent seed.

    ``nu`` is a constant or a scalar function of t.  The trace records the
    coupled-preservation residual rho(t) = ||d omega - c psi+|| and the
    constraint residual per accepted state.
    """
    if gamma is None:
        gamma = KForm.zero(6, 3)
    nu_fn = nu if callable(nu) else (lambda t, value=float(nu): value)

    S0 = complete_su3(s0.omega, s0.psi_plus, require_normalized=False)
    _check_gamma(gamma, S0, alg)
    torsion0 = torsion_forms(S0, alg)
    classes = classify(torsion0)
    if not classes.coupled:
        raise ValidationError(
            f"restricted flow needs a coupled seed (classified {classes.label!r})"
        )
    rho0, _ = _coupled_residual(s0.omega, s0.psi_plus, alg)
    if rho0 > 1e-7 * max(1.0, s0.psi_plus.coeff_norm):
        raise ValidationError(f"seed is not coupled: ||d omega - c psi+|| = {rho0:.3e}")
    h0 = S0.metric
    w2sq0 = h0.inner(s0.w2, s0.w2)
    defect0 = exterior_d(s0.w2, alg) + (w2sq0 / 4.0) * s0.psi_plus + s0.c * gamma
    if defect0.coeff_norm > 1e-6 * max(1.0, s0.psi_plus.coeff_norm):
        raise ValidationError(
            f"seed violates the d(w2-) constraint (residual {defect0.coeff_norm:.3e})"
        )

    def unpack(y):
        return KForm(6, 2, y[:15]), KForm(6, 3, y[15:35]), float(y[35]), KForm(6, 2, y[36:51])

    def rhs(t, y):
        omega, psi, c, w2 = unpack(y)
        state = RestrictedFlowState(t, omega, psi, psi, c, w2)
        d = restricted_rhs(state, nu_fn(t), gamma)
        return np.concatenate(
            [d["omega"].coeffs, d["psi_plus"].coeffs, [d["c"]], d["w2"].coeffs]
        )

    def validate(t, y):
        omega, psi, c, w2 = unpack(y)
        complete_su3(omega, psi, require_normalized=False)

    y0 = np.concatenate([s0.omega.coeffs, s0.psi_plus.coeffs, [s0.c], s0.w2.coeffs])
    ts, ys, termination, t_final, _ = _rk45(
        rhs, s0.t, y0, t_end, tol, validate=validate, samples=samples
    )

    states, rho, constraint, module_drift = [], [], [], []
    for t, y in zip(ts, ys):
        omega, psi, c, w2 = unpack(y)
        S = complete_su3(omega, psi, require_normalized=False)
        states.append(RestrictedFlowState(t, omega, psi, S.psi_minus, c, w2))
        d_omega = exterior_d(omega, alg)
        res = d_omega - c * psi
        rho.append(np.sqrt(max(S.metric.inner(res, res), 0.0)))
        w2sq = S.metric.inner(w2, w2)
        dft = exterior_d(w2, alg) + (w2sq / 4.0) * psi + c * gamma
        constraint.append(dft.coeff_norm)
        module_drift.append(w2_module_defect(w2, omega, S.j))

    trace = FlowTrace(
        states=states,
        coupled_residuals=np.array(rho),
        c_fit=np.array([s.c for s in states]),
        termination=termination,
        t_final=t_final,
        diagnostics={
            "tol": tol,
            "constraint_residuals": np.array(constraint),
            "w2_module_drift": np.array(module_drift),
            "restricted": True,
            "algebra": alg,
        },
    )
    return trace


# ---------------------------------------------------------------------------
# trace export


def _basis_labels(prefix, degree):
    from .forms import basis

    return [prefix + "_" + "".join(map(str, idx)) for idx in basis(6, degree)]


def trace_columns(restricted=False):
    cols = ["t"] + _basis_labels("omega", 2) + _basis_labels("psi", 3)
    cols += ["coupled_residual", "c_fit"]
    if restricted:
        cols += ["c"] + _basis_labels("w2", 2) + ["constraint_residual"]
    return cols


def trace_to_csv(trace, path_or_buffer):
    """CSV emission: t, omega and psi+ coefficients in lexicographic basis
    order, then the residual columns (documented stable interface)."""
    restricted = bool(trace.diagnostics.get("restricted"))
    own = isinstance(path_or_buffer, (str, bytes))
    handle = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        writer = csv.writer(handle)
        writer.writerow(trace_columns(restricted))
        for i, state in enumerate(trace.states):
            row = [repr(float(state.t))]
            row += [repr(float(x)) for x in state.omega.coeffs]
            row += [repr(float(x)) for x in state.psi_plus.coeffs]
            row.append(repr(float(trace.coupled_residuals[i])))
            row.append(repr(float(trace.c_fit[i])))
            if restricted:
                row.append(repr(float(state.c)))
                row += [repr(float(x)) for x in state.w2.coeffs]
                row.append(repr(float(trace.diagnostics["constraint_residuals"][i])))
            writer.writerow(row)
    finally:
        if own:
            handle.close()


def trace_csv_text(trace):
    buf = io.StringIO()
    trace_to_csv(trace, buf)
    return buf.getvalue()
