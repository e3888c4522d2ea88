"""Dense exterior algebra over a fixed n-dimensional coframe (n <= 7).

A k-form is a coefficient vector over the strictly increasing multi-indices
of {1..n} in lexicographic order.  All operations are pure functions on
immutable values; the basis combinatorics (wedge/contraction tables,
complement signs) are precomputed once per (n, k) and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from math import comb

import numpy as np

from .errors import (
    DegreeError,
    DimensionMismatchError,
    LefschetzError,
    MetricError,
    ValidationError,
)

REL_TOL = 1e-9
ABS_TOL = 1e-12


def is_negligible(value, scale, rel=REL_TOL, abs_tol=ABS_TOL):
    """Zero test relative to the natural scale of the inputs."""
    return abs(value) <= max(rel * abs(scale), abs_tol)


# ---------------------------------------------------------------------------
# basis combinatorics


@lru_cache(maxsize=None)
def basis(n, k):
    """Increasing k-index tuples (1-based) in lexicographic order."""
    return tuple(combinations(range(1, n + 1), k))


@lru_cache(maxsize=None)
def basis_position(n, k):
    return {idx: pos for pos, idx in enumerate(basis(n, k))}


def merge_indices(left, right):
    """Merge two disjoint increasing tuples.

    Returns (sign, merged) or (0, None) when an index repeats.
    """
    if set(left) & set(right):
        return 0, None
    merged = tuple(sorted(left + right))
    # sign = parity of the permutation sorting left+right
    seq = left + right
    inversions = sum(
        1 for a in range(len(seq)) for b in range(a + 1, len(seq)) if seq[a] > seq[b]
    )
    return (-1) ** inversions, merged


@lru_cache(maxsize=None)
def _wedge_table(n, k, l):
    """Index arrays (ia, ib, sign, iout) of all nonzero basis products."""
    ia, ib, sg, io = [], [], [], []
    pos_out = basis_position(n, k + l)
    for pa, left in enumerate(basis(n, k)):
        for pb, right in enumerate(basis(n, l)):
            sign, merged = merge_indices(left, right)
            if sign:
                ia.append(pa)
                ib.append(pb)
                sg.append(float(sign))
                io.append(pos_out[merged])
    return (
        np.asarray(ia, dtype=np.intp),
        np.asarray(ib, dtype=np.intp),
        np.asarray(sg),
        np.asarray(io, dtype=np.intp),
    )


@lru_cache(maxsize=None)
def _contraction_table(n, k):
    """Arrays (slot j-1, position of I, sign, position of I\\{j})."""
    jv, ii, sg, io = [], [], [], []
    pos_out = basis_position(n, k - 1)
    for pin, idx in enumerate(basis(n, k)):
        for m, j in enumerate(idx):
            jv.append(j - 1)
            ii.append(pin)
            sg.append(float((-1) ** m))
            io.append(pos_out[tuple(x for x in idx if x != j)])
    return (
        np.asarray(jv, dtype=np.intp),
        np.asarray(ii, dtype=np.intp),
        np.asarray(sg),
        np.asarray(io, dtype=np.intp),
    )


@lru_cache(maxsize=None)
def _complement_table(n, k):
    """For each I of degree k: (position of I^c, sign of e^I ^ e^{I^c})."""
    pos_out = basis_position(n, n - k)
    full = set(range(1, n + 1))
    positions, signs = [], []
    for idx in basis(n, k):
        comp = tuple(sorted(full - set(idx)))
        sign, _ = merge_indices(idx, comp)
        positions.append(pos_out[comp])
        signs.append(float(sign))
    return np.asarray(positions, dtype=np.intp), np.asarray(signs)


# ---------------------------------------------------------------------------
# values


@dataclass(frozen=True)
class KForm:
    """Alternating k-form with dense coefficients over the lex basis."""

    dim: int
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        if not 0 <= self.degree <= self.dim:
            raise DegreeError(f"degree {self.degree} out of range for dim {self.dim}")
        c = np.array(self.coeffs, dtype=float, copy=True).reshape(-1)
        if c.size != comb(self.dim, self.degree):
            raise DimensionMismatchError(
                f"expected {comb(self.dim, self.degree)} coefficients for a "
                f"{self.degree}-form in dim {self.dim}, got {c.size}"
            )
        if not np.all(np.isfinite(c)):
            raise ValidationError("form coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # constructors ---------------------------------------------------------

    @staticmethod
    def zero(dim, degree):
        return KForm(dim, degree, np.zeros(comb(dim, degree)))

    @staticmethod
    def from_terms(dim, degree, terms):
        """Build from [(coefficient, (i1 < ... < ik)), ...]."""
        c = np.zeros(comb(dim, degree))
        pos = basis_position(dim, degree)
        for coeff, idx in terms:
            key = tuple(int(i) for i in idx)
            if key not in pos:
                raise DimensionMismatchError(f"bad multi-index {key} for dim {dim}")
            c[pos[key]] += float(coeff)
        return KForm(dim, degree, c)

    @staticmethod
    def monomial(dim, idx, coeff=1.0):
        return KForm.from_terms(dim, len(idx), [(coeff, tuple(idx))])

    # conveniences ----------------------------------------------------------

    def terms(self, tol=0.0):
        """Yield (coefficient, multi-index) for the nonzero monomials."""
        for idx, c in zip(basis(self.dim, self.degree), self.coeffs):
            if abs(c) > tol:
                yield c, idx

    @property
    def coeff_norm(self):
        return float(np.linalg.norm(self.coeffs))

    def is_zero(self, tol=ABS_TOL):
        return bool(np.all(np.abs(self.coeffs) <= tol))

    def __add__(self, other):
        self._check_same(other)
        return KForm(self.dim, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return KForm(self.dim, self.degree, self.coeffs - other.coeffs)

    def __neg__(self):
        return KForm(self.dim, self.degree, -self.coeffs)

    def __mul__(self, scalar):
        return KForm(self.dim, self.degree, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def _check_same(self, other):
        if self.dim != other.dim or self.degree != other.degree:
            raise DimensionMismatchError(
                f"form mismatch: ({self.dim},{self.degree}) vs "
                f"({other.dim},{other.degree})"
            )


@dataclass(frozen=True)
class Endomorphism:
    """Linear map on tangent vectors; columns are images of basis vectors."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float, copy=True)
        if m.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f"matrix shape {m.shape} != dim {self.dim}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("endomorphism entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity(dim):
        return Endomorphism(dim, np.eye(dim))

    def __matmul__(self, other):
        return Endomorphism(self.dim, self.matrix @ other.matrix)

    def __neg__(self):
        return Endomorphism(self.dim, -self.matrix)


class MetricData:
    """Symmetric metric on the coframe plus its (signed) volume form.

    The orientation is e^1 ^ ... ^ e^n by default; a negative ``orientation``
    flips the volume sign (used when omega^3 is negatively oriented).
    """

    def __init__(self, matrix, orientation=1.0, volume=None):
        m = np.array(matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError("metric matrix must be square")
        if not np.allclose(m, m.T, rtol=1e-8, atol=1e-10 * max(1.0, np.abs(m).max())):
            raise MetricError("metric matrix is not symmetric")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        self.dim = m.shape[0]
        self.matrix = m
        det = float(np.linalg.det(m))
        if volume is not None:
            self.volume = volume
        else:
            if det <= 0:
                raise MetricError("metric has non-positive determinant")
            vol = np.zeros(1)
            vol[0] = float(np.sign(orientation)) * np.sqrt(det)
            self.volume = KForm(self.dim, self.dim, vol)
        self._gram = {}
        self._inverse = None

    @staticmethod
    def identity(dim):
        return MetricData(np.eye(dim))

    @property
    def inverse(self):
        if self._inverse is None:
            self._inverse = np.linalg.inv(self.matrix)
        return self._inverse

    def eigenvalues(self):
        return np.linalg.eigvalsh(self.matrix)

    def is_positive_definite(self, rel=1e-12):
        ev = self.eigenvalues()
        return bool(ev[0] > 0 and ev[0] > -rel * abs(ev[-1]))

    def gram(self, k):
        """Gram matrix of <e^I, e^J> on degree-k monomials."""
        if k not in self._gram:
            idx = basis(self.dim, k)
            if k == 0:
                g = np.ones((1, 1))
            else:
                ginv = self.inverse
                size = len(idx)
                sub = np.empty((size, size, k, k))
                rows = [np.array(i) - 1 for i in idx]
                for a, ra in enumerate(rows):
                    for b, rb in enumerate(rows):
                        sub[a, b] = ginv[np.ix_(ra, rb)]
                g = np.linalg.det(sub)
            g.setflags(write=False)
            self._gram[k] = g
        return self._gram[k]

    def inner(self, a, b):
        if a.dim != self.dim or b.dim != self.dim or a.degree != b.degree:
            raise DimensionMismatchError("inner product needs matching forms")
        return float(a.coeffs @ self.gram(a.degree) @ b.coeffs)


# ---------------------------------------------------------------------------
# operations


def wedge(a, b):
    """Exterior product.  Rejects degree overflow rather than clamping."""
    if a.dim != b.dim:
        raise DimensionMismatchError(f"dim mismatch {a.dim} vs {b.dim}")
    k, l = a.degree, b.degree
    if k + l > a.dim:
        raise DegreeError(f"wedge degree {k}+{l} exceeds dim {a.dim}")
    ia, ib, sg, io = _wedge_table(a.dim, k, l)
    out = np.zeros(comb(a.dim, k + l))
    np.add.at(out, io, sg * a.coeffs[ia] * b.coeffs[ib])
    return KForm(a.dim, k + l, out)


def wedge_coeffs(n, k, l, a, b):
    """Array-level wedge used in hot loops (no KForm wrapping)."""
    ia, ib, sg, io = _wedge_table(n, k, l)
    out = np.zeros(comb(n, k + l))
    np.add.at(out, io, sg * a[ia] * b[ib])
    return out


def wedge_matrix(fixed, k):
    """Matrix of beta -> beta ^ fixed on degree-k forms."""
    n, l = fixed.dim, fixed.degree
    if k + l > n:
        raise DegreeError(f"wedge degree {k}+{l} exceeds dim {n}")
    ia, ib, sg, io = _wedge_table(n, k, l)
    mat = np.zeros((comb(n, k + l), comb(n, k)))
    np.add.at(mat, (io, ia), sg * fixed.coeffs[ib])
    return mat


def contract(v, a):
    """Interior product i_v acting on the first slot."""
    if a.degree < 1:
        raise DegreeError("cannot contract a 0-form")
    vec = np.asarray(v, dtype=float).reshape(-1)
    if vec.size != a.dim:
        raise DimensionMismatchError(f"vector length {vec.size} != dim {a.dim}")
    jv, ii, sg, io = _contraction_table(a.dim, a.degree)
    out = np.zeros(comb(a.dim, a.degree - 1))
    np.add.at(out, io, sg * vec[jv] * a.coeffs[ii])
    return KForm(a.dim, a.degree - 1, out)


def hodge_star(a, g):
    """Hodge dual defined by alpha ^ *beta = <alpha, beta> dV."""
    if a.dim != g.dim:
        raise DimensionMismatchError(f"dim mismatch {a.dim} vs metric {g.dim}")
    positions, signs = _complement_table(a.dim, a.degree)
    weights = g.gram(a.degree) @ a.coeffs
    out = np.zeros(comb(a.dim, a.dim - a.degree))
    vol = g.volume.coeffs[0]
    out[positions] = signs * weights * vol
    return KForm(a.dim, a.dim - a.degree, out)


def star_matrix(g, k):
    """Matrix of the Hodge dual on degree-k forms."""
    positions, signs = _complement_table(g.dim, k)
    vol = g.volume.coeffs[0]
    mat = np.zeros((comb(g.dim, g.dim - k), comb(g.dim, k)))
    mat[positions, :] = (signs * vol)[:, None] * g.gram(k)
    return mat


def pullback(endo, a):
    """Pull a k-form back through an endomorphism on all k arguments:
    (E.a)(X_1, ..., X_k) = a(E X_1, ..., E X_k).
    """
    if endo.dim != a.dim:
        raise DimensionMismatchError(f"dim mismatch {endo.dim} vs {a.dim}")
    return KForm(a.dim, a.degree, pullback_matrix(endo.matrix, a.degree) @ a.coeffs)


def pullback_matrix(matrix, k):
    """Matrix of the induced action on degree-k coefficients."""
    n = matrix.shape[0]
    idx = basis(n, k)
    if k == 0:
        return np.ones((1, 1))
    size = len(idx)
    rows = [np.array(i) - 1 for i in idx]
    sub = np.empty((size, size, k, k))
    # out[J] = sum_I det(matrix[I, J]) a[I]
    for pj, cols in enumerate(rows):
        for pi, rws in enumerate(rows):
            sub[pj, pi] = matrix[np.ix_(rws, cols)]
    return np.linalg.det(sub)


def norm_sq(a, g):
    """Squared norm; unit on basis monomials of an orthonormal coframe."""
    return g.inner(a, a)


def wedge_solve(target, fixed, unknown_degree, tol=1e-9):
    """Solve beta ^ fixed = target for beta of the given degree."""
    if target.dim != fixed.dim:
        raise DimensionMismatchError("dim mismatch in wedge_solve")
    if target.degree != unknown_degree + fixed.degree:
        raise DegreeError("inconsistent degrees in wedge_solve")
    mat = wedge_matrix(fixed, unknown_degree)
    if mat.shape[0] == mat.shape[1]:
        try:
            beta = np.linalg.solve(mat, target.coeffs)
        except np.linalg.LinAlgError as exc:
            raise LefschetzError(f"wedge map is singular: {exc}") from exc
    else:
        beta, *_ = np.linalg.lstsq(mat, target.coeffs, rcond=None)
    residual = np.linalg.norm(mat @ beta - target.coeffs)
    scale = max(target.coeff_norm, np.linalg.norm(mat) * np.linalg.norm(beta), 1e-30)
    if residual > max(tol * scale, ABS_TOL):
        raise LefschetzError(
            f"wedge map ill-conditioned: residual {residual:.3e} vs scale {scale:.3e}"
        )
    return KForm(target.dim, unknown_degree, beta)


def lefschetz_solve(target, omega, tol=1e-9):
    """Invert beta -> beta ^ omega from 2-forms onto 4-forms (dim 6)."""
    if omega.dim != 6 or omega.degree != 2 or target.degree != 4:
        raise DegreeError("lefschetz_solve expects a 4-form target and 2-form omega")
    return wedge_solve(target, omega, 2, tol=tol)
