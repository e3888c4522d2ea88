"""Coframes with constant-coefficient exterior differential.

A ``CoframeAlgebra`` stores the table d e^i = sum c e^{jk} (the dual of a
Lie bracket) and supplies the induced differential on forms of every degree
via the Leibniz rule.  Indices are 1-based throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DegreeError, DimensionMismatchError, ValidationError
from .forms import KForm, basis, basis_position, merge_indices

D_SQUARED_TOL = 1e-12


@dataclass(frozen=True)
class CoframeAlgebra:
    """Differential table: rows[i-1] holds (coefficient, j, k) with j < k."""

    dim: int
    rows: tuple
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.rows) != self.dim:
            raise DimensionMismatchError(
                f"expected {self.dim} differential rows, got {len(self.rows)}"
            )
        normalized = []
        for i, row in enumerate(self.rows, start=1):
            seen = set()
            terms = []
            for coeff, j, k in row:
                j, k = int(j), int(k)
                if not (1 <= j < k <= self.dim):
                    raise ValidationError(
                        f"d e^{i}: index pair ({j},{k}) must satisfy 1 <= j < k <= dim"
                    )
                if (j, k) in seen:
                    raise ValidationError(f"d e^{i}: duplicate pair ({j},{k})")
                seen.add((j, k))
                terms.append((float(coeff), j, k))
            normalized.append(tuple(terms))
        object.__setattr__(self, "rows", tuple(normalized))

    # ------------------------------------------------------------------

    def d_matrix(self, k):
        """Matrix of the differential from degree k to degree k+1."""
        if not 0 <= k < self.dim:
            raise DegreeError(f"no differential from degree {k} in dim {self.dim}")
        if k not in self._cache:
            n = self.dim
            out_pos = basis_position(n, k + 1)
            mat = np.zeros((comb(n, k + 1), comb(n, k)))
            if k >= 1:
                for pin, idx in enumerate(basis(n, k)):
                    for m, i in enumerate(idx):
                        rest = tuple(x for x in idx if x != i)
                        for coeff, j, l in self.rows[i - 1]:
                            sign, merged = merge_indices((j, l), rest)
                            if sign:
                                mat[out_pos[merged], pin] += (
                                    (-1) ** m * coeff * sign
                                )
            self._cache[k] = mat
        return self._cache[k]

    def is_abelian(self):
        return all(len(row) == 0 for row in self.rows)


def exterior_d(a, alg):
    """Chevalley-Eilenberg differential of a form with constant coefficients."""
    if a.dim != alg.dim:
        raise DimensionMismatchError(f"form dim {a.dim} != algebra dim {alg.dim}")
    if a.degree == a.dim:
        raise DegreeError(f"d is undefined on top-degree ({a.degree}) forms")
    return KForm(a.dim, a.degree + 1, alg.d_matrix(a.degree) @ a.coeffs)


def check_d_squared(alg):
    """max_i || d(d e^i) ||, zero (<= 1e-12) exactly when d is a differential."""
    dd = alg.d_matrix(2) @ alg.d_matrix(1)
    return float(np.max(np.linalg.norm(dd, axis=0))) if dd.size else 0.0


def validate_closed(alg, tol=D_SQUARED_TOL):
    residual = check_d_squared(alg)
    if residual > tol:
        raise ValidationError(
            f"d^2 != 0: Jacobi residual {residual:.3e} exceeds {tol:.1e}"
        )
    return residual


_BUILTINS = {
    "iwasawa": (
        6,
        (
            (),
            (),
            (),
            (),
            ((1.0, 1, 4), (1.0, 2, 3)),
            ((1.0, 1, 3), (-1.0, 2, 4)),
        ),
    ),
    "n-algebra": (
        6,
        (
            (),
            (),
            (),
            ((1.0, 1, 3),),
            ((1.0, 1, 4), (1.0, 2, 3)),
            ((1.0, 1, 3), (-1.0, 1, 5), (-1.0, 2, 4)),
        ),
    ),
    "torus6": (6, ((), (), (), (), (), ())),
}


def builtin(name):
    """Built-in fixture algebras: iwasawa, n-algebra, torus6."""
    try:
        dim, rows = _BUILTINS[name]
    except KeyError:
        known = ", ".join(sorted(_BUILTINS))
        raise ValidationError(f"unknown builtin algebra {name!r} (known: {known})")
    return CoframeAlgebra(dim, rows)


def builtin_names():
    return tuple(sorted(_BUILTINS))
