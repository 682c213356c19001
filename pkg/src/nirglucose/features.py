"""Canonical multivariate monomial bases for the polynomial calibration kernels.

Supports 2 or 3 input channels at degree 3 or 4.  The constant term is never
part of the monomial list; the intercept is carried separately by the model.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

# Canonical ordering for the trivariate cubic kernel: pure cubes, mixed
# quadratic*linear terms, squares, the triple product, pairwise products,
# then the linear terms.  Pinned so serialized models are portable.
_TRI_CUBIC_ORDER: tuple[tuple[int, int, int], ...] = (
    (3, 0, 0), (0, 3, 0), (0, 0, 3),
    (2, 1, 0), (2, 0, 1), (1, 2, 0), (1, 0, 2), (0, 2, 1), (0, 1, 2),
    (2, 0, 0), (0, 2, 0), (0, 0, 2),
    (1, 1, 1),
    (1, 1, 0), (1, 0, 1), (0, 1, 1),
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
)


class BasisError(ValueError):
    pass


@dataclass(frozen=True)
class MonomialBasis:
    n_vars: int
    degree: int
    monomials: tuple[tuple[int, ...], ...]
    include_intercept: bool = True

    def __len__(self) -> int:
        return len(self.monomials)


def _graded_lex(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    exps = []
    for e in np.ndindex(*([degree + 1] * n_vars)):
        if 1 <= sum(e) <= degree:
            exps.append(tuple(int(x) for x in e))
    # total degree descending, ties broken lexicographically on exponents,
    # descending (x1-major).
    exps.sort(key=lambda e: (-sum(e), tuple(-x for x in e)))
    return exps


def build_basis(n_vars: int, degree: int, include_intercept: bool = True) -> MonomialBasis:
    """Deterministic monomial basis with C(n_vars+degree, degree) - 1 terms."""
    if n_vars not in (2, 3) or degree not in (3, 4):
        raise BasisError(f"unsupported basis ({n_vars} vars, degree {degree})")
    if (n_vars, degree) == (3, 3):
        monomials = _TRI_CUBIC_ORDER
    else:
        monomials = tuple(_graded_lex(n_vars, degree))
    assert len(monomials) == comb(n_vars + degree, degree) - 1
    return MonomialBasis(n_vars=n_vars, degree=degree, monomials=monomials,
                         include_intercept=include_intercept)


def expand(basis: MonomialBasis, x) -> np.ndarray:
    """Feature vector for one input point (leading 1 if the basis carries
    an intercept)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (basis.n_vars,):
        raise BasisError(f"expected {basis.n_vars} inputs, got shape {x.shape}")
    return expand_matrix(basis, x.reshape(1, -1))[0]


def expand_matrix(basis: MonomialBasis, X) -> np.ndarray:
    """Design matrix of shape (n, |monomials| [+1])."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != basis.n_vars:
        raise BasisError(f"expected (n, {basis.n_vars}) inputs, got shape {X.shape}")
    cols = []
    if basis.include_intercept:
        cols.append(np.ones(X.shape[0]))
    for exps in basis.monomials:
        col = np.ones(X.shape[0])
        for j, e in enumerate(exps):
            if e:
                col = col * X[:, j] ** e
        cols.append(col)
    return np.column_stack(cols)
