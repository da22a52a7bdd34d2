"""Element-local trial-to-test operator and condensed stiffness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .forms import LocalFormBlocks, LocalGram


@dataclass(frozen=True)
class ElementOperators:
    """Per-element operators, stacked over elements.

    T[K] holds the test coefficients of T^r applied to each local trial
    basis function, i.e. G_K T_K = B_K.  S[K] = B_K^T G_K^{-1} B_K and
    g[K] = T_K^T l_K.
    """

    B: np.ndarray
    T: np.ndarray
    S: np.ndarray
    g: np.ndarray | None
    gram: LocalGram
    load: np.ndarray | None = None
    beta_row: np.ndarray | None = None

    @property
    def n_elements(self) -> int:
        return self.B.shape[0]


def trial_to_test_local(gram: LocalGram, blocks: LocalFormBlocks) -> ElementOperators:
    B = blocks.B
    nt = B.shape[0]
    if gram.chol.shape[0] != nt:
        raise ValueError("Gram and form blocks cover different element sets")
    W = np.empty_like(B)
    T = np.empty_like(B)
    for K in range(nt):
        L = gram.chol[K]
        W[K] = solve_triangular(L, B[K], lower=True, check_finite=False)
        T[K] = solve_triangular(L.T, W[K], lower=False, check_finite=False)
    S = np.einsum("kij,kil->kjl", W, W)
    S = 0.5 * (S + S.transpose(0, 2, 1))
    g = None
    if blocks.load is not None:
        g = np.einsum("kij,ki->kj", T, blocks.load)
    return ElementOperators(B, T, S, g, gram, blocks.load, blocks.beta_row)


def local_residual_norms(ops: ElementOperators, x_local: np.ndarray) -> np.ndarray:
    """Squared V-norm of the Riesz lift of l - b(u_h, .) on each element."""
    if ops.load is None:
        raise ValueError("element operators carry no load")
    r = ops.load - np.einsum("kij,kj->ki", ops.B, x_local)
    out = np.empty(ops.n_elements)
    for K in range(ops.n_elements):
        z = solve_triangular(ops.gram.chol[K], r[K], lower=True, check_finite=False)
        out[K] = z @ z
    return out


@dataclass(frozen=True)
class InjectivityReport:
    sigma_min: float
    threshold: float

    @property
    def injective(self) -> bool:
        return self.sigma_min > self.threshold

    def __str__(self) -> str:
        state = "ok" if self.injective else "DEGENERATE"
        return f"sigma_min={self.sigma_min:.6e} threshold={self.threshold:.1e} {state}"


def local_injectivity_report(S: np.ndarray, U: np.ndarray,
                             threshold: float = 1e-10) -> InjectivityReport:
    """Smallest singular value of W -> T^r W measured in the discrete U-norm.

    ``S`` is the dense assembled stiffness (||T^r W||_V^2 = W^T S W) and
    ``U`` the dense Gram of the discrete trial norm.  The result is the
    square root of the smallest generalized eigenvalue of (S, U).
    """
    from scipy.linalg import eigh
    lam = eigh(S, U, eigvals_only=True, subset_by_index=[0, 0])[0]
    return InjectivityReport(float(np.sqrt(max(lam, 0.0))), threshold)
