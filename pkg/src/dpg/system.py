"""Global assembly of the condensed system, solvers and conditioning.

The condensed matrix over the free DOFs is stored in three pieces::

    S = [[C + w w^T, c],
         [c^T,       s]]

``C`` is the sparse core over all free DOFs except the elasticity scalar
alpha, ``w`` is the dense rank-one term coming from the global test scalar
beta, and ``(c, s)`` is the alpha border.  For Poisson only ``C`` is
present.  Solves factor ``C`` with a sparse Cholesky and handle the two
corrections by Sherman-Morrison and a Schur complement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from .spaces import TrialDofMap
from .t2t import ElementOperators

log = logging.getLogger(__name__)


class NotSPDError(ArithmeticError):
    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


class SolverError(RuntimeError):
    pass


# {{{ sparse Cholesky

class SparseCholesky:
    """CHOLMOD factorization of a sparse SPD matrix (via cvxopt)."""

    def __init__(self, A: sp.spmatrix):
        from cvxopt import cholmod, spmatrix

        L = sp.tril(sp.csc_matrix(A)).tocoo()
        self.n = A.shape[0]
        M = spmatrix(L.data.tolist(), L.row.tolist(), L.col.tolist(),
                     (self.n, self.n))
        self._cholmod = cholmod
        try:
            self._F = cholmod.symbolic(M, uplo="L")
            cholmod.numeric(M, self._F)
        except ArithmeticError as exc:
            pivot = exc.args[0] if exc.args else None
            raise NotSPDError(
                f"matrix is not positive definite (breakdown at pivot {pivot})",
                pivot) from None

    def solve(self, b: np.ndarray) -> np.ndarray:
        from cvxopt import matrix
        b = np.asarray(b, dtype=float)
        B = matrix(np.array(b.reshape(self.n, -1), order="F"))
        self._cholmod.solve(self._F, B)
        return np.array(B).reshape(b.shape)

# }}}


@dataclass
class LinearSystem:
    core: sp.csc_matrix
    rhs: np.ndarray
    low_rank: np.ndarray | None = None
    border: np.ndarray | None = None
    corner: float | None = None
    x: np.ndarray | None = None
    info: dict = field(default_factory=dict)
    _factor: object = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.core.shape[0] + (1 if self.border is not None else 0)

    @property
    def nnz(self) -> int:
        return int(self.core.nnz)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        nc = self.core.shape[0]
        xr = x[:nc]
        y = np.empty_like(x)
        y[:nc] = self.core @ xr
        if self.low_rank is not None:
            y[:nc] += self.low_rank * (self.low_rank @ xr)
        if self.border is not None:
            y[:nc] += self.border * x[nc]
            y[nc] = self.border @ xr + self.corner * x[nc]
        return y

    def diagonal(self) -> np.ndarray:
        d = self.core.diagonal().copy()
        if self.low_rank is not None:
            d += self.low_rank ** 2
        if self.border is not None:
            d = np.append(d, self.corner)
        return d

    def to_dense(self) -> np.ndarray:
        nc = self.core.shape[0]
        S = np.zeros((self.n, self.n))
        S[:nc, :nc] = self.core.toarray()
        if self.low_rank is not None:
            S[:nc, :nc] += np.outer(self.low_rank, self.low_rank)
        if self.border is not None:
            S[:nc, nc] = self.border
            S[nc, :nc] = self.border
            S[nc, nc] = self.corner
        return S

    def as_operator(self) -> LinearOperator:
        return LinearOperator((self.n, self.n), matvec=self.matvec, dtype=float)

    # {{{ direct solve

    def factor(self):
        if self._factor is None:
            self._factor = _BorderedFactor(self)
        return self._factor

    def solve_with(self, b: np.ndarray) -> np.ndarray:
        return self.factor().solve(b)

    # }}}


class _BorderedFactor:
    def __init__(self, s: LinearSystem):
        self.s = s
        self.chol = SparseCholesky(s.core)
        self.nc = s.core.shape[0]
        self.z = None
        if s.low_rank is not None:
            self.z = self.chol.solve(s.low_rank)
            self.denom = 1.0 + s.low_rank @ self.z
        self.schur = None
        if s.border is not None:
            self.y = self._solve_m(s.border)
            self.schur = s.corner - s.border @ self.y
            if not self.schur > 0:
                raise NotSPDError(
                    f"matrix is not positive definite (Schur complement "
                    f"{self.schur:.3e} at pivot {self.nc + 1})", self.nc + 1)

    def _solve_m(self, b):
        x = self.chol.solve(b)
        if self.z is not None:
            x = x - self.z * (self.s.low_rank @ x) / self.denom
        return x

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if self.schur is None:
            return self._solve_m(b)
        br, ba = b[:self.nc], b[self.nc]
        xr0 = self._solve_m(br)
        xa = (ba - self.s.border @ xr0) / self.schur
        return np.append(xr0 - self.y * xa, xa)


# {{{ assembly

def assemble(dofmap: TrialDofMap, ops: ElementOperators) -> LinearSystem:
    """Scatter the condensed element matrices onto the free DOFs.

    Constrained DOFs carry homogeneous data and are dropped.
    """
    n = dofmap.n_free
    if n == 0:
        raise ValueError("no free degrees of freedom")
    dofs = dofmap.free_elem_dofs()
    if dofs.max() >= n or dofs.shape != ops.S.shape[:2]:
        raise IndexError("element DOF map does not match the element operators")
    keep = dofs >= 0
    nt, nl = dofs.shape
    rows = np.broadcast_to(dofs[:, :, None], (nt, nl, nl))
    cols = np.broadcast_to(dofs[:, None, :], (nt, nl, nl))
    mask = keep[:, :, None] & keep[:, None, :]
    S = sp.coo_matrix((ops.S[mask], (rows[mask], cols[mask])), shape=(n, n)).tocsc()
    S.sum_duplicates()
    S = (0.5 * (S + S.T)).tocsc()

    g = np.zeros(n)
    if ops.g is not None:
        np.add.at(g, dofs[keep], ops.g[keep])

    if dofmap.kind != "elasticity":
        return LinearSystem(S, g, info={"n": n, "nnz": int(S.nnz)})

    w = np.zeros(n)
    np.add.at(w, dofs[keep], ops.beta_row[keep])
    a = dofmap.free_index[dofmap.alpha_index]
    assert a == n - 1
    core = S[:a, :a].tocsc()
    border = S[:a, a].toarray().ravel()
    corner = float(S[a, a])
    return LinearSystem(core, g, low_rank=w[:a], border=border, corner=corner,
                        info={"n": n, "nnz": int(S.nnz)})


def dense_oracle(dofmap: TrialDofMap, ops: ElementOperators) -> np.ndarray:
    """Dense sum of scattered B_K^T G_K^{-1} B_K (plus the beta term)."""
    n = dofmap.n_free
    out = np.zeros((n, n))
    dofs = dofmap.free_elem_dofs()
    w = np.zeros(n)
    for K in range(dofs.shape[0]):
        Ginv_B = np.linalg.solve(ops.gram.G[K], ops.B[K])
        SK = ops.B[K].T @ Ginv_B
        for i, I in enumerate(dofs[K]):
            if I < 0:
                continue
            if ops.beta_row is not None:
                w[I] += ops.beta_row[K, i]
            for j, J in enumerate(dofs[K]):
                if J >= 0:
                    out[I, J] += SK[i, j]
    return out + np.outer(w, w)

# }}}


# {{{ solve

def solve_spd(system: LinearSystem, method: str = "chol", tol: float = 1e-12,
              maxiter: int | None = None) -> np.ndarray:
    b = system.rhs
    if not np.any(b):
        system.x = np.zeros(system.n)
        system.info["residual"] = 0.0
        return system.x
    if method == "chol":
        x = system.solve_with(b)
    elif method == "cg":
        d = system.diagonal()
        if np.any(d <= 0):
            raise NotSPDError("non-positive diagonal entry", int(np.argmin(d)) + 1)
        M = LinearOperator(system.core.shape if system.border is None else (system.n,) * 2,
                           matvec=lambda v: v / d, dtype=float)
        x, status = cg(system.as_operator(), b, rtol=tol, atol=0.0, M=M,
                       maxiter=maxiter or 20 * system.n)
        if status != 0:
            raise SolverError(f"CG did not converge (status {status})")
    else:
        raise ValueError(f"unknown solver {method!r}")
    res = np.linalg.norm(system.matvec(x) - b) / np.linalg.norm(b)
    system.x = x
    system.info["residual"] = float(res)
    return x

# }}}


# {{{ conditioning

@dataclass(frozen=True)
class ConditionEstimate:
    kappa: float
    lam_max: float
    lam_min: float
    iterations: tuple[int, int]
    converged: bool


def condition_estimate(system: LinearSystem, rtol: float = 1e-6,
                       maxiter: int = 5000, seed: int = 0) -> ConditionEstimate:
    """Power iteration for lambda_max, inverse iteration for lambda_min."""
    n = system.n
    rng = np.random.default_rng(seed)
    if n == 1:
        lam = float(system.to_dense()[0, 0])
        return ConditionEstimate(1.0, lam, lam, (0, 0), True)

    def iterate(apply):
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        lam_old = 0.0
        for it in range(1, maxiter + 1):
            y = apply(v)
            lam = float(v @ y)
            v = y / np.linalg.norm(y)
            if it > 1 and abs(lam - lam_old) <= rtol * abs(lam):
                return lam, it, True
            lam_old = lam
        return lam, maxiter, False

    lmax, it1, ok1 = iterate(system.matvec)
    mu, it2, ok2 = iterate(system.solve_with)
    lmin = 1.0 / mu
    if not (ok1 and ok2):
        log.warning("condition estimate hit the iteration cap (%d, %d)", it1, it2)
    return ConditionEstimate(lmax / lmin, lmax, lmin, (it1, it2), ok1 and ok2)


def system_from_dense(A: np.ndarray) -> LinearSystem:
    """Wrap a small dense SPD matrix (test hook for the estimators)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return LinearSystem(sp.csc_matrix(A), np.zeros(A.shape[0]))

# }}}


def export_matrix(system: LinearSystem, path) -> None:
    """Write the lower triangle in "i j value" form (1-based)."""
    S = sp.tril(sp.csc_matrix(system.to_dense() if system.low_rank is not None
                              else system.core)).tocoo()
    order = np.lexsort((S.row, S.col))
    with open(path, "w") as fh:
        fh.write(f"%%symmetric {system.n} {S.nnz}\n")
        for k in order:
            fh.write(f"{S.row[k] + 1} {S.col[k] + 1} {float(S.data[k])!r}\n")
