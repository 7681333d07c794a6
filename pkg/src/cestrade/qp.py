"""Dense strictly convex quadratic programs by the dual active-set method.

Solves

    minimize    0.5 * x' G x + c' x
    subject to  A_eq x == b_eq
                A_in x >= b_in

with ``G`` symmetric positive definite (Goldfarb & Idnani, 1983). The method
starts from the unconstrained minimizer, keeps the iterate dual feasible and
adds violated constraints one at a time, so no feasible starting point is
needed. The problems solved here have at most a few hundred constraints and
fewer than 100 variables; the projected quantities are recomputed from scratch
at every step instead of being updated by Givens rotations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import ConvergenceError, InfeasibleError


@dataclass
class QPResult:
    x: NDArray[np.float64]
    value: float
    eq_multipliers: NDArray[np.float64]
    in_multipliers: NDArray[np.float64]
    active: list[int]  # indices into the inequality rows
    iterations: int


def _as_rows(A: ArrayLike | None, b: ArrayLike | None, n: int) -> tuple[NDArray, NDArray]:
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape != (b.size, n):
        raise ValueError(f"constraint matrix shape {A.shape} does not match ({b.size}, {n})")
    return A, b


def solve_qp(
    G: ArrayLike,
    c: ArrayLike,
    A_eq: ArrayLike | None = None,
    b_eq: ArrayLike | None = None,
    A_in: ArrayLike | None = None,
    b_in: ArrayLike | None = None,
    feas_tol: float = 1e-11,
    max_iter: int = 2000,
) -> QPResult:
    G = np.asarray(G, dtype=float)
    c = np.asarray(c, dtype=float)
    n = c.size
    if G.ndim == 1:
        Gi = np.diag(1.0 / G)
        G = np.diag(G)
    else:
        # raises LinAlgError if G is not positive definite
        L = np.linalg.cholesky(G)
        Li = np.linalg.inv(L)
        Gi = Li.T @ Li
    Ae, be = _as_rows(A_eq, b_eq, n)
    Ai, bi = _as_rows(A_in, b_in, n)
    n_eq = Ae.shape[0]
    rows = np.vstack([Ae, Ai])
    rhs = np.concatenate([be, bi])
    # sign applied to equality rows so their residual is driven up to zero
    sign = np.ones(rows.shape[0])
    tol = feas_tol * (1.0 + np.abs(rhs))

    x = -Gi @ c
    active: list[int] = []
    u = np.zeros(0)
    iterations = 0
    pending_eq = list(range(n_eq))

    while True:
        if pending_eq:
            p = pending_eq.pop(0)
            s_p = rows[p] @ x - rhs[p]
            sign[p] = -1.0 if s_p > 0 else 1.0
            s_p = sign[p] * s_p
        else:
            slack = rows[n_eq:] @ x - rhs[n_eq:]
            viol = slack + tol[n_eq:]
            if viol.size == 0 or viol.min() >= 0.0:
                break
            p = n_eq + int(np.argmin(viol))
            s_p = slack[p - n_eq]
        n_p = sign[p] * rows[p]
        u_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                raise ConvergenceError(f"QP active-set iteration cap {max_iter} reached")
            if active:
                N = sign[active, None] * rows[active]
                GiNt = Gi @ N.T
                B = N @ GiNt
                r = np.linalg.solve(B, GiNt.T @ n_p)
                z = Gi @ n_p - GiNt @ r
            else:
                r = np.zeros(0)
                z = Gi @ n_p
            nz = float(n_p @ z)
            scale = float(n_p @ Gi @ n_p)
            t2 = np.inf if nz <= 1e-13 * scale else -s_p / nz
            t1, k = np.inf, -1
            for j, (idx, rj) in enumerate(zip(active, r)):
                if idx >= n_eq and rj > 0.0:
                    ratio = u[j] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            if not np.isfinite(t1) and not np.isfinite(t2):
                if p < n_eq and abs(s_p) <= tol[p]:
                    break  # redundant equality
                raise InfeasibleError("quadratic program has no feasible point")
            if t2 <= t1:
                x = x + t2 * z
                u = np.append(u - t2 * r, u_p + t2)
                active.append(p)
                break
            if np.isfinite(t2):
                x = x + t1 * z
                s_p = s_p + t1 * nz
            u = u - t1 * r
            u_p += t1
            u = np.delete(u, k)
            active.pop(k)

    eq_mult = np.zeros(n_eq)
    in_mult = np.zeros(rows.shape[0] - n_eq)
    for idx, val in zip(active, u):
        if idx < n_eq:
            eq_mult[idx] = sign[idx] * val
        else:
            in_mult[idx - n_eq] = val
    value = float(0.5 * x @ G @ x + c @ x)
    return QPResult(
        x=x,
        value=value,
        eq_multipliers=eq_mult,
        in_multipliers=in_mult,
        active=sorted(i - n_eq for i in active if i >= n_eq),
        iterations=iterations,
    )
