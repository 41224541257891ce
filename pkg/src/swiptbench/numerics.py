"""Dense linear-algebra kernels shared by the learners."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NotPSD, NotSymmetric

CHOL_RIDGE = 1e-8
PINV_RCOND = 1e-10


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def weighted_lasso_objective(v, target, dictionary, metric, mu1):
    r = np.asarray(target) - np.asarray(dictionary) @ v
    return float(r @ np.asarray(metric) @ r + mu1 * np.abs(v).sum())


def weighted_lasso(target, dictionary, metric, mu1, tol=1e-8, max_iter=100_000, v0=None, history=None):
    """Minimize ||target - D v||^2_M + mu1 ||v||_1 by cyclic coordinate descent.

    The metric M is factored as L L^T (after a 1e-8 ridge) so the problem
    becomes ordinary LASSO on (L^T D, L^T target). Iteration stops when the
    largest coordinate change in a sweep falls below ``tol``. If ``history``
    is a list, the objective after every sweep is appended to it.
    """
    target = np.asarray(target, dtype=float)
    D = np.atleast_2d(np.asarray(dictionary, dtype=float))
    M = np.atleast_2d(np.asarray(metric, dtype=float))
    k, r = D.shape
    if target.shape != (k,) or M.shape != (k, k):
        raise DimensionMismatch(f"target {target.shape}, dictionary {D.shape}, metric {M.shape}")
    if mu1 < 0 or tol <= 0:
        raise ValueError("mu1 must be >= 0 and tol > 0")
    if not np.allclose(M, M.T, atol=1e-8 * max(1.0, np.abs(M).max())):
        raise NotPSD("metric is not symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (M + M.T) + CHOL_RIDGE * np.eye(k))
    except np.linalg.LinAlgError as exc:
        raise NotPSD("metric failed Cholesky factorization") from exc

    X = L.T @ D
    y = L.T @ target
    col_sq = np.einsum("ij,ij->j", X, X)
    v = np.zeros(r) if v0 is None else np.array(v0, dtype=float)
    resid = y - X @ v
    half_mu = 0.5 * mu1
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(r):
            if col_sq[j] == 0.0:
                if v[j] != 0.0:
                    max_delta = max(max_delta, abs(v[j]))
                    v[j] = 0.0
                continue
            old = v[j]
            rho_j = X[:, j] @ resid + col_sq[j] * old
            new = soft_threshold(rho_j, half_mu) / col_sq[j]
            if new != old:
                resid -= X[:, j] * (new - old)
                v[j] = new
                max_delta = max(max_delta, abs(new - old))
        if history is not None:
            history.append(float(resid @ resid + mu1 * np.abs(v).sum()))
        if max_delta < tol:
            break
    return v


def pseudoinverse(A, rcond=PINV_RCOND):
    """Moore-Penrose inverse via SVD, dropping singular values below rcond * s_max."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.T.shape)
    keep = s > rcond * s[0]
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    return (Vt.T * s_inv) @ U.T


def ridge_solve(X, Y, mu):
    """Return Z minimizing ||Y - Z X||_F^2 + mu ||Z||_F^2.

    Z = Y X^T (X X^T + mu I)^{-1} through a Cholesky solve; ``mu == 0`` uses
    the pseudoinverse form Y X^+.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[0] != X.shape[1] or Y.shape[1] != X.shape[0]:
        raise DimensionMismatch(f"X {X.shape}, Y {Y.shape}")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    if mu == 0:
        return Y @ pseudoinverse(X)
    G = X @ X.T + mu * np.eye(X.shape[0])
    C = np.linalg.cholesky(G)
    # Z G = Y X^T  <=>  G Z^T = X Y^T
    rhs = X @ Y.T
    Zt = np.linalg.solve(C.T, np.linalg.solve(C, rhs))
    return Zt.T


def psd_project(H, floor=1e-6, sym_tol=1e-8):
    """Symmetric matrix with eigenvalues clipped below at ``floor``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    scale = max(1.0, float(np.abs(H).max())) if H.size else 1.0
    if H.shape[0] != H.shape[1] or not np.allclose(H, H.T, atol=sym_tol * scale, rtol=0):
        raise NotSymmetric("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    if w.min() >= floor:
        return 0.5 * (H + H.T)
    w = np.maximum(w, floor)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
