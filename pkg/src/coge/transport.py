"""Entropic optimal transport between weighted embedding sets.

Log-domain Sinkhorn for the regularized problem

    min_P <P, C> + eps * KL(P | a x b),   P 1 = a,  P^T 1 = b,

with dual potentials (f, g) satisfying P_ij = a_i b_j exp((f_i + g_j - C_ij)/eps).
The gradient of the regularized optimum w.r.t. the source marginal a is f (up
to an additive constant, which the simplex constraint absorbs); that is what
the explainer differentiates through. ``TransportResult.value`` reports the
plain transport cost <P, C> so distances stay comparable across graph sizes,
while ``dual_value`` = <f,a> + <g,b> is the regularized optimum itself and is
the quantity the debiased divergence is built from.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .gnn import EmbeddingSet


class SinkhornNumericalError(FloatingPointError):
    """NaN/Inf appeared in the Sinkhorn iterates."""


def _rows(Z) -> np.ndarray:
    if isinstance(Z, EmbeddingSet):
        return Z.Z
    return np.asarray(Z, dtype=np.float64)


def cost_matrix(Z_src, Z_tgt) -> np.ndarray:
    """Pairwise L2 distances between embedding rows."""
    A = _rows(Z_src)
    B = _rows(Z_tgt)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"embedding widths differ: {A.shape[1]} vs {B.shape[1]}")
    return cdist(A, B)


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def default_epsilon(C: np.ndarray, scale: float = 0.05) -> float:
    """Per-problem regularization: a fixed fraction of the mean cost."""
    return scale * float(np.mean(C))


@dataclass
class TransportProblem:
    a: np.ndarray  # source weights, sum 1
    b: np.ndarray  # target weights, sum 1
    C: np.ndarray  # (n, m) cost matrix, nonnegative

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64)
        n, m = self.a.shape[0], self.b.shape[0]
        if self.C.shape != (n, m):
            raise ValueError(f"cost matrix shape {self.C.shape} != ({n}, {m})")
        if np.any(self.a < 0) or np.any(self.b < 0):
            raise ValueError("marginal weights must be nonnegative")
        if abs(self.a.sum() - 1.0) > 1e-12 or abs(self.b.sum() - 1.0) > 1e-12:
            raise ValueError("marginals must each sum to 1 within 1e-12")
        if not np.all(np.isfinite(self.C)) or np.any(self.C < 0):
            raise ValueError("cost matrix must be finite and nonnegative")


@dataclass
class TransportResult:
    value: float                 # <plan, C>
    plan: np.ndarray             # (n, m), marginally feasible
    f: np.ndarray                # source potential, centered: sum(a * f) = 0
    g: np.ndarray                # target potential
    iterations: int
    converged: bool
    dual_value: float = 0.0      # <f, a> + <g, b>, the regularized optimum
    violation_trace: list[float] = field(default_factory=list)


def _logsumexp(M: np.ndarray, axis: int) -> np.ndarray:
    mx = M.max(axis=axis, keepdims=True)
    out = mx + np.log(np.exp(M - mx).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _sinkhorn_loop(loga, logb, br, Cr, eps, tol, max_iter, g0):
    """Alternate the two soft-min updates at one eps until the worst column
    violation of the (row-feasible) plan drops below tol."""
    # Row update: f = -eps*LSE_j[(g - C)/eps + log b]; column update likewise.
    Kb = (-Cr) / eps + logb[None, :]
    Ka = (-Cr) / eps + loga[:, None]
    g = g0
    f = np.zeros(len(loga))
    converged = False
    iterations = 0
    trace: list[float] = []
    for it in range(1, max_iter + 1):
        iterations = it
        f = -eps * _logsumexp(Kb + g[None, :] / eps, axis=1)   # row marginals now exact
        g_star = -eps * _logsumexp(Ka + f[:, None] / eps, axis=0)
        # Column sums of plan(f, g) equal b * exp((g - g_star)/eps).
        viol = float(np.max(br * np.abs(np.expm1((g - g_star) / eps))))
        if not np.isfinite(viol):
            raise SinkhornNumericalError(f"NaN/Inf in Sinkhorn iterates (eps={eps})")
        trace.append(viol)
        if viol <= tol:
            converged = True
            break
        g = g_star
    return f, g, iterations, converged, trace


def _solve_potentials(a, b, C, eps, tol, max_iter, init_g=None):
    """Lean solver for strictly positive marginals: returns (f, g, dual value,
    iterations, converged, violation trace) without materializing the plan.
    Anneals eps from a quarter of the mean cost downwards when starting cold
    at a small eps; warm starts skip the warm-up."""
    loga = np.log(a)
    logb = np.log(b)
    warmup = 0
    if init_g is not None:
        g = np.asarray(init_g, dtype=np.float64)
    else:
        g = np.zeros(len(b))
        mean_c = float(np.mean(C))
        if eps < 0.02 * mean_c:
            eps_stage = 0.25 * mean_c
            while eps_stage > eps * 1.0001:
                _, g, its, _, _ = _sinkhorn_loop(
                    loga, logb, b, C, eps_stage, max(tol, 1e-4), 200, g)
                warmup += its
                eps_stage *= 0.25
    f, g, iterations, converged, trace = _sinkhorn_loop(loga, logb, b, C, eps, tol, max_iter, g)
    dual = float(f @ a + g @ b)
    return f, g, dual, iterations + warmup, converged, trace


def sinkhorn(
    p: TransportProblem,
    eps: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
    init: tuple[np.ndarray, np.ndarray] | None = None,
) -> TransportResult:
    """Log-domain Sinkhorn until the worst marginal violation is <= tol.

    Zero-weight atoms are dropped before iterating and reinserted afterwards
    with zero plan rows/columns; their potentials are filled in with one extra
    soft-min step so the marginal gradient stays defined on the boundary.
    ``init`` warm-starts the potentials (full-sized arrays).
    """
    a, b, C = p.a, p.b, p.C
    n, m = C.shape
    keep_i = np.flatnonzero(a > 0)
    keep_j = np.flatnonzero(b > 0)
    ar, br = a[keep_i], b[keep_j]
    Cr = C[np.ix_(keep_i, keep_j)]
    if eps is None:
        eps = default_epsilon(C)
    if eps <= 0:
        if np.any(C > 0):
            raise ValueError("eps must be positive")
        # All-zero cost matrix: any feasible plan is optimal at zero cost.
        plan = np.outer(a, b)
        return TransportResult(0.0, plan, np.zeros(n), np.zeros(m), 0, True, 0.0, [])
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    init_g = None
    if init is not None:
        init_g = np.asarray(init[1], dtype=np.float64)[keep_j]
    f, g, _, iterations, converged, trace = _solve_potentials(
        ar, br, Cr, eps, tol, max_iter, init_g)
    loga = np.log(ar)
    logb = np.log(br)

    # Extend potentials to dropped atoms via one soft-min step each.
    f_full = np.empty(n)
    g_full = np.empty(m)
    f_full[keep_i] = f
    g_full[keep_j] = g
    drop_i = np.setdiff1d(np.arange(n), keep_i, assume_unique=True)
    drop_j = np.setdiff1d(np.arange(m), keep_j, assume_unique=True)
    if drop_i.size:
        M = (g[None, :] - C[np.ix_(drop_i, keep_j)]) / eps + logb[None, :]
        f_full[drop_i] = -eps * _logsumexp(M, axis=1)
    if drop_j.size:
        M = (f[:, None] - C[np.ix_(keep_i, drop_j)]) / eps + loga[:, None]
        g_full[drop_j] = -eps * _logsumexp(M, axis=0)

    plan = np.zeros((n, m))
    plan[np.ix_(keep_i, keep_j)] = np.exp(
        (f[:, None] + g[None, :] - Cr) / eps + loga[:, None] + logb[None, :]
    )

    # Center: shift the additive gauge so sum(a * f) = 0; f + g is unchanged.
    shift = float(f_full @ a)
    f_full -= shift
    g_full += shift

    value = float(np.sum(plan * C))
    dual = float(f_full @ a + g_full @ b)
    return TransportResult(value, plan, f_full, g_full, iterations, converged, dual, trace)


def exact_ot(p: TransportProblem) -> float:
    """Brute-force oracle: uniform-to-uniform OT equals (1/n) times the best
    of the n! permutation assignments (Birkhoff), so exhaustive enumeration is
    sound. Restricted to n = m <= 7."""
    n, m = p.C.shape
    if n != m:
        raise ValueError("exact oracle requires n == m")
    if n > 7:
        raise ValueError("exact oracle restricted to n <= 7")
    if not (np.allclose(p.a, 1.0 / n, atol=1e-9) and np.allclose(p.b, 1.0 / n, atol=1e-9)):
        raise ValueError("exact oracle requires uniform marginals")
    best = np.inf
    idx = np.arange(n)
    for perm in itertools.permutations(range(n)):
        cost = float(p.C[idx, perm].sum())
        if cost < best:
            best = cost
    return best / n


def marginal_gradient(res: TransportResult) -> np.ndarray:
    """Gradient of the regularized OT value w.r.t. the source marginal, valid
    along simplex-tangent directions: the centered source potential."""
    if not res.converged:
        raise ValueError("marginal gradient requires a converged transport result")
    return res.f


def sinkhorn_divergence(
    Z_A,
    w_A: np.ndarray,
    Z_B,
    w_B: np.ndarray,
    eps: float | None = None,
    tol: float = 1e-9,
    max_iter: int = 1000,
    eps_scale: float = 0.05,
):
    """Debiased divergence S(alpha, beta) = OT(a,b) - OT(a,a)/2 - OT(b,b)/2,
    assembled from the regularized (dual) optima so that S is nonnegative and
    exactly zero when the two weighted sets coincide.

    Returns (value, gradient w.r.t. w_A). The gradient is f_ab - (f_aa+g_aa)/2,
    exact along simplex-tangent directions. One eps is shared by the three
    sub-problems; by default it is eps_scale * mean of the cross cost matrix.
    """
    ZA, ZB = _rows(Z_A), _rows(Z_B)
    w_A = np.asarray(w_A, dtype=np.float64)
    w_B = np.asarray(w_B, dtype=np.float64)
    if ZA.shape == ZB.shape and np.array_equal(ZA, ZB) and np.array_equal(w_A, w_B):
        # S(alpha, alpha) = 0 and the tangent gradient vanishes at the minimum.
        return 0.0, np.zeros(len(w_A))
    C_ab = cost_matrix(ZA, ZB)
    if eps is None:
        eps = default_epsilon(C_ab, eps_scale)
    res_ab = sinkhorn(TransportProblem(w_A, w_B, C_ab), eps, tol, max_iter)
    res_aa = sinkhorn(TransportProblem(w_A, w_A, cost_matrix(ZA, ZA)), eps, tol, max_iter)
    res_bb = sinkhorn(TransportProblem(w_B, w_B, cost_matrix(ZB, ZB)), eps, tol, max_iter)
    value = res_ab.dual_value - 0.5 * res_aa.dual_value - 0.5 * res_bb.dual_value
    grad = res_ab.f - 0.5 * (res_aa.f + res_aa.g)
    return float(value), grad
