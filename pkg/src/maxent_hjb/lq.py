"""Closed-form maximum-entropy solutions for control-affine and LQ problems.

The discounted algebraic Riccati equation

    lam P + P B R^-1 B' P - Q - P A - A' P = 0

is solved by Kleinman policy iteration: a Lyapunov solve for the current gain
followed by the gain update K = R^-1 B' P. Lyapunov equations are solved as
dense linear systems in svec (symmetric-vector) coordinates, which keeps the
iterate structurally symmetric and matches the n(n+1)/2 unknown count used by
the data-driven learners.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    NoConvergenceError,
    NotHurwitzError,
    NotPositiveDefiniteError,
)

RANK_TOL = 1e-8


# ---------------------------------------------------------------------------
# svec utilities (upper triangle, row-major, unscaled entries; the quadratic
# regressor carries the factor 2 on off-diagonal terms)

def svec_size(n: int) -> int:
    return n * (n + 1) // 2


def svec_index_pairs(n: int):
    return [(i, j) for i in range(n) for j in range(i, n)]


def svec(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    return np.array([mat[i, j] for i, j in svec_index_pairs(n)])


def svec_to_mat(v: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    for k, (i, j) in enumerate(svec_index_pairs(n)):
        out[i, j] = v[k]
        out[j, i] = v[k]
    return out


def quad_regressor(x: np.ndarray) -> np.ndarray:
    """s(x) with s(x) . svec(P) = x'Px: x_i^2 diagonal, 2 x_i x_j off-diagonal."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for i, j in svec_index_pairs(n):
        cols.append(x[..., i] * x[..., j] * (1.0 if i == j else 2.0))
    return np.stack(cols, axis=-1)


def reduce_kron_columns(mat: np.ndarray, n: int) -> np.ndarray:
    """Merge the (i,j)/(j,i) columns of an (l, n^2) Kronecker block to svec form."""
    cols = []
    for i, j in svec_index_pairs(n):
        if i == j:
            cols.append(mat[:, i * n + i])
        else:
            cols.append(mat[:, i * n + j] + mat[:, j * n + i])
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------

def spectral_abscissa(mat: np.ndarray) -> float:
    return float(np.max(np.real(np.linalg.eigvals(mat))))


def _check_rank(mat: np.ndarray, expected: int, label: str):
    sigma = np.linalg.svd(mat, compute_uv=False)
    rank = 0 if sigma[0] == 0 else int(np.sum(sigma > RANK_TOL * sigma[0]))
    if rank < expected:
        warnings.warn(
            f"{label} matrix has numerical rank {rank} < {expected}; the "
            "standing assumptions may fail for this problem",
            RuntimeWarning,
            stacklevel=3,
        )


@dataclass(frozen=True)
class LqProblem:
    """Discounted max-entropy LQ problem data."""

    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    lam: float
    alpha: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        q = np.asarray(self.q, dtype=float)
        r = np.asarray(self.r, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n) or b.shape[0] != n or q.shape != (n, n):
            raise DimensionMismatchError("inconsistent LQ matrix shapes")
        if self.lam < 0 or self.alpha <= 0:
            raise ValueError("need lam >= 0 and alpha > 0")
        try:
            np.linalg.cholesky(r)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("R must be positive definite") from exc
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        a_shift = a - 0.5 * self.lam * np.eye(n)
        ctrb = np.hstack([np.linalg.matrix_power(a_shift, k) @ b for k in range(n)])
        _check_rank(ctrb, n, "controllability")
        q_half = _psd_sqrt(q)
        obsv = np.vstack([q_half @ np.linalg.matrix_power(a_shift, k) for k in range(n)])
        _check_rank(obsv, n, "observability")

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


def _psd_sqrt(q: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(q)
    if np.min(vals) < -1e-10 * max(1.0, np.max(np.abs(vals))):
        raise NotPositiveDefiniteError("Q must be positive semidefinite")
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


@dataclass(frozen=True)
class RiccatiSolution:
    """Converged (P, K) with the Riccati residual actually achieved."""

    p: np.ndarray
    k: np.ndarray
    residual: float
    iterations: int

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.linalg.norm(p - p.T) > 1e-10 * max(1.0, np.linalg.norm(p)):
            raise NotPositiveDefiniteError("P is not symmetric")
        if np.min(np.linalg.eigvalsh(p)) <= 0:
            raise NotPositiveDefiniteError("P is not positive definite")


@dataclass(frozen=True)
class MaxEntLqPolicy:
    """Gaussian optimal policy N(-Kx, alpha R^-1) and its value function data."""

    gain: np.ndarray
    covariance: np.ndarray
    value_quadratic: np.ndarray
    value_constant: float


def solve_lyapunov(a_cl: np.ndarray, lam: float, m_rhs: np.ndarray) -> np.ndarray:
    """Unique symmetric P with A_cl'P + P A_cl - lam P + M = 0.

    Requires A_cl - (lam/2) I Hurwitz; solved densely in svec coordinates.
    """
    a_cl = np.asarray(a_cl, dtype=float)
    m_rhs = np.asarray(m_rhs, dtype=float)
    n = a_cl.shape[0]
    shifted = a_cl - 0.5 * lam * np.eye(n)
    abscissa = spectral_abscissa(shifted)
    if abscissa >= 0:
        raise NotHurwitzError(
            f"A_cl - (lam/2)I has spectral abscissa {abscissa:.3e} >= 0"
        )
    pairs = svec_index_pairs(n)
    dim = len(pairs)
    op = np.empty((dim, dim))
    for col, (i, j) in enumerate(pairs):
        basis = np.zeros((n, n))
        basis[i, j] = 1.0
        basis[j, i] = 1.0
        image = a_cl.T @ basis + basis @ a_cl - lam * basis
        op[:, col] = svec(image)
    try:
        sol = np.linalg.solve(op, -svec(m_rhs))
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceError("singular Lyapunov system") from exc
    p = svec_to_mat(sol, n)
    residual = np.linalg.norm(a_cl.T @ p + p @ a_cl - lam * p + m_rhs)
    if residual > 1e-10 * max(1.0, np.linalg.norm(m_rhs)):
        raise NoConvergenceError(f"Lyapunov residual {residual:.3e} too large")
    return p


def are_residual(prob: LqProblem, p: np.ndarray) -> float:
    """Frobenius residual of lam P + P B R^-1 B' P - Q - PA - A'P."""
    br = prob.b @ np.linalg.solve(prob.r, prob.b.T)
    res = prob.lam * p + p @ br @ p - prob.q - p @ prob.a - prob.a.T @ p
    return float(np.linalg.norm(res))


def kleinman_iterate(
    prob: LqProblem,
    k0: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iters: int = 500,
    history: list | None = None,
) -> RiccatiSolution:
    """Policy iteration for the discounted ARE from a stabilizing initial gain.

    ``history``, when given, receives every (P_k, K_{k+1}) pair in order.
    """
    n, m = prob.n, prob.m
    k = np.zeros((m, n)) if k0 is None else np.asarray(k0, dtype=float)
    shifted_abscissa = spectral_abscissa(prob.a - 0.5 * prob.lam * np.eye(n) - prob.b @ k)
    if shifted_abscissa >= 0:
        raise NotHurwitzError("initial gain K0 is not stabilizing")
    p_prev = None
    trace = []
    for it in range(1, max_iters + 1):
        a_cl = prob.a - prob.b @ k
        p = solve_lyapunov(a_cl, prob.lam, prob.q + k.T @ prob.r @ k)
        k = np.linalg.solve(prob.r, prob.b.T @ p)
        if history is not None:
            history.append((p, k))
        if p_prev is not None:
            delta = float(np.linalg.norm(p - p_prev))
            trace.append(delta)
            if delta < tol:
                return RiccatiSolution(
                    p=p, k=k, residual=are_residual(prob, p), iterations=it
                )
        p_prev = p
    raise NoConvergenceError(
        f"Kleinman iteration did not converge in {max_iters} steps", trace=trace
    )


def maxent_policy(prob: LqProblem, riccati: RiccatiSolution) -> MaxEntLqPolicy:
    """Optimal Gaussian policy and value data for the max-entropy LQ problem.

    The value function is V(x) = (1/2) x'Px + c with
    c = -(alpha / 2 lam) log((2 pi alpha)^m / det R), which needs lam > 0.
    """
    if prob.lam <= 0:
        raise ValueError(
            "the infinite-horizon value constant diverges at lam = 0; "
            "use finite-horizon cost evaluation instead"
        )
    m = prob.m
    sign, logdet_r = np.linalg.slogdet(prob.r)
    if sign <= 0:
        raise NotPositiveDefiniteError("det R must be positive")
    log_ratio = m * math.log(2.0 * math.pi * prob.alpha) - logdet_r
    c = -(prob.alpha / (2.0 * prob.lam)) * log_ratio
    return MaxEntLqPolicy(
        gain=riccati.k,
        covariance=prob.alpha * np.linalg.inv(prob.r),
        value_quadratic=riccati.p,
        value_constant=float(c),
    )


def quantitative_gaps(prob: LqProblem) -> dict:
    """Closed-form exploration prices of the max-entropy relaxation.

    w2_sq: squared 2-Wasserstein distance between the Gaussian optimum and the
    Dirac optimum, alpha tr(R^-1). entropy_per_time: the stationary policy
    entropy. pure_cost_overhead: the increase m alpha / (2 lam) of the pure
    running cost over the unregularized optimum.
    """
    m = prob.m
    r_inv = np.linalg.inv(prob.r)
    _, logdet_r = np.linalg.slogdet(prob.r)
    entropy = 0.5 * (m * math.log(2.0 * math.pi * prob.alpha) - logdet_r) + 0.5 * m
    out = {
        "w2_sq": float(prob.alpha * np.trace(r_inv)),
        "entropy_per_time": float(entropy),
    }
    if prob.lam > 0:
        out["pure_cost_overhead"] = float(m * prob.alpha / (2.0 * prob.lam))
    else:
        out["pure_cost_overhead"] = math.inf
    return out


@dataclass(frozen=True)
class GaussianAtState:
    """Per-state Gaussian control: mean vector and covariance."""

    mean: np.ndarray
    covariance: np.ndarray


def control_affine_policy(f2, v0_grad, r_mat, alpha, x) -> GaussianAtState:
    """Max-entropy optimal control N(-R^-1 f2(x)' grad V0(x), alpha R^-1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grad = np.atleast_1d(np.asarray(v0_grad(x), dtype=float))
    f2x = np.atleast_2d(np.asarray(f2(x), dtype=float))
    mean = -np.linalg.solve(r_mat, f2x.T @ grad)
    return GaussianAtState(mean=mean, covariance=alpha * np.linalg.inv(r_mat))


# ---------------------------------------------------------------------------
# matrix files and fixture systems

def save_matrix(path, mat: np.ndarray):
    """Plain-text matrix: first line 'n m', then whitespace-separated rows."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix(path) -> np.ndarray:
    with open(path, encoding="ascii") as fh:
        n, m = (int(tok) for tok in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (n, m):
        raise DimensionMismatchError(f"matrix file {path} shape {data.shape} != ({n},{m})")
    return data


def make_stable_system(n: int, m: int, seed: int, shift: float = 0.01, b_scale: float = 0.1):
    """Random system per the benchmark recipe: A shifted so every eigenvalue's
    real part is <= -shift, B scaled by b_scale."""
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.standard_normal((n, n)) / math.sqrt(n)
    a -= (spectral_abscissa(a) + shift) * np.eye(n)
    b = b_scale * rng.standard_normal((n, m))
    return a, b
