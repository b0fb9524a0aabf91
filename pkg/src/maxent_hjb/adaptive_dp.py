"""Data-driven learning of the max-entropy LQ optimal pair without (A, B).

Both learners integrate the identity satisfied by e^{-lam t} x'P_k x along the
closed loop over windows [t_i, t_i + dt] and solve the stacked rows for
(svec(P_k), vec(K_{k+1})) by least squares. The on-policy variant re-collects
windows under the freshest gain every iteration; the off-policy variant
collects once under the initial gain and reuses the same data matrices,
rebuilding only the gain-dependent coefficient blocks and right-hand side.

Exploration comes from the max-entropy policy itself: controls are sampled from
N(-K x, alpha R^-1) at every integrator substep, and the sampled realization
u(s) + K x(s) stands in for the exploration-measure mean in the regressors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory, make_rng
from .errors import (
    DimensionMismatchError,
    DivergedTrajectoryError,
    RankDeficientError,
    RankStallError,
)
from .lq import quad_regressor, reduce_kron_columns, svec_size, svec_to_mat

DIVERGENCE_NORM = 1e8


@dataclass(frozen=True)
class LearnerConfig:
    """Window length, integration substeps, and stopping rules."""

    delta_t: float = 0.01
    n_sub: int = 10
    alpha: float = 1.0
    lam: float = 1e-10
    eps_stop: float = 1e-6
    max_iters: int = 50
    seed: int = 0
    rank_tol: float = 1e-12
    window_budget_factor: int = 10
    extra_windows: int = 0
    eval_horizon: float = 20.0
    settle_band: float = 1.0

    def __post_init__(self):
        if self.delta_t <= 0 or self.n_sub < 2:
            raise ValueError("need delta_t > 0 and n_sub >= 2")
        if self.alpha <= 0 or self.lam < 0 or self.eps_stop <= 0:
            raise ValueError("need alpha > 0, lam >= 0, eps_stop > 0")

    @property
    def substep(self) -> float:
        return self.delta_t / self.n_sub


@dataclass
class OnPolicyRows:
    """Stacked regression rows for one on-policy iteration."""

    theta: np.ndarray
    xi: np.ndarray
    n: int
    m: int

    @property
    def windows_used(self) -> int:
        return self.theta.shape[0]


@dataclass
class OffPolicyRows:
    """Endpoint and integral data matrices shared by all off-policy iterations."""

    delta: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    n: int
    m: int

    @property
    def windows_used(self) -> int:
        return self.delta.shape[0]


@dataclass
class LearnerReport:
    """Learned iterates plus the sample-efficiency and closed-loop metrics."""

    iterates: list
    samples_per_iter: list
    total_samples: int
    learning_time: float
    settling_time: float
    total_running_cost: float
    converged: bool
    rank_counts: list = field(default_factory=list)
    p_final: np.ndarray = field(repr=False, default=None)
    k_final: np.ndarray = field(repr=False, default=None)
    trajectory: Trajectory = field(repr=False, default=None)

    def to_json(self, path):
        payload = {
            "converged": self.converged,
            "iterations": len(self.iterates),
            "samples_per_iter": list(self.samples_per_iter),
            "total_samples": self.total_samples,
            "learning_time": self.learning_time,
            # strict JSON has no Infinity; an unsettled run serializes as null
            "settling_time": self.settling_time if math.isfinite(self.settling_time) else None,
            "total_running_cost": self.total_running_cost,
            "p_norms": [float(np.linalg.norm(p)) for p, _ in self.iterates],
            "k_norms": [float(np.linalg.norm(k)) for _, k in self.iterates],
            "p_final": None if self.p_final is None else self.p_final.tolist(),
            "k_final": None if self.k_final is None else self.k_final.tolist(),
        }
        with open(path, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


class HiddenLqSystem:
    """Simulation harness that holds (A, B) privately.

    The learners only see the dimensions, the cost matrices, and the simulated
    samples; the hidden truth is exposed solely through harness-side checks
    used by tests (closed-loop abscissa, oracle gain).
    """

    def __init__(self, a, b, q, r):
        self._a = np.asarray(a, dtype=float)
        self._b = np.asarray(b, dtype=float)
        self.q = np.asarray(q, dtype=float)
        self.r = np.asarray(r, dtype=float)
        if self._a.shape[0] != self._b.shape[0]:
            raise DimensionMismatchError("A and B row counts differ")

    @property
    def n(self) -> int:
        return self._a.shape[0]

    @property
    def m(self) -> int:
        return self._b.shape[1]

    def drift(self, x, u):
        return self._a @ x + self._b @ u

    # harness-side diagnostics (not available to the learner logic)

    def closed_loop_abscissa(self, k_gain, lam) -> float:
        mat = self._a - 0.5 * lam * np.eye(self.n) - self._b @ k_gain
        return float(np.max(np.real(np.linalg.eigvals(mat))))

    def hidden_matrices(self):
        return self._a.copy(), self._b.copy()


class _Stream:
    """Continuous simulation record: one substep per entry."""

    def __init__(self, x0, n, m):
        self.times = [0.0]
        self.states = [np.asarray(x0, dtype=float).copy()]
        self.controls = []
        self.n = n
        self.m = m

    def append(self, t, x, u):
        self.times.append(t)
        self.states.append(x.copy())
        self.controls.append(u.copy())

    def as_trajectory(self, seed) -> Trajectory:
        controls = self.controls + [self.controls[-1]] if self.controls else [np.zeros(self.m)]
        return Trajectory(
            times=np.asarray(self.times),
            states=np.asarray(self.states),
            controls=np.asarray(controls),
            seed=seed,
        )


def _simulate_substeps(system, stream, k_gain, chol_sigma, h, count, rng, explore=None):
    """Advance the stream ``count`` substeps under u = -Kx + noise.

    Gaussian exploration draws noise through ``chol_sigma``; a deterministic
    ``explore`` callable (sinusoidal baseline) replaces it when given. Returns
    the (times, states) slice covering the new window, both endpoints included.
    """
    start = len(stream.times) - 1
    x = stream.states[-1].copy()
    t = stream.times[-1]
    for _ in range(count):
        mean = -(k_gain @ x)
        if explore is not None:
            u = mean + explore(t)
        else:
            u = mean + chol_sigma @ rng.standard_normal(system.m)
        x = x + h * system.drift(x, u)
        t += h
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            raise DivergedTrajectoryError(len(stream.times))
        stream.append(t, x, u)
    times = np.asarray(stream.times[start : start + count + 1])
    states = np.asarray(stream.states[start : start + count + 1])
    return times, states


def _window_controls(stream, start, count):
    """Controls at samples start..start+count; the last is the next draw."""
    ctr = stream.controls
    last = ctr[start + count] if len(ctr) > start + count else ctr[start + count - 1]
    return np.asarray(ctr[start : start + count] + [last])


def collect_onpolicy_window(times, states, controls, k_gain, q_mat, r_mat, lam):
    """One (theta, xi) row from a window's samples.

    theta = [endpoint difference of e^{-lam t} s(x),
             -2 integral of e^{-lam s} kron(x, R (u + K x))]
    xi    = -integral of e^{-lam s} x'(Q + K'RK)x

    The sampled control realization u(s) + K x(s) realizes the exploration
    measure's mean. Controls are zero-order held: controls[j] acts on
    [t_j, t_{j+1}), so control-carrying integrands use per-substep midpoints in
    x with the held u_j (a trapezoid on the raw samples would pair u_{j+1} with
    the interval where u_j acted, burying the regressor under sampling noise).
    State-only integrands use the plain trapezoid rule.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    k_gain = np.asarray(k_gain, dtype=float)
    q_mat = np.asarray(q_mat, dtype=float)
    r_mat = np.asarray(r_mat, dtype=float)
    if not (len(times) == len(states) == len(controls)) or len(times) < 2:
        raise DimensionMismatchError("window samples are misaligned")
    w = np.exp(-lam * times)
    endpoint = quad_regressor(states[-1]) * w[-1] - quad_regressor(states[0]) * w[0]

    dt_sub = np.diff(times)
    x_mid = 0.5 * (states[:-1] + states[1:])
    w_mid = np.exp(-lam * 0.5 * (times[:-1] + times[1:]))
    u_held = controls[:-1]
    eps = u_held + x_mid @ k_gain.T  # u + Kx on each hold interval
    r_eps = eps @ r_mat.T
    kron_rows = np.einsum("ti,tj->tij", x_mid, r_eps).reshape(len(dt_sub), -1)
    gain_block = -2.0 * np.sum((dt_sub * w_mid)[:, None] * kron_rows, axis=0)

    qk = q_mat + k_gain.T @ r_mat @ k_gain
    quad = np.einsum("ti,ij,tj->t", states, qk, states)
    xi = -float(np.trapezoid(w * quad, times))
    return np.concatenate([endpoint, gain_block]), xi


def collect_offpolicy_window(times, states, controls, lam):
    """One (delta, i1, i2) row triple from a window's samples.

    As in the on-policy collector, the control integral i2 respects the
    zero-order hold (u_j paired with the midpoint state of its interval);
    the state-only integral i1 uses the trapezoid rule.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if not (len(times) == len(states) == len(controls)) or len(times) < 2:
        raise DimensionMismatchError("window samples are misaligned")
    w = np.exp(-lam * times)
    delta = quad_regressor(states[-1]) * w[-1] - quad_regressor(states[0]) * w[0]
    xx = np.einsum("ti,tj->tij", states, states).reshape(len(times), -1)
    i1 = np.trapezoid(w[:, None] * xx, times, axis=0)
    dt_sub = np.diff(times)
    x_mid = 0.5 * (states[:-1] + states[1:])
    w_mid = np.exp(-lam * 0.5 * (times[:-1] + times[1:]))
    xu = np.einsum("ti,tj->tij", x_mid, controls[:-1]).reshape(len(dt_sub), -1)
    i2 = np.sum((dt_sub * w_mid)[:, None] * xu, axis=0)
    return delta, i1, i2


def _numerical_rank(mat, rank_tol):
    sigma = np.linalg.svd(mat, compute_uv=False)
    if sigma[0] == 0.0:
        return 0
    return int(np.sum(sigma > rank_tol * sigma[0]))


def solve_onpolicy(rows: OnPolicyRows, rank_tol: float = 1e-12):
    """Least-squares solve of theta [svec(P); vec(K)] = xi."""
    needed = svec_size(rows.n) + rows.m * rows.n
    rank = _numerical_rank(rows.theta, rank_tol)
    if rank < needed:
        raise RankDeficientError(rank, needed)
    sol, *_ = np.linalg.lstsq(rows.theta, rows.xi, rcond=None)
    p = svec_to_mat(sol[: svec_size(rows.n)], rows.n)
    k = sol[svec_size(rows.n) :].reshape(rows.n, rows.m).T  # vec is column-major
    return p, k


def solve_offpolicy(rows: OffPolicyRows, k_gain, q_mat, r_mat, rank_tol: float = 1e-12):
    """Rebuild the gain-dependent blocks for K_k and solve for (P_k, K_{k+1})."""
    n, m = rows.n, rows.m
    needed = svec_size(n) + m * n
    i1_svec = reduce_kron_columns(rows.i1, n)
    rank = _numerical_rank(np.hstack([i1_svec, rows.i2]), rank_tol)
    if rank < needed:
        raise RankDeficientError(rank, needed)
    gain_block = -2.0 * (
        rows.i1 @ np.kron(np.eye(n), k_gain.T @ r_mat) + rows.i2 @ np.kron(np.eye(n), r_mat)
    )
    coeff = np.hstack([rows.delta, gain_block])
    qk = q_mat + k_gain.T @ r_mat @ k_gain
    rhs = -rows.i1 @ qk.flatten(order="F")
    sol, *_ = np.linalg.lstsq(coeff, rhs, rcond=None)
    p = svec_to_mat(sol[: svec_size(n)], n)
    k = sol[svec_size(n) :].reshape(n, m).T
    return p, k


def sinusoidal_baseline(a: float, omega_bar: float, n_terms: int, seed: int, channels: int = 1):
    """Deterministic-given-seed exploration e(t) = a sum_k sin(w_k t) per channel.

    Frequencies are drawn uniformly from (-omega_bar, omega_bar), independently
    for each control channel so multi-input systems stay fully excited.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    rng = make_rng(seed)
    omegas = rng.uniform(-omega_bar, omega_bar, size=(channels, n_terms))

    def signal(t):
        return a * np.sin(omegas * t).sum(axis=1)

    signal.omegas = omegas
    return signal


def settling_time(traj: Trajectory, band: float) -> float:
    """Earliest recorded time after which every |x_i| stays within the band."""
    if len(traj) == 0:
        raise ValueError("trajectory is empty")
    within = np.max(np.abs(traj.states), axis=1) <= band
    violations = np.where(~within)[0]
    if len(violations) == 0:
        return float(traj.times[0])
    last = int(violations[-1])
    if last == len(traj) - 1:
        return math.inf
    return float(traj.times[last + 1])


def _rollout_to_horizon(system, stream, k_gain, config):
    """Continue under the mean control u = -Kx to the evaluation horizon."""
    h = config.substep
    x = stream.states[-1].copy()
    t = stream.times[-1]
    while t < config.eval_horizon - 1e-12:
        u = -(k_gain @ x)
        x = x + h * system.drift(x, u)
        t += h
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
            raise DivergedTrajectoryError(len(stream.times))
        stream.append(t, x, u)


def _running_cost_increment(system, states, controls, times, lam):
    q_mat, r_mat = system.q, system.r
    vals = 0.5 * (
        np.einsum("ti,ij,tj->t", states, q_mat, states)
        + np.einsum("ti,ij,tj->t", controls, r_mat, controls)
    )
    return float(np.trapezoid(np.exp(-lam * times) * vals, times))


def run_onpolicy(
    system: HiddenLqSystem,
    k0: np.ndarray,
    config: LearnerConfig,
    x0=None,
    explore=None,
) -> LearnerReport:
    """Per iteration: collect windows under N(-K_k x, alpha R^-1) until the
    regression rank condition holds, solve, update the gain; stop when
    successive P iterates settle below eps_stop.

    ``explore`` switches Gaussian exploration off in favor of a deterministic
    additive signal (the sinusoidal comparison baseline).
    """
    n, m = system.n, system.m
    needed = svec_size(n) + m * n
    k_gain = np.asarray(k0, dtype=float).copy()
    sigma = config.alpha * np.linalg.inv(system.r)
    chol_sigma = np.linalg.cholesky(sigma)
    rng = make_rng(config.seed)
    x0 = np.ones(n) if x0 is None else np.asarray(x0, dtype=float)
    stream = _Stream(x0, n, m)
    h = config.substep

    iterates = []
    samples_per_iter = []
    rank_counts = []
    converged = False
    p_prev = None
    for _ in range(config.max_iters):
        theta_rows = []
        xi_rows = []
        windows = 0
        rank_at = None
        budget = config.window_budget_factor * needed
        while True:
            start = len(stream.times) - 1
            times, states = _simulate_substeps(
                system, stream, k_gain, chol_sigma, h, config.n_sub, rng, explore
            )
            controls = _window_controls(stream, start, config.n_sub)
            theta_row, xi_row = collect_onpolicy_window(
                times, states, controls, k_gain, system.q, system.r, config.lam
            )
            theta_rows.append(theta_row)
            xi_rows.append(xi_row)
            windows += 1
            if rank_at is None and windows >= needed:
                theta = np.asarray(theta_rows)
                if _numerical_rank(theta, config.rank_tol) >= needed:
                    rank_at = windows
            if rank_at is not None and windows >= rank_at + config.extra_windows:
                break
            if windows > budget:
                raise RankStallError(
                    f"rank condition unmet after {windows} windows (budget {budget})"
                )
        rows = OnPolicyRows(
            theta=np.asarray(theta_rows), xi=np.asarray(xi_rows), n=n, m=m
        )
        p_k, k_next = solve_onpolicy(rows, config.rank_tol)
        iterates.append((p_k, k_next))
        samples_per_iter.append(windows)
        rank_counts.append(rank_at)
        k_gain = k_next
        if p_prev is not None and np.linalg.norm(p_k - p_prev) < config.eps_stop:
            converged = True
            break
        p_prev = p_k
    return _finalize_report(
        system, stream, k_gain, config, iterates, samples_per_iter, converged, rank_counts
    )


def run_offpolicy(
    system: HiddenLqSystem,
    k0: np.ndarray,
    config: LearnerConfig,
    x0=None,
    explore=None,
) -> LearnerReport:
    """Collect once under N(-K0 x, alpha R^-1) until the data matrices reach
    full rank, then iterate the off-policy solve to convergence on that data."""
    n, m = system.n, system.m
    needed = svec_size(n) + m * n
    k_gain = np.asarray(k0, dtype=float).copy()
    sigma = config.alpha * np.linalg.inv(system.r)
    chol_sigma = np.linalg.cholesky(sigma)
    rng = make_rng(config.seed)
    x0 = np.ones(n) if x0 is None else np.asarray(x0, dtype=float)
    stream = _Stream(x0, n, m)
    h = config.substep

    delta_rows, i1_rows, i2_rows = [], [], []
    windows = 0
    rank_at = None
    budget = config.window_budget_factor * needed
    while True:
        start = len(stream.times) - 1
        times, states = _simulate_substeps(
            system, stream, k_gain, chol_sigma, h, config.n_sub, rng, explore
        )
        controls = _window_controls(stream, start, config.n_sub)
        d_row, i1_row, i2_row = collect_offpolicy_window(times, states, controls, config.lam)
        delta_rows.append(d_row)
        i1_rows.append(i1_row)
        i2_rows.append(i2_row)
        windows += 1
        if rank_at is None and windows >= needed:
            i1_svec = reduce_kron_columns(np.asarray(i1_rows), n)
            stacked = np.hstack([i1_svec, np.asarray(i2_rows)])
            if _numerical_rank(stacked, config.rank_tol) >= needed:
                rank_at = windows
        if rank_at is not None and windows >= rank_at + config.extra_windows:
            break
        if windows > budget:
            raise RankStallError(
                f"rank condition unmet after {windows} windows (budget {budget})"
            )
    rows = OffPolicyRows(
        delta=np.asarray(delta_rows),
        i1=np.asarray(i1_rows),
        i2=np.asarray(i2_rows),
        n=n,
        m=m,
    )
    iterates = []
    converged = False
    p_prev = None
    k_iter = k_gain
    for _ in range(config.max_iters):
        p_k, k_next = solve_offpolicy(rows, k_iter, system.q, system.r, config.rank_tol)
        iterates.append((p_k, k_next))
        k_iter = k_next
        if p_prev is not None and np.linalg.norm(p_k - p_prev) < config.eps_stop:
            converged = True
            break
        p_prev = p_k
    samples_per_iter = [windows] + [0] * (len(iterates) - 1)
    return _finalize_report(
        system, stream, k_iter, config, iterates, samples_per_iter, converged, [rank_at]
    )


def _finalize_report(
    system, stream, k_gain, config, iterates, samples_per_iter, converged, rank_counts
):
    _rollout_to_horizon(system, stream, k_gain, config)
    traj = stream.as_trajectory(config.seed)
    total_cost = _running_cost_increment(
        system, traj.states, traj.controls, traj.times, config.lam
    )
    total_samples = int(sum(samples_per_iter))
    return LearnerReport(
        iterates=iterates,
        samples_per_iter=samples_per_iter,
        total_samples=total_samples,
        learning_time=total_samples * config.delta_t,
        settling_time=settling_time(traj, config.settle_band),
        total_running_cost=total_cost,
        converged=converged,
        rank_counts=rank_counts,
        p_final=iterates[-1][0] if iterates else None,
        k_final=k_gain,
        trajectory=traj,
    )
