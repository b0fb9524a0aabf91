"""Grid-free soft-HJB evaluation via generalized Hopf-Lax representations.

The initial-value solution W(t, x) is recovered by optimizing, over terminal
costates v, a functional evaluated along the bi-characteristic curves

    gamma' = grad_p H(gamma, p),   p' = -grad_x H(gamma, p),
    gamma(t) = x,                  p(t) = v,

integrated backward to s = 0 with fixed-step RK4. grad_p H comes from the
quadrature gradient; grad_x H from central finite differences of the value.
The optimization is a multi-start Nelder-Mead simplex, run batched so that many
starts (and many query points, for surface dumps) share each quadrature call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import (
    GenericTerminal,
    L1Terminal,
    QuadraticTerminal,
    Trajectory,
    make_rng,
)
from .errors import (
    AllCharacteristicsBlewUpError,
    InfeasibleTransformError,
    MaxEntError,
)
from .soft_hamiltonian import HamiltonianContext

BLOWUP_NORM = 1e8
FD_STEP = 1e-6

MIN_FORM = "min"
MAX_FORM = "max"


@dataclass(frozen=True)
class HopfLaxConfig:
    """Optimizer and integrator knobs for the Hopf-Lax evaluation."""

    ode_step: float = 0.025
    n_starts: int = 16
    start_radius: float = 5.0
    simplex_iters: int = 200
    formula: str = MIN_FORM
    seed: int = 0

    def __post_init__(self):
        if self.ode_step <= 0.0:
            raise ValueError("ode_step must be > 0")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.start_radius <= 0.0:
            raise ValueError("start_radius must be > 0")
        if self.formula not in (MIN_FORM, MAX_FORM):
            raise ValueError("formula must be 'min' or 'max'")


@dataclass(frozen=True)
class CharacteristicCurve:
    """One bi-characteristic: s-grid, state curve, costate curve."""

    s_grid: np.ndarray
    gamma: np.ndarray
    costate: np.ndarray
    blown_up: bool
    blowup_s: float | None = None


@dataclass(frozen=True)
class ValueEstimate:
    """Best Hopf-Lax value with its optimizing costate."""

    value: float
    argmin_v: np.ndarray
    costate_at_t: np.ndarray
    blown_up_fraction: float


def _rhs(ctx: HamiltonianContext, gam, p):
    """(grad_p H, -grad_x H, H, grad_x H) batched over rows.

    grad_x H is evaluated with central differences of the value, stacking the
    2n shifted states into a single quadrature call.
    """
    b, n = gam.shape
    h_val, grad_p = ctx.value_grad_batch(gam, p)
    step = FD_STEP * (1.0 + np.linalg.norm(gam, axis=1))  # (B,)
    shifts = np.zeros((2 * n, b, n))
    for i in range(n):
        shifts[2 * i, :, i] = step
        shifts[2 * i + 1, :, i] = -step
    x_fd = (gam[None, :, :] + shifts).reshape(2 * n * b, n)
    p_fd = np.broadcast_to(p, (2 * n, b, n)).reshape(2 * n * b, n)
    v_fd = ctx.value_batch(x_fd, p_fd).reshape(2 * n, b)
    grad_x = (v_fd[0::2] - v_fd[1::2]).T / (2.0 * step[:, None])
    return grad_p, -grad_x, h_val, grad_x


class _CurveResult:
    """Backward-integrated batch of characteristics plus running integrals."""

    __slots__ = (
        "gamma0", "p0", "integral_min", "integral_max", "blown",
        "s_grid", "gamma_path", "costate_path",
    )


def _integrate_batch(
    ctx: HamiltonianContext,
    x_rows: np.ndarray,
    v_rows: np.ndarray,
    t: float,
    n_steps: int,
    store_path: bool = False,
) -> _CurveResult:
    """RK4 from s=t down to s=0 with per-node integrand capture.

    Captures, at every s-node, the two running integrands
    ``p . grad_p H - H`` (min form) and ``H - gamma . grad_x H`` (max form),
    accumulated with composite Simpson on the curve's own s-grid.
    """
    b, n = x_rows.shape
    h = t / n_steps
    gam = x_rows.astype(float).copy()
    p = v_rows.astype(float).copy()
    blown = np.zeros(b, dtype=bool)
    node_min = np.empty((b, n_steps + 1))
    node_max = np.empty((b, n_steps + 1))
    if store_path:
        gam_path = np.empty((n_steps + 1, b, n))
        cos_path = np.empty((n_steps + 1, b, n))
        gam_path[n_steps] = gam
        cos_path[n_steps] = p

    def capture(idx, gam_k, p_k, gp, h_val, gx):
        node_min[:, idx] = np.einsum("bi,bi->b", p_k, gp) - h_val
        node_max[:, idx] = h_val - np.einsum("bi,bi->b", gam_k, gx)

    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for k in range(n_steps, 0, -1):
            gp1, mx1, h_val, gx1 = _rhs(ctx, gam, p)
            capture(k, gam, p, gp1, h_val, gx1)
            # Backward step of size h (negative direction in s).
            k1 = (gp1, mx1)
            g2 = gam - 0.5 * h * k1[0]
            p2 = p - 0.5 * h * k1[1]
            gp2, mx2, _, _ = _rhs(ctx, g2, p2)
            g3 = gam - 0.5 * h * gp2
            p3 = p - 0.5 * h * mx2
            gp3, mx3, _, _ = _rhs(ctx, g3, p3)
            g4 = gam - h * gp3
            p4 = p - h * mx3
            gp4, mx4, _, _ = _rhs(ctx, g4, p4)
            gam = gam - (h / 6.0) * (gp1 + 2.0 * gp2 + 2.0 * gp3 + gp4)
            p = p - (h / 6.0) * (mx1 + 2.0 * mx2 + 2.0 * mx3 + mx4)
            bad = ~(
                np.all(np.isfinite(gam), axis=1)
                & np.all(np.isfinite(p), axis=1)
                & (np.linalg.norm(gam, axis=1) <= BLOWUP_NORM)
                & (np.linalg.norm(p, axis=1) <= BLOWUP_NORM)
            )
            newly = bad & ~blown
            if np.any(newly):
                blown |= newly
                gam[blown] = 0.0
                p[blown] = 0.0
            if store_path:
                gam_path[k - 1] = gam
                cos_path[k - 1] = p
        gp0, _, h_val0, gx0 = _rhs(ctx, gam, p)
        capture(0, gam, p, gp0, h_val0, gx0)

    res = _CurveResult()
    res.gamma0 = gam
    res.p0 = p
    res.integral_min = _simpson(node_min, h)
    res.integral_max = _simpson(node_max, h)
    res.blown = blown
    res.s_grid = np.linspace(0.0, t, n_steps + 1)
    if store_path:
        res.gamma_path = gam_path
        res.costate_path = cos_path
    return res


def _simpson(values: np.ndarray, h: float) -> np.ndarray:
    """Composite Simpson over the curve's own s-grid (even interval count).

    Fourth-order accuracy keeps the running integral below the RK4 error, so
    step-halving studies see the integrator's order rather than the
    quadrature's.
    """
    weights = np.ones(values.shape[1])
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    return (h / 3.0) * values @ weights


def _step_count(t: float, ode_step: float) -> int:
    n = max(4, int(math.ceil(t / ode_step - 1e-12)))
    return n + (n % 2)


def integrate_characteristics(
    ctx: HamiltonianContext,
    x,
    v,
    t: float,
    config: HopfLaxConfig,
) -> CharacteristicCurve:
    """Solve the bi-characteristic ODEs for one (x, v), stored forward in s."""
    if t <= 0.0:
        raise ValueError("t must be > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    n_steps = _step_count(t, config.ode_step)
    res = _integrate_batch(ctx, x[None, :], v[None, :], t, n_steps, store_path=True)
    blown = bool(res.blown[0])
    gamma = res.gamma_path[:, 0, :].copy()
    costate = res.costate_path[:, 0, :].copy()
    gamma[-1] = x  # terminal conditions hold exactly
    costate[-1] = v
    blowup_s = None
    if blown:
        finite = np.all(np.isfinite(gamma), axis=1)
        idx = np.where(~finite)[0]
        blowup_s = float(res.s_grid[idx[-1]]) if len(idx) else float(res.s_grid[0])
    return CharacteristicCurve(
        s_grid=res.s_grid, gamma=gamma, costate=costate,
        blown_up=blown, blowup_s=blowup_s,
    )


def legendre_transform(q_spec, v) -> float:
    """Legendre-Fenchel transform q*(v) = sup_x {x.v - q(x)} by terminal family."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if isinstance(q_spec, L1Terminal):
        return 0.0 if np.max(np.abs(v)) <= 1.0 else math.inf
    if isinstance(q_spec, QuadraticTerminal):
        return 0.5 * float(v @ np.linalg.solve(q_spec.m, v))
    if isinstance(q_spec, GenericTerminal):
        if q_spec.search_box is None:
            raise MaxEntError("generic terminal cost needs a search box for q*")
        box = q_spec.search_box
        axes = [np.linspace(lo, hi, 65) for lo, hi in zip(box.lower, box.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        vals = pts @ v - q_spec.eval(pts)
        return float(np.max(vals))  # grid approximation over the search box
    raise MaxEntError(f"no Legendre transform for terminal family {type(q_spec).__name__}")


def _legendre_batch(q_spec, v_rows):
    if isinstance(q_spec, L1Terminal):
        out = np.where(np.max(np.abs(v_rows), axis=1) <= 1.0, 0.0, math.inf)
        return out
    if isinstance(q_spec, QuadraticTerminal):
        sol = np.linalg.solve(q_spec.m, v_rows.T).T
        return 0.5 * np.einsum("bi,bi->b", v_rows, sol)
    return np.array([legendre_transform(q_spec, v) for v in v_rows])


def _objective_batch(ctx, q_spec, x_rows, v_rows, t, n_steps, formula):
    """Hopf-Lax functional for each (x, v) row; +/-inf on blown curves."""
    res = _integrate_batch(ctx, x_rows, v_rows, t, n_steps)
    if formula == MIN_FORM:
        vals = q_spec.eval(res.gamma0) + res.integral_min
        vals = np.where(res.blown, math.inf, vals)
        return np.where(np.isnan(vals), math.inf, vals), res.blown
    qstar = _legendre_batch(q_spec, res.p0)
    vals = np.einsum("bi,bi->b", x_rows, v_rows) - qstar - res.integral_max
    vals = np.where(res.blown, -math.inf, vals)
    return np.where(np.isnan(vals), -math.inf, vals), res.blown


def _nelder_mead_batch(objective_rows, simplices, iters, owners):
    """Vectorized Nelder-Mead over a batch of simplices (minimization).

    ``objective_rows(v_rows, owner_idx)`` evaluates vertex rows, where
    ``owner_idx`` names the query point each row belongs to (so one call can
    optimize many points at once). Returns the per-simplex best vertex and
    value after ``iters`` iterations.
    """
    b, k1, k = simplices.shape
    vals = objective_rows(simplices.reshape(b * k1, k), np.repeat(owners, k1))
    vals = np.where(np.isnan(vals), math.inf, vals).reshape(b, k1)
    for _ in range(iters):
        order = np.argsort(vals, axis=1)
        vals = np.take_along_axis(vals, order, axis=1)
        simplices = np.take_along_axis(simplices, order[:, :, None], axis=1)
        best_v, second_worst, worst_v = vals[:, 0], vals[:, -2], vals[:, -1]
        centroid = simplices[:, :-1].mean(axis=1)
        worst = simplices[:, -1]
        direction = centroid - worst
        xr = centroid + direction
        fr = objective_rows(xr, owners)
        fr = np.where(np.isnan(fr), math.inf, fr)

        expand = fr < best_v
        con_out = (~expand) & (fr >= second_worst) & (fr < worst_v)
        con_in = (~expand) & (fr >= worst_v)
        second = np.where(
            expand[:, None], centroid + 2.0 * direction,
            np.where(con_in[:, None], centroid - 0.5 * direction,
                     centroid + 0.5 * direction),
        )
        fs = objective_rows(second, owners)
        fs = np.where(np.isnan(fs), math.inf, fs)

        new_vertex = xr.copy()
        new_val = fr.copy()
        take_second = (expand & (fs < fr)) | (con_out & (fs <= fr)) | (con_in & (fs < worst_v))
        new_vertex[take_second] = second[take_second]
        new_val[take_second] = fs[take_second]

        shrink = (con_out & (fs > fr)) | (con_in & (fs >= worst_v))
        accept = ~shrink
        simplices[accept, -1] = new_vertex[accept]
        vals[accept, -1] = new_val[accept]
        if np.any(shrink):
            idx = np.where(shrink)[0]
            shrunk = simplices[idx, :1] + 0.5 * (simplices[idx, 1:] - simplices[idx, :1])
            fsh = objective_rows(shrunk.reshape(-1, k), np.repeat(owners[idx], k))
            fsh = np.where(np.isnan(fsh), math.inf, fsh).reshape(len(idx), k)
            simplices[idx, 1:] = shrunk
            vals[idx, 1:] = fsh
    order = np.argsort(vals, axis=1)
    vals = np.take_along_axis(vals, order, axis=1)
    simplices = np.take_along_axis(simplices, order[:, :, None], axis=1)
    return vals[:, 0], simplices[:, 0]


def _ball_samples(rng, count, dim, radius):
    z = rng.standard_normal((count, dim))
    norm = np.linalg.norm(z, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    radii = radius * rng.random((count, 1)) ** (1.0 / dim)
    return z / norm * radii


def _initial_simplices(v0_rows):
    b, k = v0_rows.shape
    simplices = np.repeat(v0_rows[:, None, :], k + 1, axis=1)
    for i in range(k):
        simplices[:, i + 1, i] += 0.25 * (1.0 + np.abs(v0_rows[:, i]))
    return simplices


def _pick_best(values, vertices):
    """Lowest value wins; ties break lexicographically on v."""
    best = np.min(values)
    tied = np.where(values == best)[0]
    if len(tied) == 1:
        return tied[0]
    order = np.lexsort(vertices[tied].T[::-1])
    return tied[order[0]]


def hopf_lax_value(
    ctx: HamiltonianContext,
    q_spec,
    x,
    t: float,
    config: HopfLaxConfig,
    extra_starts=None,
) -> ValueEstimate:
    """Evaluate W(t, x) by optimizing the Hopf-Lax functional over costates.

    ``extra_starts`` prepends deterministic costate starts (e.g. a previous
    solve's optimizer when tracking a trajectory) to the sampled ones.
    """
    if t <= 0.0:
        raise ValueError("t must be > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.shape[0]
    n_steps = _step_count(t, config.ode_step)
    rng = make_rng(config.seed)
    v0 = _ball_samples(rng, config.n_starts, n, config.start_radius)
    if extra_starts is not None:
        extra = np.atleast_2d(np.asarray(extra_starts, dtype=float))
        v0 = np.concatenate([extra, v0], axis=0)

    sign = 1.0 if config.formula == MIN_FORM else -1.0
    saw_finite_transform = config.formula == MIN_FORM

    def objective(v_rows, _owners):
        nonlocal saw_finite_transform
        xr = np.repeat(x[None, :], len(v_rows), axis=0)
        vals, _ = _objective_batch(ctx, q_spec, xr, v_rows, t, n_steps, config.formula)
        if config.formula == MAX_FORM and np.any(np.isfinite(vals)):
            saw_finite_transform = True
        return sign * vals

    simplices = _initial_simplices(v0)
    owners = np.zeros(len(simplices), dtype=int)
    best_vals, best_v = _nelder_mead_batch(objective, simplices, config.simplex_iters, owners)
    finite = np.isfinite(best_vals)
    blown_fraction = float(np.mean(~finite))
    if not np.any(finite):
        if config.formula == MAX_FORM and not saw_finite_transform:
            raise InfeasibleTransformError(
                "q* was +inf at every probed costate; max-form is infeasible here"
            )
        raise AllCharacteristicsBlewUpError(
            f"all {config.n_starts} starts blew up for t={t}"
        )
    idx = _pick_best(np.where(finite, best_vals, math.inf), best_v)
    v_star = best_v[idx]
    return ValueEstimate(
        value=float(sign * best_vals[idx]),
        argmin_v=v_star.copy(),
        costate_at_t=v_star.copy(),
        blown_up_fraction=blown_fraction,
    )


def value_surface(
    ctx: HamiltonianContext,
    q_spec,
    xs: np.ndarray,
    ys: np.ndarray,
    t: float,
    config: HopfLaxConfig,
    n_random: int = 2,
    n_bands: int = 2,
    processes: int = 1,
    warm_iters: int | None = None,
) -> np.ndarray:
    """W(t, .) on a 2-D grid via a warm-started row sweep.

    The first row of each band runs the full multi-start budget from
    ``config``; subsequent rows seed simplices from the previous row's optimal
    costates (same column and neighbors) plus ``n_random`` fresh ball samples
    and polish for ``warm_iters`` iterations. The fixed band layout (not the
    process count) determines results, so outputs are reproducible per seed.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    bands = np.array_split(np.arange(len(ys)), max(1, n_bands))
    args = [
        (ctx, q_spec, xs, ys, band, t, config, n_random, warm_iters)
        for band in bands
        if len(band)
    ]
    if processes > 1 and len(args) > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(min(processes, len(args))) as pool:
            parts = pool.map(_sweep_band_star, args)
    else:
        parts = [_sweep_band_star(a) for a in args]
    return np.concatenate(parts, axis=1)


def _sweep_band_star(args):
    return _sweep_band(*args)


def _sweep_band(ctx, q_spec, xs, ys, rows, t, config, n_random, warm_iters):
    nx = len(xs)
    n = 2
    n_steps = _step_count(t, config.ode_step)
    if warm_iters is None:
        warm_iters = config.simplex_iters
    out = np.empty((nx, len(rows)))
    prev_v = None
    rng = make_rng(config.seed + 7919 * int(rows[0]))
    sign = 1.0 if config.formula == MIN_FORM else -1.0
    for jj, j in enumerate(rows):
        pts = np.stack([xs, np.full(nx, ys[j])], axis=-1)
        n_cold = config.n_starts if prev_v is None else n_random
        starts = _ball_samples(rng, nx * n_cold, n, config.start_radius).reshape(nx, n_cold, n)
        if prev_v is not None:
            warm = np.stack(
                [prev_v, np.roll(prev_v, 1, axis=0), np.roll(prev_v, -1, axis=0)], axis=1
            )
            starts = np.concatenate([warm, starts], axis=1)
        iters = config.simplex_iters if prev_v is None else warm_iters
        vals, verts = _nm_with_points(
            ctx, q_spec, pts, starts, t, n_steps, config.formula, iters
        )
        best_vals = np.full(nx, math.inf)
        best_v = np.zeros((nx, n))
        for i in range(nx):
            row_vals = np.where(np.isfinite(vals[i]), vals[i], math.inf)
            k = _pick_best(row_vals, verts[i])
            best_vals[i] = vals[i, k]
            best_v[i] = verts[i, k]
        out[:, jj] = sign * best_vals
        prev_v = best_v
    return out


def _nm_with_points(ctx, q_spec, pts, starts, t, n_steps, formula, iters):
    """Batched NM where each simplex row knows its own query point."""
    nx, n_start, n = starts.shape
    sign = 1.0 if formula == MIN_FORM else -1.0
    simplices = _initial_simplices(starts.reshape(nx * n_start, n))
    owners = np.repeat(np.arange(nx), n_start)

    def objective_rows(v_rows, owner_rows):
        xr = pts[owner_rows]
        vals, _ = _objective_batch(ctx, q_spec, xr, v_rows, t, n_steps, formula)
        return sign * vals

    vals, verts = _nelder_mead_batch(objective_rows, simplices, iters, owners)
    return vals.reshape(nx, n_start), verts.reshape(nx, n_start, n)


def surface_to_csv(path, xs, ys, values):
    """Value-surface dump: ``x1, x2, W`` rows over the query box."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("x1, x2, W\n")
        for i, x1 in enumerate(xs):
            for j, x2 in enumerate(ys):
                fh.write(f"{x1:.17g}, {x2:.17g}, {values[i, j]:.17g}\n")


def synthesize_feedback(ctx: HamiltonianContext, estimate: ValueEstimate, x) -> np.ndarray:
    """Boltzmann feedback density at x using the optimizing costate for grad V."""
    if estimate.blown_up_fraction >= 1.0:
        raise AllCharacteristicsBlewUpError("estimate carries no surviving costate")
    return ctx.density(np.atleast_1d(np.asarray(x, dtype=float)), estimate.costate_at_t)


def sample_feedback(
    ctx: HamiltonianContext,
    x,
    costate,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw one control from the Boltzmann feedback density.

    1-D controls invert the piecewise-linear CDF on the grid; higher dimensions
    use rejection against the uniform proposal.
    """
    grid = ctx.grid
    dens = ctx.density(np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(costate))
    if grid.box.dim == 1:
        order = np.argsort(grid.nodes[:, 0])
        u_sorted = grid.nodes[order, 0]
        mass = (dens * grid.weights)[order]
        cdf = np.cumsum(mass)
        cdf = cdf / cdf[-1]
        target = rng.random()
        k = int(np.searchsorted(cdf, target))
        k = min(k, len(u_sorted) - 1)
        c_lo = cdf[k - 1] if k > 0 else 0.0
        u_lo = u_sorted[k - 1] if k > 0 else grid.box.lower[0]
        frac = (target - c_lo) / max(cdf[k] - c_lo, 1e-300)
        return np.array([u_lo + frac * (u_sorted[k] - u_lo)])
    # Rejection against the uniform proposal; the exponent at the best node
    # bounds the density up to a 1.2 safety factor for off-node peaks.
    box = grid.box
    x_vec = np.atleast_1d(np.asarray(x, dtype=float))
    p_vec = np.atleast_1d(np.asarray(costate, dtype=float))
    best_node = grid.nodes[int(np.argmax(dens))]
    f_best = ctx.model.eval(x_vec, best_node)
    l_best = float(p_vec @ f_best) + float(np.asarray(ctx.cost.running.eval(x_vec, best_node)))
    for _ in range(10_000):
        proposal = box.lower + rng.random(box.dim) * (box.upper - box.lower)
        f = ctx.model.eval(x_vec, proposal)
        l_prop = float(p_vec @ f) + float(np.asarray(ctx.cost.running.eval(x_vec, proposal)))
        ratio = math.exp(min((l_best - l_prop) / ctx.alpha, 0.0))
        if rng.random() * 1.2 <= ratio:
            return proposal
    return best_node.copy()


def receding_horizon_control(
    ctx: HamiltonianContext,
    x0,
    total_t: float,
    window_t: float,
    config: HopfLaxConfig,
    dt: float,
    q_spec=None,
    replan_every: int = 1,
) -> Trajectory:
    """Closed-loop control by successive finite-horizon Hopf-Lax solves.

    The horizon is split into equal windows; inside each window the soft HJB is
    re-solved at the current state with the remaining window time, a control is
    sampled from the synthesized Boltzmann density, and the state advances with
    the sampled-control Euler integrator (step dt^2). ``replan_every`` substeps
    share one sampled control.
    """
    ratio = total_t / window_t
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("window_t must divide total_t")
    n_windows = int(round(ratio))
    if q_spec is None:
        q_spec = ctx.cost.terminal
    h = dt * dt
    steps_per_window = max(1, int(round(window_t / h)))
    rng = make_rng(config.seed)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    times = [0.0]
    states = [x.copy()]
    controls = []
    t_abs = 0.0
    warm_v = None
    for _ in range(n_windows):
        u = None
        for k in range(steps_per_window):
            if k % replan_every == 0:
                tau = window_t - k * h
                est = hopf_lax_value(ctx, q_spec, x, tau, config, extra_starts=warm_v)
                warm_v = est.argmin_v[None, :]
                u = sample_feedback(ctx, x, est.costate_at_t, rng)
            controls.append(u.copy())
            x = x + h * ctx.model.eval(x, u)
            t_abs += h
            times.append(t_abs)
            states.append(x.copy())
    controls.append(controls[-1].copy() if controls else np.zeros(ctx.grid.box.dim))
    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states),
        controls=np.asarray(controls),
        seed=config.seed,
    )
