"""Monotone Godunov finite-difference solver for the 2-D soft HJB IVP.

Serves as the grid-based cross-validation oracle for the grid-free solver:
forward Euler in time with the dimension-by-dimension Godunov numerical
Hamiltonian. Each 1-D extremization over the interval between one-sided
gradients uses golden-section search, which is well posed because the soft
Hamiltonian is convex in the costate (interior minima unique, maxima at the
interval endpoints).

The solver precomputes f(x_ij, u_q) and r(x_ij, u_q) for the static grid once,
so a Hamiltonian evaluation during time stepping reduces to an exp/sum over
quadrature nodes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCflError, DimensionMismatchError
from .soft_hamiltonian import HamiltonianContext, soft_hamiltonian_batch

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_MAGIC = b"MEHJB2D\x00"
_SPEED_REFRESH = 50
GOLDEN_ITERS = 40


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular grid with at least 8 nodes per axis."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs nx, ny >= 8")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("grid extents must be increasing")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)

    def points(self) -> np.ndarray:
        """All nodes as an (nx*ny, 2) array, x-major."""
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1)


@dataclass(frozen=True)
class GridFunction:
    """Node values of W at one time."""

    values: np.ndarray
    grid: Grid2D
    time: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.nx, self.grid.ny):
            raise DimensionMismatchError("values must be nx x ny")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", values)

    def to_csv(self, path):
        pts = self.grid.points()
        with open(path, "w", encoding="ascii") as fh:
            fh.write("x, y, W\n")
            for (x, y), w in zip(pts, self.values.ravel()):
                fh.write(f"{x:.17g}, {y:.17g}, {w:.17g}\n")

    def to_binary(self, path):
        """32-byte header (magic, nx, ny, time) + row-major float64 values."""
        header = _MAGIC + struct.pack("<IId", self.grid.nx, self.grid.ny, self.time)
        header += b"\x00" * (32 - len(header))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @staticmethod
    def from_binary(path, grid: Grid2D) -> "GridFunction":
        with open(path, "rb") as fh:
            header = fh.read(32)
            if header[:8] != _MAGIC:
                raise ValueError("bad magic in binary grid dump")
            nx, ny, time = struct.unpack("<IId", header[8:24])
            values = np.frombuffer(fh.read(), dtype="<f8").reshape(nx, ny)
        if (nx, ny) != (grid.nx, grid.ny):
            raise DimensionMismatchError("dump shape does not match the grid")
        return GridFunction(values=values.copy(), grid=grid, time=time)


class _CachedHamiltonian:
    """H_a(x_i, .) for a fixed set of states, with f and r precomputed."""

    def __init__(self, ctx: HamiltonianContext, points: np.ndarray):
        self.alpha = ctx.alpha
        self.weights = ctx.grid.weights
        nodes = ctx.grid.nodes
        xs = points[:, None, :]
        us = nodes[None, :, :]
        self.f = np.asarray(ctx.model.eval(xs, us), dtype=float)  # (M, N, n)
        self.f = np.broadcast_to(self.f, (points.shape[0], nodes.shape[0], points.shape[1])).copy()
        r = np.asarray(ctx.cost.running.eval(xs, us), dtype=float)
        self.r = np.broadcast_to(r, self.f.shape[:2]).copy()

    def value(self, p_rows: np.ndarray, rows=None) -> np.ndarray:
        f = self.f if rows is None else self.f[rows]
        r = self.r if rows is None else self.r[rows]
        l_vals = np.einsum("...i,...ni->...n", p_rows, f) + r
        l_min = l_vals.min(axis=-1)
        z = np.exp(-(l_vals - l_min[..., None]) / self.alpha) * self.weights
        return self.alpha * np.log(z.sum(axis=-1)) - l_min

    def grad_norm(self, p_rows: np.ndarray) -> np.ndarray:
        l_vals = np.einsum("mi,mni->mn", p_rows, self.f) + self.r
        l_min = l_vals.min(axis=1, keepdims=True)
        z = np.exp(-(l_vals - l_min) / self.alpha) * self.weights
        total = z.sum(axis=1)
        mean_f = np.einsum("mn,mni->mi", z, self.f) / total[:, None]
        return np.linalg.norm(mean_f, axis=1)


def _golden_min_batch(evaluate, lo, hi, iters):
    """Vectorized golden-section minimum per row; returns (values, argmins).

    ``evaluate`` maps an array of coordinate values (one per active row) to
    objective values. One new evaluation per iteration, as in the scalar method.
    """
    a = lo.astype(float).copy()
    b = hi.astype(float).copy()
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc = evaluate(c)
    fd = evaluate(d)
    for _ in range(iters):
        left = fc <= fd
        a_new = np.where(left, a, c)
        b_new = np.where(left, d, b)
        span = b_new - a_new
        probe = np.where(left, b_new - _GOLDEN * span, a_new + _GOLDEN * span)
        f_probe = evaluate(probe)
        c_next = np.where(left, probe, d)
        d_next = np.where(left, c, probe)
        fc_next = np.where(left, f_probe, fd)
        fd_next = np.where(left, fc, f_probe)
        a, b, c, d, fc, fd = a_new, b_new, c_next, d_next, fc_next, fd_next
    vals = np.where(fc <= fd, fc, fd)
    args = np.where(fc <= fd, c, d)
    return vals, args


def _godunov_extremize(value_fn, p_minus, p_plus, iters=GOLDEN_ITERS):
    """Dimension-by-dimension Godunov extremization of H over gradient intervals.

    ``value_fn(p_rows, rows)`` evaluates H at full costate rows (``rows`` is an
    optional index subset). Coordinates are processed in order: extremized
    coordinates stay at their optimizers, pending ones at interval midpoints.
    Minimizing branches (p_minus[i] <= p_plus[i]) use golden-section; maximizing
    branches compare the endpoints (convexity puts maxima there).
    """
    p_minus = np.atleast_2d(np.asarray(p_minus, dtype=float))
    p_plus = np.atleast_2d(np.asarray(p_plus, dtype=float))
    m_rows, n = p_minus.shape
    p_work = 0.5 * (p_minus + p_plus)
    for i in range(n):
        pm = p_minus[:, i]
        pp = p_plus[:, i]
        lo = np.minimum(pm, pp)
        hi = np.maximum(pm, pp)
        degenerate = hi - lo <= 0.0
        arg = np.where(degenerate, lo, p_work[:, i])

        def coord_eval(vals, rows):
            p_eval = (p_work if rows is None else p_work[rows]).copy()
            p_eval[:, i] = vals
            return value_fn(p_eval, rows)

        search = (pm <= pp) & ~degenerate
        if np.any(search):
            rows = np.where(search)[0]
            vals, args = _golden_min_batch(
                lambda v, r=rows: coord_eval(v, r), lo[rows], hi[rows], iters
            )
            # endpoint minima (H affine or monotone in this coordinate) are hit
            # exactly, removing golden-section termination noise
            f_lo = coord_eval(lo[rows], rows)
            f_hi = coord_eval(hi[rows], rows)
            args = np.where(f_lo <= vals, lo[rows], args)
            vals = np.minimum(f_lo, vals)
            args = np.where(f_hi < vals, hi[rows], args)
            arg[rows] = args
        maxi = (pm > pp) & ~degenerate
        if np.any(maxi):
            rows = np.where(maxi)[0]
            f_lo = coord_eval(lo[rows], rows)
            f_hi = coord_eval(hi[rows], rows)
            arg[rows] = np.where(f_lo >= f_hi, lo[rows], hi[rows])
        p_work[:, i] = arg
    return value_fn(p_work, None), p_work


def godunov_flux(ctx: HamiltonianContext, x_cell, p_minus, p_plus) -> float:
    """Godunov numerical Hamiltonian at one cell.

    With p_minus == p_plus this degenerates to a plain soft-Hamiltonian
    evaluation through the same code path.
    """
    x_cell = np.atleast_1d(np.asarray(x_cell, dtype=float))
    p_minus = np.atleast_1d(np.asarray(p_minus, dtype=float))
    p_plus = np.atleast_1d(np.asarray(p_plus, dtype=float))

    def value_fn(p_rows, rows):
        xs = np.broadcast_to(x_cell, (len(p_rows), len(x_cell)))
        vals, _ = soft_hamiltonian_batch(
            ctx.model, ctx.cost, xs, p_rows, ctx.alpha, ctx.grid
        )
        return vals

    vals, _ = _godunov_extremize(value_fn, p_minus[None, :], p_plus[None, :])
    return float(vals[0])


def _one_sided_gradients(w, dx, dy):
    """Backward/forward differences with linear-extrapolation ghost cells."""
    int_x = (w[1:, :] - w[:-1, :]) / dx
    dm_x = np.concatenate([int_x[:1], int_x], axis=0)
    dp_x = np.concatenate([int_x, int_x[-1:]], axis=0)
    int_y = (w[:, 1:] - w[:, :-1]) / dy
    dm_y = np.concatenate([int_y[:, :1], int_y], axis=1)
    dp_y = np.concatenate([int_y, int_y[:, -1:]], axis=1)
    return dm_x, dp_x, dm_y, dp_y


def godunov_solve(
    ctx: HamiltonianContext,
    q_spec,
    grid: Grid2D,
    t_final: float,
    cfl: float = 0.5,
    max_steps: int = 200_000,
) -> GridFunction:
    """March the monotone scheme from W(0) = q to time ``t_final``.

    The time step is cfl * min(dx, dy) / max|grad_p H| with the speed sampled
    at the grid's central difference gradients and refreshed every 50 steps. A
    costate-independent Hamiltonian (zero speed at every probe) is advanced
    exactly with coarse steps; a vanishing estimate for a genuinely
    costate-dependent Hamiltonian raises DegenerateCflError.
    """
    if not (0.0 < cfl <= 0.9):
        raise ValueError("cfl must be in (0, 0.9]")
    if t_final <= 0.0:
        raise ValueError("t_final must be > 0")
    pts = grid.points()
    cached = _CachedHamiltonian(ctx, pts)
    w = np.asarray(q_spec.eval(pts), dtype=float).reshape(grid.nx, grid.ny)
    t = 0.0
    dt = None
    p_independent = False
    for step in range(max_steps):
        if t >= t_final - 1e-14:
            break
        dm_x, dp_x, dm_y, dp_y = _one_sided_gradients(w, grid.dx, grid.dy)
        if step % _SPEED_REFRESH == 0:
            p_central = np.stack(
                [0.5 * (dm_x + dp_x), 0.5 * (dm_y + dp_y)], axis=-1
            ).reshape(-1, 2)
            vmax = float(cached.grad_norm(p_central).max())
            if vmax <= 1e-14:
                probes = np.array(
                    [[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
                )
                probe_max = max(
                    float(cached.grad_norm(np.broadcast_to(pr, pts.shape).copy()).max())
                    for pr in probes
                )
                if probe_max > 1e-12:
                    raise DegenerateCflError(
                        "grad_p H vanished at the grid gradients but not globally"
                    )
                p_independent = True
            dt = (t_final / 8.0) if p_independent else cfl * min(grid.dx, grid.dy) / vmax
        step_dt = min(dt, t_final - t)
        p_m = np.stack([dm_x, dm_y], axis=-1).reshape(-1, 2)
        p_p = np.stack([dp_x, dp_y], axis=-1).reshape(-1, 2)
        flux, _ = _godunov_extremize(cached.value, p_m, p_p)
        w = w - step_dt * flux.reshape(grid.nx, grid.ny)
        t += step_dt
    else:
        raise DegenerateCflError(f"time stepping did not reach T in {max_steps} steps")
    return GridFunction(values=w, grid=grid, time=t_final)


def compare_solutions(a: GridFunction, b_sampler, b_time: float | None = None) -> dict:
    """Sample ``b_sampler`` at every node of ``a`` and report the differences.

    Returns max_abs_diff, sup_norm_b, and rel_pct = 100 max|a-b| / sup|b|, plus
    the same three restricted to the interior (10% margin cropped per side,
    where the extrapolating boundary condition cannot pollute the comparison).
    """
    if b_time is not None and abs(a.time - b_time) > 1e-9:
        raise ValueError("time stamps differ by more than 1e-9")
    pts = a.grid.points()
    b_vals = np.asarray(b_sampler(pts), dtype=float).reshape(a.grid.nx, a.grid.ny)
    diff = np.abs(a.values - b_vals)
    sup_b = float(np.max(np.abs(b_vals)))
    mx = int(math.ceil(0.1 * a.grid.nx))
    my = int(math.ceil(0.1 * a.grid.ny))
    interior = (slice(mx, a.grid.nx - mx), slice(my, a.grid.ny - my))
    sup_b_int = float(np.max(np.abs(b_vals[interior])))
    return {
        "max_abs_diff": float(diff.max()),
        "sup_norm_b": sup_b,
        "rel_pct": 100.0 * float(diff.max()) / sup_b if sup_b > 0 else 0.0,
        "max_abs_diff_interior": float(diff[interior].max()),
        "sup_norm_b_interior": sup_b_int,
        "rel_pct_interior": (
            100.0 * float(diff[interior].max()) / sup_b_int if sup_b_int > 0 else 0.0
        ),
    }
