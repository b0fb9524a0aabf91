"""Soft Hamiltonian, Boltzmann minimizer, and standard Hamiltonian by quadrature.

The soft Hamiltonian is

    H_a(x, p) = a log integral_U exp(-(p.f(x,u) + r(x,u)) / a) du,

evaluated on a tensorized quadrature grid over the compact control box with a
log-sum-exp shift at the node minimum of the exponent. Its p-gradient and
p-Hessian are the (negated) mean and scaled covariance of u -> f(x, u) under the
Boltzmann density, reusing the same node weights as the value.

All evaluators accept batches: ``x`` and ``p`` may carry leading dimensions and
every query in the batch shares one quadrature grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlBox, CostModel, DynamicsModel
from .errors import DimensionMismatchError

SMALL_ALPHA_WARN = 1e-3
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensorized nodes/weights over a control box."""

    nodes: np.ndarray  # (N, m)
    weights: np.ndarray  # (N,)
    nodes_per_dim: int
    rule: str
    box: ControlBox

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


def _gauss_legendre_1d(lo, hi, n):
    xs, ws = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return lo + half * (xs + 1.0), half * ws


def _trapezoid_1d(lo, hi, n):
    xs = np.linspace(lo, hi, n)
    ws = np.full(n, (hi - lo) / (n - 1))
    ws[0] *= 0.5
    ws[-1] *= 0.5
    return xs, ws


def build_grid(box: ControlBox, nodes_per_dim: int = 64, rule: str = "gauss_legendre") -> QuadratureGrid:
    """Tensor-product quadrature over the box.

    Gauss-Legendre is the default (tensorized up to m=3); the trapezoid rule is
    available for higher control dimensions or kinked integrands.
    """
    if rule not in ("gauss_legendre", "trapezoid"):
        raise ValueError(f"unknown quadrature rule {rule!r}")
    if rule == "gauss_legendre" and box.dim > 3:
        rule = "trapezoid"
    one_d = _gauss_legendre_1d if rule == "gauss_legendre" else _trapezoid_1d
    axes = [one_d(lo, hi, nodes_per_dim) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    weights = axes[0][1]
    for _, w in axes[1:]:
        weights = np.multiply.outer(weights, w)
    return QuadratureGrid(
        nodes=nodes,
        weights=np.asarray(weights).ravel(),
        nodes_per_dim=nodes_per_dim,
        rule=rule,
        box=box,
    )


@dataclass(frozen=True)
class HamiltonianReport:
    """Value and optional p-derivatives of the soft Hamiltonian at one (x, p)."""

    value: float
    gradient_p: np.ndarray | None
    hessian_p: np.ndarray | None
    log_partition: float


def _exponent(model: DynamicsModel, cost: CostModel, x, p, grid: QuadratureGrid):
    """L_i = p.f(x, u_i) + r(x, u_i) at all nodes; also returns f(x, u_i)."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    if x.shape != p.shape:
        raise DimensionMismatchError("x and p must have matching shapes")
    xs = x[..., None, :]
    us = grid.nodes[(None,) * (x.ndim - 1) + (slice(None), slice(None))]
    f = model.eval(xs, us)  # (..., N, n)
    l_vals = np.einsum("...i,...ni->...n", p, f) + cost.running.eval(xs, us)
    return l_vals, f


def _shifted_weights(l_vals, weights, alpha):
    """exp(-(L - L_min)/a) * w and the stabilized log partition per batch row."""
    l_min = l_vals.min(axis=-1, keepdims=True)
    z = np.exp(-(l_vals - l_min) / alpha)
    wz = z * weights
    total = wz.sum(axis=-1)
    return l_min[..., 0], wz, total


def soft_hamiltonian_batch(
    model: DynamicsModel,
    cost: CostModel,
    x,
    p,
    alpha: float,
    grid: QuadratureGrid,
    want_gradient: bool = False,
):
    """Vectorized H_a (and optionally its p-gradient) over leading batch axes."""
    if alpha <= 0.0:
        raise ValueError("alpha must be > 0")
    l_vals, f = _exponent(model, cost, x, p, grid)
    l_min, wz, total = _shifted_weights(l_vals, grid.weights, alpha)
    value = alpha * np.log(total) - l_min
    if not want_gradient:
        return value, None
    grad = -np.einsum("...n,...ni->...i", wz, f) / total[..., None]
    return value, grad


def soft_hamiltonian(
    model: DynamicsModel,
    cost: CostModel,
    x,
    p,
    alpha: float,
    grid: QuadratureGrid,
    want_gradient: bool = False,
    want_hessian: bool = False,
) -> HamiltonianReport:
    """Soft Hamiltonian at one (x, p) with optional gradient and Hessian in p."""
    if alpha <= 0.0:
        raise ValueError("alpha must be > 0")
    if alpha < SMALL_ALPHA_WARN:
        warnings.warn(
            "alpha below 1e-3: the integrand is sharply peaked and the fixed "
            "grid may under-resolve it; consider more nodes",
            RuntimeWarning,
            stacklevel=2,
        )
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    l_vals, f = _exponent(model, cost, x, p, grid)
    l_min, wz, total = _shifted_weights(l_vals, grid.weights, alpha)
    value = float(alpha * np.log(total) - l_min)
    gradient = hessian = None
    if want_gradient or want_hessian:
        mean_f = np.einsum("n,ni->i", wz, f) / total
        gradient = -mean_f
    if want_hessian:
        centered = f - mean_f
        hess = np.einsum("n,ni,nj->ij", wz, centered, centered) / total
        hessian = (hess + hess.T) / (2.0 * alpha)
    return HamiltonianReport(
        value=value,
        gradient_p=gradient,
        hessian_p=hessian,
        log_partition=float(np.log(total)),
    )


def boltzmann_density(
    model: DynamicsModel,
    cost: CostModel,
    x,
    p,
    alpha: float,
    grid: QuadratureGrid,
) -> np.ndarray:
    """Boltzmann minimizer density g*(u) = exp(-L/a)/Z at the grid nodes.

    The node values integrate to one against the grid weights.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    l_vals, _ = _exponent(model, cost, x, p, grid)
    _, wz, total = _shifted_weights(l_vals, grid.weights, alpha)
    return wz / grid.weights / total


def grid_entropy(density: np.ndarray, grid: QuadratureGrid) -> float:
    """Differential entropy -sum w_i g_i log g_i of node density values."""
    g = np.asarray(density, dtype=float)
    glog = np.where(g > 0.0, g * np.log(np.maximum(g, 1e-300)), 0.0)
    return -float(np.sum(grid.weights * glog))


def standard_hamiltonian(
    model: DynamicsModel,
    cost: CostModel,
    x,
    p,
    grid: QuadratureGrid,
    refine_iters: int = 60,
) -> float:
    """H_0(x, p) = -inf_u {p.f + r} by grid scan plus local refinement.

    The best node is refined with golden-section search (one pass per control
    coordinate; coordinate descent when m > 1) inside its neighbor interval.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    l_vals, _ = _exponent(model, cost, x, p, grid)

    def objective(u):
        f = model.eval(x, u)
        return float(p @ f + np.asarray(cost.running.eval(x, u)))

    best_idx = int(np.argmin(l_vals))
    u_best = grid.nodes[best_idx].copy()
    best_val = float(l_vals[best_idx])
    m = grid.box.dim
    # Neighbor spacing per axis, from the 1-D projections of the tensor grid.
    axes = [np.unique(grid.nodes[:, j]) for j in range(m)]
    passes = 1 if m == 1 else 2
    for _ in range(passes):
        for j in range(m):
            ax = axes[j]
            k = int(np.argmin(np.abs(ax - u_best[j])))
            lo = ax[k - 1] if k > 0 else grid.box.lower[j]
            hi = ax[k + 1] if k < len(ax) - 1 else grid.box.upper[j]

            def coord_obj(val, j=j):
                u = u_best.copy()
                u[j] = val
                return objective(u)

            val, arg = _golden_min(coord_obj, float(lo), float(hi), refine_iters)
            if val < best_val:
                best_val = val
                u_best[j] = arg
    return -best_val


def _golden_min(fn, lo, hi, iters):
    """Golden-section minimization on [lo, hi]; returns (value, argmin)."""
    if hi <= lo:
        return fn(lo), lo
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fn(d)
    mid = 0.5 * (a + b)
    return fn(mid), mid


def laplace_gap(
    model: DynamicsModel,
    cost: CostModel,
    x,
    p,
    alphas,
    grid: QuadratureGrid,
):
    """Sweep (alpha, H_alpha, H_tilde) for a decreasing list of temperatures.

    H_tilde = H_alpha - alpha log|U| converges monotonically up to H_0 as the
    temperature drops.
    """
    alphas = list(alphas)
    if any(a <= 0 for a in alphas):
        raise ValueError("all alphas must be > 0")
    if any(a1 <= a2 for a1, a2 in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be sorted decreasing")
    log_vol = grid.box.log_volume
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    l_vals, _ = _exponent(model, cost, x, p, grid)
    out = []
    for a in alphas:
        l_min, wz, total = _shifted_weights(l_vals, grid.weights, a)
        h = float(a * np.log(total) - l_min)
        out.append((a, h, h - a * log_vol))
    return out


def check_grid_convergence(
    model: DynamicsModel,
    cost: CostModel,
    x,
    p,
    alpha: float,
    box: ControlBox,
    nodes_per_dim: int = 64,
    rule: str = "gauss_legendre",
    rel_tol: float = 1e-6,
) -> float:
    """Relative gap between the configured grid and a doubled one; warns if large."""
    coarse = build_grid(box, nodes_per_dim, rule)
    fine = build_grid(box, 2 * nodes_per_dim, rule)
    hc, _ = soft_hamiltonian_batch(model, cost, x, p, alpha, coarse)
    hf, _ = soft_hamiltonian_batch(model, cost, x, p, alpha, fine)
    gap = float(np.max(np.abs(hc - hf) / (1.0 + np.abs(hf))))
    if gap > rel_tol:
        warnings.warn(
            f"quadrature self-check gap {gap:.3e} exceeds {rel_tol:.0e}; "
            "increase nodes_per_dim",
            RuntimeWarning,
            stacklevel=2,
        )
    return gap


@dataclass(frozen=True)
class HamiltonianContext:
    """Bundle of model, cost, temperature, and grid shared by the HJB solvers."""

    model: DynamicsModel
    cost: CostModel
    alpha: float
    grid: QuadratureGrid

    def value(self, x, p) -> float:
        v, _ = soft_hamiltonian_batch(self.model, self.cost, x, p, self.alpha, self.grid)
        return float(v)

    def value_batch(self, x, p) -> np.ndarray:
        v, _ = soft_hamiltonian_batch(self.model, self.cost, x, p, self.alpha, self.grid)
        return v

    def value_grad_batch(self, x, p):
        return soft_hamiltonian_batch(
            self.model, self.cost, x, p, self.alpha, self.grid, want_gradient=True
        )

    def report(self, x, p, want_gradient=True, want_hessian=False) -> HamiltonianReport:
        return soft_hamiltonian(
            self.model, self.cost, x, p, self.alpha, self.grid,
            want_gradient=want_gradient, want_hessian=want_hessian,
        )

    def density(self, x, p) -> np.ndarray:
        return boltzmann_density(self.model, self.cost, x, p, self.alpha, self.grid)
