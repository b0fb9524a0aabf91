"""Experiment runner: seeded desk-scale studies with CSV/JSON artifacts.

Commands mirror the numerical studies: ``ham-sweep`` (temperature sweep of the
soft Hamiltonian), ``hjb-compare`` (grid-free vs Godunov cross-validation),
``vdp-control`` (receding-horizon control of the 4-state oscillator),
``lq-exact`` (model-based Riccati solve), and ``lq-onpolicy``/``lq-offpolicy``
(data-driven learners on fixture systems). Each run writes its artifacts plus
``manifest.json`` with content hashes; identical config and seed reproduce the
data artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adaptive_dp import HiddenLqSystem, LearnerConfig, run_offpolicy, run_onpolicy
from .benchmarks import (
    analytic_linear_channel_hamiltonian,
    linear_channel_model,
    load_fixture,
    vdp4_cost,
    vdp4_model,
    VDP4_X0,
    vdp_control_box,
    vdp_plane_cost,
    vdp_plane_model,
    zero_running_cost,
)
from .dynamics import ControlBox
from .errors import ConfigError, MaxEntError
from .godunov import Grid2D, compare_solutions, godunov_solve
from .hopf_lax import HopfLaxConfig, receding_horizon_control, surface_to_csv, value_surface
from .lq import kleinman_iterate, save_matrix
from .soft_hamiltonian import (
    HamiltonianContext,
    build_grid,
    laplace_gap,
    standard_hamiltonian,
)

COMMANDS = ("ham-sweep", "hjb-compare", "vdp-control", "lq-onpolicy", "lq-offpolicy", "lq-exact")

# key -> (type, default) per command; flags mirror these one-to-one
SCHEMAS: dict = {
    "ham-sweep": {
        "alphas": (str, "2,1,0.5,0.1,0.05,0.01"),
        "x": (str, "0"),
        "p": (str, "1"),
        "model": (str, "channel"),
        "nodes": (int, 512),
    },
    "hjb-compare": {
        "alpha": (float, 1.0),
        "t": (float, 0.1),
        "grid_n": (int, 161),
        "domain": (float, 2.0),
        "nodes": (int, 32),
        "cfl": (float, 0.5),
        "ode_step": (float, 0.025),
        "n_starts": (int, 16),
        "start_radius": (float, 5.0),
        "simplex_iters": (int, 40),
        "warm_iters": (int, 20),
        "n_random": (int, 1),
        "n_bands": (int, 2),
    },
    "vdp-control": {
        "alpha": (float, 1.0),
        "total_t": (float, 20.0),
        "window_t": (float, 2.5),
        "dt": (float, 0.5),
        "replan_every": (int, 1),
        "nodes": (int, 32),
        "ode_step": (float, 0.1),
        "n_starts": (int, 5),
        "start_radius": (float, 1.5),
        "simplex_iters": (int, 60),
    },
    "lq-exact": {
        "fixture": (str, "n3m2"),
        "lam": (float, 1e-10),
        "alpha": (float, 1.0),
        "tol": (float, 1e-12),
    },
    "lq-onpolicy": {
        "fixture": (str, "n3m2"),
        "alpha": (float, 1.0),
        "lam": (float, 1e-10),
        "delta_t": (float, 0.01),
        "n_sub": (int, 10),
        "eps_stop": (float, 2e-2),
        "max_iters": (int, 25),
        "extra_windows": (int, 0),
        "eval_horizon": (float, 20.0),
        "settle_band": (float, 1.0),
    },
}
SCHEMAS["lq-offpolicy"] = dict(SCHEMAS["lq-onpolicy"])

_VALIDATORS = {
    "alpha": lambda v: v > 0 or "alpha must be > 0",
    "t": lambda v: v > 0 or "t must be > 0",
    "grid_n": lambda v: v >= 8 or "grid_n must be >= 8",
    "nodes": lambda v: v >= 4 or "nodes must be >= 4",
    "cfl": lambda v: 0 < v <= 0.9 or "cfl must be in (0, 0.9]",
    "delta_t": lambda v: v > 0 or "delta_t must be > 0",
    "eps_stop": lambda v: v > 0 or "eps_stop must be > 0",
}


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seed: int
    output_dir: Path
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RunManifest:
    command: str
    config: dict
    version: str
    duration_s: float
    outputs: list

    def to_json(self, path):
        payload = {
            "command": self.command,
            "config": self.config,
            "version": self.version,
            "duration_s": self.duration_s,
            "outputs": self.outputs,
        }
        with open(path, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)

    def verify(self, base_dir) -> bool:
        for entry in self.outputs:
            path = Path(base_dir) / entry["path"]
            if not path.exists() or _sha256(path) != entry["sha256"]:
                return False
        return True


def _sha256(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _coerce(command: str, key: str, raw: str, where: str):
    schema = SCHEMAS[command]
    if key not in schema:
        valid = ", ".join(sorted(schema))
        raise ConfigError(f"unknown key {key!r} for {command} ({where}); valid keys: {valid}")
    typ = schema[key][0]
    try:
        value = typ(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r} ({where}): {raw!r} is not {typ.__name__}") from exc
    check = _VALIDATORS.get(key)
    if check is not None:
        verdict = check(value)
        if verdict is not True:
            raise ConfigError(f"invalid {key!r} ({where}): {verdict}")
    return value


def parse_config(
    command: str,
    path=None,
    overrides: dict | None = None,
    seed: int = 0,
    output_dir="out",
) -> ExperimentConfig:
    """Config from an optional key-value file plus flag overrides.

    The file is flat ``key = value`` lines; ``[section]`` headers scope keys to
    one command, keys before any section apply globally (only ``seed`` and
    ``out`` are global). Flags override file values.
    """
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}; valid: {', '.join(COMMANDS)}")
    params = {k: default for k, (_, default) in SCHEMAS[command].items()}
    if path is not None:
        section = None
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if stripped.startswith("[") and stripped.endswith("]"):
                section = stripped[1:-1].strip()
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            where = f"{path}:{lineno}"
            if section is None:
                if key == "seed":
                    seed = int(raw)
                elif key == "out":
                    output_dir = raw
                else:
                    raise ConfigError(
                        f"{where}: key {key!r} outside a command section (only seed/out are global)"
                    )
                continue
            if section != command:
                continue
            params[key] = _coerce(command, key, raw, where)
    for key, raw in (overrides or {}).items():
        if key == "seed":
            seed = int(raw)
        elif key == "out":
            output_dir = raw
        else:
            params[key] = _coerce(command, key, str(raw), "flag")
    return ExperimentConfig(command=command, seed=int(seed), output_dir=Path(output_dir), params=params)


def _write_json(path, payload):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(", ".join(header) + "\n")
        for row in rows:
            fh.write(", ".join(f"{v:.17g}" for v in row) + "\n")


def _parse_vector(raw: str) -> np.ndarray:
    return np.array([float(tok) for tok in raw.split(",") if tok.strip() != ""])


def run(config: ExperimentConfig) -> RunManifest:
    """Execute one experiment; artifacts land in config.output_dir."""
    runner = {
        "ham-sweep": _run_ham_sweep,
        "hjb-compare": _run_hjb_compare,
        "vdp-control": _run_vdp_control,
        "lq-exact": _run_lq_exact,
        "lq-onpolicy": _run_lq_learner,
        "lq-offpolicy": _run_lq_learner,
    }[config.command]
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    produced: list[Path] = []
    try:
        runner(config, out, produced)
    except Exception as exc:
        for path in produced:
            path.unlink(missing_ok=True)
        if isinstance(exc, MaxEntError):
            raise MaxEntError(f"{config.command} failed: {exc}") from exc
        raise
    duration = time.time() - started
    outputs = [
        {"path": p.name, "sha256": _sha256(p)} for p in sorted(produced, key=lambda p: p.name)
    ]
    manifest = RunManifest(
        command=config.command,
        config={"seed": config.seed, **config.params},
        version=__version__,
        duration_s=duration,
        outputs=outputs,
    )
    manifest.to_json(out / "manifest.json")
    if not manifest.verify(out):
        raise MaxEntError("manifest verification failed after writing outputs")
    return manifest


def _run_ham_sweep(config: ExperimentConfig, out: Path, produced: list):
    p = config.params
    alphas = sorted((float(tok) for tok in p["alphas"].split(",")), reverse=True)
    x = _parse_vector(p["x"])
    pvec = _parse_vector(p["p"])
    if p["model"] == "channel":
        model = linear_channel_model()
        cost = zero_running_cost()
        box = ControlBox(lower=[-1.0], upper=[1.0])
    elif p["model"] == "vdp":
        model = vdp_plane_model()
        cost = vdp_plane_cost()
        box = vdp_control_box()
    else:
        raise ConfigError(f"unknown model {p['model']!r}; valid: channel, vdp")
    grid = build_grid(box, p["nodes"])
    sweep = laplace_gap(model, cost, x, pvec, alphas, grid)
    h0 = standard_hamiltonian(model, cost, x, pvec, grid)
    csv_path = out / "ham_sweep.csv"
    _write_csv(
        csv_path,
        ["alpha", "H_alpha", "H_tilde", "H0"],
        [(a, h, ht, h0) for a, h, ht in sweep],
    )
    produced.append(csv_path)
    summary = {"H0": h0, "alphas": alphas}
    if p["model"] == "channel":
        errs = [
            abs(h - analytic_linear_channel_hamiltonian(float(pvec[0]), a))
            for a, h, _ in sweep
        ]
        summary["max_abs_err_vs_closed_form"] = max(errs)
    summary_path = out / "summary.json"
    _write_json(summary_path, summary)
    produced.append(summary_path)


def _threads() -> int:
    raw = os.environ.get("MAXENT_HJB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_hjb_compare(config: ExperimentConfig, out: Path, produced: list):
    p = config.params
    model = vdp_plane_model()
    cost = vdp_plane_cost(alpha=p["alpha"], horizon=p["t"])
    grid_q = build_grid(vdp_control_box(), p["nodes"])
    ctx = HamiltonianContext(model=model, cost=cost, alpha=p["alpha"], grid=grid_q)
    d = p["domain"]
    grid = Grid2D(-d, d, -d, d, p["grid_n"], p["grid_n"])
    godunov = godunov_solve(ctx, cost.terminal, grid, p["t"], cfl=p["cfl"])
    hl_config = HopfLaxConfig(
        ode_step=p["ode_step"],
        n_starts=p["n_starts"],
        start_radius=p["start_radius"],
        simplex_iters=p["simplex_iters"],
        seed=config.seed,
    )
    surface = value_surface(
        ctx,
        cost.terminal,
        grid.xs,
        grid.ys,
        p["t"],
        hl_config,
        n_random=p["n_random"],
        n_bands=p["n_bands"],
        processes=_threads(),
        warm_iters=p["warm_iters"],
    )
    report = compare_solutions(godunov, lambda pts: surface.ravel(), b_time=p["t"])

    godunov_path = out / "godunov.csv"
    godunov.to_csv(godunov_path)
    produced.append(godunov_path)
    hopf_path = out / "hopflax.csv"
    surface_to_csv(hopf_path, grid.xs, grid.ys, surface)
    produced.append(hopf_path)
    summary_path = out / "summary.json"
    _write_json(summary_path, report)
    produced.append(summary_path)


def _run_vdp_control(config: ExperimentConfig, out: Path, produced: list):
    p = config.params
    model = vdp4_model()
    cost = vdp4_cost(alpha=p["alpha"], horizon=p["window_t"])
    grid_q = build_grid(vdp_control_box(), p["nodes"])
    ctx = HamiltonianContext(model=model, cost=cost, alpha=p["alpha"], grid=grid_q)
    hl_config = HopfLaxConfig(
        ode_step=p["ode_step"],
        n_starts=p["n_starts"],
        start_radius=p["start_radius"],
        simplex_iters=p["simplex_iters"],
        seed=config.seed,
    )
    traj = receding_horizon_control(
        ctx,
        VDP4_X0,
        p["total_t"],
        p["window_t"],
        hl_config,
        dt=p["dt"],
        replan_every=p["replan_every"],
    )
    controlled_cost = float(
        np.trapezoid(
            np.sum(np.abs(traj.states), axis=1) + np.sum(np.abs(traj.controls), axis=1),
            traj.times,
        )
    )
    x = VDP4_X0.copy()
    h = p["dt"] ** 2
    states = [x.copy()]
    for _ in range(len(traj.times) - 1):
        x = x + h * model.eval(x, np.zeros(1))
        states.append(x.copy())
    states = np.asarray(states)
    uncontrolled_cost = float(np.trapezoid(np.sum(np.abs(states), axis=1), traj.times))

    traj_path = out / "trajectory.csv"
    traj.to_csv(traj_path)
    produced.append(traj_path)
    unc_path = out / "uncontrolled.csv"
    _write_csv(
        unc_path,
        ["t"] + [f"x_{i}" for i in range(states.shape[1])],
        [(t, *row) for t, row in zip(traj.times, states)],
    )
    produced.append(unc_path)
    summary_path = out / "summary.json"
    _write_json(
        summary_path,
        {
            "controlled_running_cost": controlled_cost,
            "uncontrolled_running_cost": uncontrolled_cost,
            "improved": controlled_cost < uncontrolled_cost,
        },
    )
    produced.append(summary_path)


def _run_lq_exact(config: ExperimentConfig, out: Path, produced: list):
    p = config.params
    prob = load_fixture(p["fixture"], lam=p["lam"], alpha=p["alpha"])
    sol = kleinman_iterate(prob, tol=p["tol"])
    p_path = out / "P.txt"
    save_matrix(p_path, sol.p)
    produced.append(p_path)
    k_path = out / "K.txt"
    save_matrix(k_path, sol.k)
    produced.append(k_path)
    summary_path = out / "summary.json"
    _write_json(
        summary_path,
        {
            "fixture": p["fixture"],
            "iterations": sol.iterations,
            "are_residual": sol.residual,
            "p_norm": float(np.linalg.norm(sol.p)),
            "k_norm": float(np.linalg.norm(sol.k)),
        },
    )
    produced.append(summary_path)


def _run_lq_learner(config: ExperimentConfig, out: Path, produced: list):
    p = config.params
    prob = load_fixture(p["fixture"], lam=p["lam"], alpha=p["alpha"])
    oracle = kleinman_iterate(prob)
    system = HiddenLqSystem(prob.a, prob.b, prob.q, prob.r)
    learner_cfg = LearnerConfig(
        delta_t=p["delta_t"],
        n_sub=p["n_sub"],
        alpha=p["alpha"],
        lam=p["lam"],
        eps_stop=p["eps_stop"],
        max_iters=p["max_iters"],
        seed=config.seed,
        extra_windows=p["extra_windows"],
        eval_horizon=p["eval_horizon"],
        settle_band=p["settle_band"],
    )
    runner = run_onpolicy if config.command == "lq-onpolicy" else run_offpolicy
    report = runner(system, np.zeros((prob.m, prob.n)), learner_cfg)
    rel_err = float(np.linalg.norm(report.p_final - oracle.p) / np.linalg.norm(oracle.p))

    report_path = out / "report.json"
    report.to_json(report_path)
    produced.append(report_path)
    traj_path = out / "trajectory.csv"
    report.trajectory.to_csv(traj_path)
    produced.append(traj_path)
    summary_path = out / "summary.json"
    settling = report.settling_time if math.isfinite(report.settling_time) else None
    _write_json(
        summary_path,
        {
            "fixture": p["fixture"],
            "converged": report.converged,
            "relative_p_error": rel_err,
            "total_samples": report.total_samples,
            "learning_time": report.learning_time,
            "settling_time": settling,
            "total_running_cost": report.total_running_cost,
        },
    )
    produced.append(summary_path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="maxent-hjb", description="max-entropy optimal control experiments"
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", default=None, help="key-value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None, help="output directory")
    args, rest = parser.parse_known_args(argv)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    key = None
    for token in rest:
        if token.startswith("--"):
            if key is not None:
                overrides[key] = "true"
            key = token[2:].replace("-", "_")
        elif key is not None:
            overrides[key] = token
            key = None
        else:
            print(f"error: unexpected argument {token!r}", file=sys.stderr)
            return 2
    if key is not None:
        overrides[key] = "true"

    try:
        config = parse_config(args.command, path=args.config, overrides=overrides)
        manifest = run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MaxEntError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: wrote {len(manifest.outputs)} artifacts to {config.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
