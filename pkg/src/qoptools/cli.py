"""Batch front end: JSON configs in, JSON and CSV results out.

Every subcommand takes --config/--out/--seed/--threads, writes
result.json (and any CSV plot data) into the output directory, and
reserves stdout for machine-readable values.  Progress goes to stderr.
Exit codes: 0 success, 1 bad input, 2 iteration cap hit (results are
still written, flagged as unconverged).

Wall-clock timestamps live in a run_info.json sidecar so that result
files from identical (config, seed) pairs are byte-identical.
"""
from __future__ import annotations

import json
import os
import sys
import time
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__, bell, qmp, qse
from .errors import NotConverged, NotViolatedAtAnyEfficiency, QopError
from .mathcore import fidelity, matrix_to_dict

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _load_json(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def emit_plot_data(rows, header: str, path: str) -> None:
    """CSV with one documented header row and deterministic row order."""
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _sidecar(out_dir, command, config_path, seed, threads, started, extra=None):
    info = {
        "command": command,
        "config": os.path.abspath(config_path),
        "seed": seed,
        "threads": threads,
        "started_utc": datetime.fromtimestamp(started, tz=timezone.utc).isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "runtime_seconds": time.time() - started,
        "version": __version__,
    }
    if extra:
        info.update(extra)
    _write_json(os.path.join(out_dir, "run_info.json"), info)


def _resolve_inline(cfg, key: str, base_dir: str, loader):
    """Config entry that is either inline JSON or a relative file path."""
    raw = cfg.get(key)
    if raw is None:
        raise QopError(f"config is missing {key!r}")
    if isinstance(raw, str):
        raw = _load_json(os.path.join(base_dir, raw))
    return loader(raw)


class _Runner:
    """Shared setup/teardown: config loading, timing, sidecar, exit code."""

    def __init__(self, command, config_path, out_dir, seed, threads):
        self.command = command
        self.config_path = config_path
        self.base_dir = os.path.dirname(os.path.abspath(config_path))
        self.out_dir = out_dir
        self.seed = seed
        self.threads = threads

    def __call__(self, body) -> None:
        started = time.time()
        os.makedirs(self.out_dir, exist_ok=True)
        try:
            cfg = _load_json(self.config_path)
            click.echo(f"{self.command}: seed={self.seed} config={self.config_path}", err=True)
            code, result, extra = body(cfg)
            result["command"] = self.command
            result["seed"] = self.seed
            _write_json(os.path.join(self.out_dir, "result.json"), result)
            _sidecar(
                self.out_dir, self.command, self.config_path, self.seed, self.threads,
                started, extra,
            )
        except (QopError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_INPUT_ERROR)
        click.echo(f"{self.command}: done in {time.time() - started:.2f}s", err=True)
        sys.exit(code)


def _common(fn):
    fn = click.option("--threads", default=1, type=click.IntRange(min=1), show_default=True,
                      help="Worker threads for trial-parallel commands.")(fn)
    fn = click.option("--seed", default=0, type=click.IntRange(0, 2**64 - 1),
                      show_default=True, help="Seed for every random draw in the run.")(fn)
    fn = click.option("--out", "out_dir", default=".", show_default=True,
                      type=click.Path(file_okay=False), help="Output directory.")(fn)
    # existence is checked at open time so a missing file exits 1, not
    # click's usage-error 2, which is reserved for the iteration cap
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(dir_okay=False),
                      help="JSON run configuration.")(fn)
    return fn


@click.group()
def main():
    """Estimation, Bell-gap, and marginal-problem batch runs."""


@main.command(name="qse-estimate")
@_common
def qse_estimate(config_path, out_dir, seed, threads):
    """Reconstruct a state from measured frequencies."""
    runner = _Runner("qse-estimate", config_path, out_dir, seed, threads)

    def body(cfg):
        problem, reference = qse.estimation_problem_from_dict(cfg, base_dir=runner.base_dir)
        res = qse.estimate(problem)
        result = {
            "converged": res.converged,
            "iterations": res.iterations,
            "residual": res.residual,
            "fidelity": None if reference is None else fidelity(res.state, reference),
        }
        if cfg.get("dump_state", True):
            result["state"] = matrix_to_dict(res.state.matrix)
        return (EXIT_OK if res.converged else EXIT_NOT_CONVERGED), result, None

    runner(body)


@main.command(name="qse-benchmark")
@_common
def qse_benchmark(config_path, out_dir, seed, threads):
    """Mean reconstruction fidelity over randomized noisy trials."""
    runner = _Runner("qse-benchmark", config_path, out_dir, seed, threads)

    def body(cfg):
        stats = qse.run_benchmark(
            int(cfg["qubits"]),
            cfg.get("protocol", "mub"),
            trials=int(cfg.get("trials", 50)),
            rng=seed,
            white_noise=float(cfg.get("white_noise", 0.1)),
            samples_factor=float(cfg.get("samples_factor", 100)),
        )
        result = {
            "protocol": cfg.get("protocol", "mub"),
            "qubits": int(cfg["qubits"]),
            "trials": int(cfg.get("trials", 50)),
            "white_noise": float(cfg.get("white_noise", 0.1)),
            "samples_factor": float(cfg.get("samples_factor", 100)),
        }
        result.update(stats)
        click.echo(f"{result['mean_fidelity']:.6f}")
        return EXIT_OK, result, None

    runner(body)


@main.command(name="bell-lhv")
@_common
def bell_lhv(config_path, out_dir, seed, threads):
    """Exact local-hidden-variable bound of an inequality."""
    runner = _Runner("bell-lhv", config_path, out_dir, seed, threads)

    def body(cfg):
        ineq = _resolve_inline(cfg, "inequality", runner.base_dir, bell.inequality_from_dict)
        bound = bell.lhv_bound(ineq)
        click.echo(f"{bound:g}")
        return EXIT_OK, {"bound": bound}, None

    runner(body)


@main.command(name="bell-optimize")
@_common
def bell_optimize(config_path, out_dir, seed, threads):
    """Search for the inequality with the largest quantum/classical gap."""
    runner = _Runner("bell-optimize", config_path, out_dir, seed, threads)

    def body(cfg):
        counts = _resolve_inline(cfg, "counts", runner.base_dir, bell.counts_from_dict)
        res = bell.maximize_gap(counts, trials=int(cfg.get("trials", 20)), rng=seed)
        printed = bell.format_inequality(res.inequality)
        click.echo(printed)
        click.echo(f"{res.ratio:.10f}")
        result = {
            "ratio": res.ratio,
            "quantum": res.quantum,
            "error": res.error,
            "classical": res.classical,
            "inequality": bell.inequality_to_dict(res.inequality),
            "printed": printed,
        }
        return EXIT_OK, result, None

    runner(body)


@main.command(name="bell-efficiency")
@_common
def bell_efficiency(config_path, out_dir, seed, threads):
    """Critical detection efficiency for a behavior to keep violating."""
    runner = _Runner("bell-efficiency", config_path, out_dir, seed, threads)

    def body(cfg):
        ineq = _resolve_inline(cfg, "inequality", runner.base_dir, bell.inequality_from_dict)
        if "behavior" in cfg:
            behavior = _resolve_inline(cfg, "behavior", runner.base_dir, bell.behavior_from_dict)
        else:
            behavior = _resolve_inline(cfg, "counts", runner.base_dir, bell.counts_from_dict).behavior()
        mode = cfg.get("mode", "symmetric")
        try:
            eta = bell.efficiency_threshold(ineq, behavior, mode=mode)
            result = {"mode": mode, "threshold": eta, "violated_at_any_efficiency": True}
            click.echo(f"{eta:g}")
        except NotViolatedAtAnyEfficiency:
            result = {"mode": mode, "threshold": None, "violated_at_any_efficiency": False}
            click.echo("none")
        return EXIT_OK, result, None

    runner(body)


@main.command(name="qmp-solve")
@_common
def qmp_solve(config_path, out_dir, seed, threads):
    """Find a global state with prescribed marginals and spectrum."""
    runner = _Runner("qmp-solve", config_path, out_dir, seed, threads)

    def body(cfg):
        spec, constraint = qmp.problem_from_dict(cfg, base_dir=runner.base_dir)
        kwargs = dict(
            accuracy=float(cfg.get("accuracy", 1e-6)),
            max_iterations=int(cfg.get("max_iterations", 50000)),
            rng=seed,
            identity_seed=bool(cfg.get("identity_seed", False)),
        )
        code = EXIT_OK
        try:
            if "schedule" in cfg:
                sched = qmp.HalpernSchedule(**{k: float(v) for k, v in cfg["schedule"].items()})
                state, report = qmp.solve_accelerated(spec, constraint, schedule=sched, **kwargs)
            else:
                state, report = qmp.solve(spec, constraint, **kwargs)
        except NotConverged as exc:
            state, report = exc.result
            code = EXIT_NOT_CONVERGED
            click.echo("iteration cap hit before tolerance", err=True)
        rows = report.trajectory_rows()
        emit_plot_data(rows, "n,marginal_dist,spectral_dist,total_dist",
                       os.path.join(runner.out_dir, "trajectory.csv"))
        result = {
            "converged": report.converged,
            "iterations": report.iterations,
            "final": {
                "marginal_dist": float(report.marginal_dist[-1]),
                "spectral_dist": float(report.spectral_dist[-1]),
                "total_dist": float(report.total_dist[-1]),
            },
            "trajectory": {
                "steps": [int(n) for n in report.steps],
                "marginal_dist": [float(v) for v in report.marginal_dist],
                "spectral_dist": [float(v) for v in report.spectral_dist],
                "total_dist": [float(v) for v in report.total_dist],
            },
        }
        if cfg.get("dump_state", True):
            result["state"] = matrix_to_dict(state.matrix)
        click.echo(f"{report.total_dist[-1]:.3e}")
        return code, result, {"solver_runtime_seconds": report.runtime}

    runner(body)


@main.command(name="qmp-sweep")
@_common
def qmp_sweep(config_path, out_dir, seed, threads):
    """Count PSD outcomes of random marginal impositions."""
    runner = _Runner("qmp-sweep", config_path, out_dir, seed, threads)

    def body(cfg):
        m_values = cfg.get("m_values")
        if m_values is None:
            lo, hi = cfg["m_range"]
            m_values = list(range(int(lo), int(hi) + 1))
        table = qmp.npm_sweep(
            int(cfg["N"]),
            int(cfg["k"]),
            int(cfg["d"]),
            m_values,
            trials=int(cfg.get("trials", 1000)),
            generator=cfg.get("generator", "full-rank"),
            rng=seed,
            workers=threads,
        )
        emit_plot_data(table, "m,psd_count", os.path.join(runner.out_dir, "sweep.csv"))
        for m, count in table:
            click.echo(f"{m} {count}")
        result = {
            "N": int(cfg["N"]),
            "k": int(cfg["k"]),
            "d": int(cfg["d"]),
            "generator": cfg.get("generator", "full-rank"),
            "trials": int(cfg.get("trials", 1000)),
            "table": [[int(m), int(c)] for m, c in table],
        }
        return EXIT_OK, result, None

    runner(body)


if __name__ == "__main__":
    main()
