"""``capdrop`` command-line entry point."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from typing import Sequence

from . import analysis, experiments
from .config import COMMANDS, DEFAULT_DT, ConfigError, RunConfig, parse_config
from .experiments import ParamSampler
from .model_core import critical_n, default_n_grid
from .output import Table, rows_of, write_results
from .sde_engine import SimConfig, simulate_ensemble
from .svg import diagram_data, render_svg

log = logging.getLogger("capdrop")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DIAGRAM_HEADER = ("k", "q_sample", "sim_index", "sample_time", "is_free_flow")
DIAGRAM_SUMMARY_HEADER = ("k", "q_mean", "q_var", "q_det", "free_flow_fraction", "mean_speed")
MOMENT_HEADER = (
    "combo_id", "r0s", "mu_theory", "mu_sim", "ratio_mean", "gamma_theory", "gamma_sim", "ratio_var",
)
MOMENT_PARAMS_HEADER = ("combo_id", "n_total", "c1", "c2", "sigma")
CONVERGENCE_HEADER = (
    "combo_id", "n_total", "sigma", "c1", "c2", "r0", "r0s", "decay_rate", "mean_t_s",
    "n_converged", "n_failed",
)
CI_HEADER = ("window_lo", "window_hi", "level", "point_estimate", "lower", "upper", "amplitude")
SCAN_HEADER = ("c1", "c2", "sigma", "capacity_drop", "sigcond1_ok", "sigcond2_ok")
SCAN_POINTS_HEADER = ("c1", "sigma", "k", "q_mean", "q_var", "q_det", "free_flow_fraction")


class Outputs:
    def __init__(self) -> None:
        self.tables: dict[str, Table] = {}
        self.blobs: dict[str, bytes] = {}
        self.paths = None
        self.record_every = 1


def _sim_covering(sim: SimConfig, t_needed: float) -> SimConfig:
    """``sim`` stretched to reach ``t_needed`` at the same step size."""
    if t_needed <= sim.t_end:
        return sim
    return replace(sim, t_end=t_needed, n_steps=int(round(t_needed / sim.dt)))


def _diagram_tables(points) -> tuple[Table, Table]:
    samples = [
        (pt.k, q, j, t, ff)
        for pt in points
        for j, (q, t, ff) in enumerate(zip(pt.q_samples, pt.sample_times, pt.is_free_flow))
    ]
    summary = [
        (pt.k, pt.q_mean, pt.q_var, pt.q_det, pt.free_flow_fraction, pt.mean_speed) for pt in points
    ]
    return Table(DIAGRAM_HEADER, samples), Table(DIAGRAM_SUMMARY_HEADER, summary)


def run_simulate(cfg: RunConfig, out: Outputs) -> None:
    paths = simulate_ensemble(cfg.scenario(), cfg.sim, cfg.paths, workers=cfg.workers)
    out.paths = paths
    out.record_every = cfg.experiment.record_every
    out.tables["paths_summary"] = Table(
        ("path_index", "seed", "n1_0", "n1_final", "clamp_count"),
        [(i, p.seed, float(p.values[0]), float(p.values[-1]), p.clamp_count) for i, p in enumerate(paths)],
    )


def run_diagram(cfg: RunConfig, out: Outputs) -> None:
    knobs = cfg.experiment
    n_cut = cfg.n_cut if cfg.n_cut is not None else cfg.n_total
    grid = default_n_grid(knobs.n_grid_max if knobs.n_grid_max is not None else n_cut)
    sim = _sim_covering(cfg.sim, knobs.t_window[1])
    points = experiments.fundamental_diagram_scan(
        cfg.model, grid, knobs.sims_per_n, knobs.t_window, sim, cfg.workers, n_cut
    )
    out.tables["diagram"], out.tables["diagram_summary"] = _diagram_tables(points)
    out.tables["capacity_drop"] = Table(
        ("n_c", "capacity_drop"),
        [(critical_n(cfg.model), experiments.capacity_drop(points, critical_n(cfg.model)))],
    )
    if cfg.emit_svg:
        out.blobs["diagram.svg"] = render_svg(diagram_data(points, f"sigma = {cfg.model.sigma:g}"))


def run_scan(cfg: RunConfig, out: Outputs) -> None:
    knobs = cfg.experiment
    p = cfg.model
    n_cut = cfg.n_cut if cfg.n_cut is not None else cfg.n_total
    grid = default_n_grid(knobs.n_grid_max if knobs.n_grid_max is not None else n_cut)
    cells = experiments.parameter_grid_scan(
        knobs.c1_values, knobs.sigma_values, knobs.n_c, p.n_max, n_cut, p.v1, p.v2, p.road_length,
        knobs.sims_per_n, grid, knobs.t_window, _sim_covering(cfg.sim, knobs.t_window[1]), cfg.workers,
    )
    out.tables["scan"] = Table(SCAN_HEADER, rows_of(cells, SCAN_HEADER))
    out.tables["scan_points"] = Table(
        SCAN_POINTS_HEADER,
        [
            (c.c1, c.sigma, pt.k, pt.q_mean, pt.q_var, pt.q_det, pt.free_flow_fraction)
            for c in cells
            for pt in c.points
        ],
    )
    if cfg.emit_svg:
        for a, c1 in enumerate(knobs.c1_values):
            for b, sigma in enumerate(knobs.sigma_values):
                cell = cells[a * len(knobs.sigma_values) + b]
                title = f"c1 = {c1:g}, sigma = {sigma:g}"
                out.blobs[f"scan_{a}_{b}.svg"] = render_svg(diagram_data(cell.points, title))


def _sampler(cfg: RunConfig, condition: str) -> ParamSampler:
    p = cfg.model
    return ParamSampler(
        n_max=p.n_max, v1=p.v1, v2=p.v2, road_length=p.road_length,
        condition=condition, margin=cfg.experiment.sampler_margin,
    )


def run_validate(cfg: RunConfig, out: Outputs) -> None:
    knobs = cfg.experiment
    if knobs.study == "moments":
        sim = _sim_covering(cfg.sim, knobs.moment_window[1])
        rows = experiments.moment_ratio_study(
            _sampler(cfg, "persistent"), knobs.n_combos, knobs.sims_per_combo,
            knobs.moment_window, sim, cfg.workers,
        )
        out.tables["moment_ratios"] = Table(MOMENT_HEADER, rows_of(rows, MOMENT_HEADER))
        out.tables["moment_params"] = Table(MOMENT_PARAMS_HEADER, rows_of(rows, MOMENT_PARAMS_HEADER))
        stats = ("mean", "std", "min", "p25", "p50", "p75", "max")
        summary = []
        for name in ("ratio_mean", "ratio_var"):
            s = experiments.summarize(getattr(r, name) for r in rows)
            summary.append((name,) + tuple(s[k] for k in stats))
        out.tables["moment_ratio_summary"] = Table(("measure",) + stats, summary)
    elif knobs.study == "convergence":
        rows = experiments.convergence_time_map(
            _sampler(cfg, "free_flow"), knobs.n_combos, knobs.sims_per_combo, cfg.sim,
            knobs.epsilon, cfg.workers,
        )
        out.tables["convergence"] = Table(CONVERGENCE_HEADER, rows_of(rows, CONVERGENCE_HEADER))
    else:
        sim = _sim_covering(cfg.sim, max(hi for _, hi in knobs.ci_windows))
        rows = []
        for window in knobs.ci_windows:
            table = experiments.ci_table(
                cfg.scenario(), sim, window, knobs.ci_sample_size, knobs.ci_levels,
                knobs.ci_estimator, cfg.workers,
            )
            rows.extend(
                (window[0], window[1], r.level, r.point_estimate, r.lower, r.upper, r.amplitude)
                for r in table.rows
            )
        out.tables["ci_table"] = Table(CI_HEADER, rows)


def run_moments(cfg: RunConfig, out: Outputs) -> None:
    report = analysis.classify_regime(cfg.scenario())
    th = report.thresholds
    rows = [(name, getattr(th, name)) for name in th.__dataclass_fields__]
    if report.moments is not None:
        rows += [("mu", report.moments.mu), ("gamma", report.moments.gamma), ("n1_g", report.moments.n1_g)]
    out.tables["thresholds"] = Table(("quantity", "value"), rows)
    out.tables["regime"] = Table(("regime", "note"), [(report.regime.value, n) for n in report.notes])


def run_crossings(cfg: RunConfig, out: Outputs) -> None:
    study = experiments.crossing_study(
        cfg.scenario(), cfg.sim, cfg.paths, cfg.experiment.crossing_level, cfg.workers
    )
    step = cfg.experiment.record_every
    idx = list(range(0, len(study.times), step))
    if idx[-1] != len(study.times) - 1:
        idx.append(len(study.times) - 1)
    out.tables["crossings"] = Table(
        ("path_index", "time", "count"),
        [(i, float(study.times[k]), int(study.counts[i, k])) for i in range(len(study.counts)) for k in idx],
    )
    out.tables["crossing_level"] = Table(("level",), [(study.level,)])


RUNNERS = {
    "simulate": run_simulate,
    "diagram": run_diagram,
    "scan": run_scan,
    "validate": run_validate,
    "moments": run_moments,
    "crossings": run_crossings,
}


def execute(cfg: RunConfig) -> dict:
    """Run ``cfg.command`` and write its outputs; returns the manifest."""
    out = Outputs()
    RUNNERS[cfg.command](cfg, out)
    return write_results(out.tables, cfg.output_dir, cfg, out.paths, out.record_every, out.blobs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capdrop", description="Stochastic two-speed traffic model runs.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", metavar="FILE", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    for flag in ("sigma", "c1", "c2", "n-total", "n-max", "n-cut", "t-end"):
        ap.add_argument(f"--{flag}", type=float)
    ap.add_argument("--steps", type=int, help=f"time steps (default: t_end / {DEFAULT_DT:g})")
    ap.add_argument("--paths", type=int)
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--svg", action="store_true", default=None, help="also emit SVG charts")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {
        "seed": args.seed, "sigma": args.sigma, "c1": args.c1, "c2": args.c2,
        "n_total": args.n_total, "n_max": args.n_max, "n_cut": args.n_cut, "t_end": args.t_end,
        "steps": args.steps, "paths": args.paths, "workers": args.workers, "out": args.out,
        "svg": args.svg,
    }
    try:
        data = None
        if args.config:
            try:
                with open(args.config, "rb") as fh:
                    data = fh.read()
            except OSError as exc:
                raise ConfigError("--config", str(exc)) from None
        cfg = parse_config(data, overrides, command=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: log.warning("warning: %s", msg)
            manifest = execute(cfg)
    except Exception as exc:  # anything past validation is a runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in manifest["files"]:
        log.info("wrote %s/%s", cfg.output_dir, f["name"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
