"""Command-line pipeline: simulate -> segment -> fit -> diagnose -> predict -> coverage -> plot.

Each command reads and writes plain files; on failure it exits nonzero and
prints a JSON error object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import artifacts as art
from .config import RunConfig
from .data_io import (
    aggregate, detect_disturbances, parse_survey, read_site_metadata, read_taxonomy,
    records_to_csv, segment, simulate_survey, site_K,
)
from .diagnostics import diagnose
from .likelihood import parameter_names
from .plots import (
    bands_chart, coverage_chart, marginal_chart, richards_chart, richards_curves, trace_chart,
)
from .predictive import (
    coverage_curve, simulate_predictive, smallest_cri, observed_quantile,
)
from .sampler import make_rng, run_fit

log = logging.getLogger("biphasic")


class CommandError(Exception):
    pass


# ---------------------------------------------------------------- commands

def cmd_simulate(params_path, out_path, config: RunConfig) -> Path:
    with open(params_path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if not isinstance(spec, dict) or "sites" not in spec:
        raise CommandError(f"{params_path}: expected an object with a 'sites' list")
    rng = make_rng(np.random.SeedSequence(config.seed, spawn_key=(0x5111,)))
    records = simulate_survey(spec, rng)
    return art.atomic_write(out_path, records_to_csv(records, config.header()))


def cmd_segment(survey_path, out_dir, config: RunConfig) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    taxonomy = None
    if config.taxonomy:
        with open(config.taxonomy, encoding="utf-8") as fh:
            taxonomy = read_taxonomy(fh)
    overrides = {}
    if config.site_metadata:
        with open(config.site_metadata, encoding="utf-8") as fh:
            overrides = read_site_metadata(fh)
    with open(survey_path, encoding="utf-8") as fh:
        records = parse_survey(fh, taxonomy)
    trajs, event_rows = [], []
    for key, series in aggregate(records).items():
        events = detect_disturbances(series, config.p_threshold)
        for e in events:
            event_rows.append([series.reef, series.site, e.visit, series.dates[e.visit].isoformat(),
                               float(e.t_stat), float(e.p_value)])
        if not events:
            continue
        K = site_K(series, overrides.get(key), config.silt_threshold)
        trajs += segment(series, events, K, config.min_post_visits)
    events_path = art.atomic_write(out_dir / "events.csv", art.csv_text(
        config.header(), ["reef", "site", "visit", "date", "t_stat", "p_value"], event_rows))
    traj_path = art.write_trajectories(out_dir / "trajectories.json", trajs, config.header())
    log.info("%d disturbances, %d trajectories", len(event_rows), len(trajs))
    return traj_path, events_path


def _fit_one(args):
    traj, config, out_dir = args
    fit = run_fit(traj, config.fit_config())
    stem = art.safe_name(traj.id)
    draws = art.draws_text(config.header(), traj.id, fit.names, [c.post_burnin() for c in fit.chains])
    art.atomic_write(Path(out_dir) / "draws" / f"{stem}.csv", draws)
    report = {
        "trajectory": traj.id,
        "config_hash": config.hash(),
        "seed": config.seed,
        "model": config.model,
        "iterations": fit.iterations,
        "thin": fit.thin,
        "acceptance_rates": [c.acceptance_rate for c in fit.chains],
        "refactorizations": [c.refactorizations for c in fit.chains],
        "solver_failures": fit.solver_failures,
        "convergence": fit.report.to_dict(),
    }
    art.write_json(Path(out_dir) / "reports" / f"{stem}.json", report)
    return traj.id, fit.converged


def cmd_fit(traj_path, out_dir, config: RunConfig) -> dict[str, bool]:
    trajs = art.read_trajectories(traj_path)
    stems = [art.safe_name(t.id) for t in trajs]
    if len(set(stems)) != len(stems):
        raise CommandError("trajectory ids collide after conversion to file names")
    tasks = [(t, config, str(out_dir)) for t in trajs]
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_fit_one, tasks))
    else:
        results = [_fit_one(t) for t in tasks]
    return dict(results)


def _draw_files(draws_dir) -> list[Path]:
    draws_dir = Path(draws_dir)
    if (draws_dir / "draws").is_dir():
        draws_dir = draws_dir / "draws"
    files = sorted(draws_dir.glob("*.csv"))
    if not files:
        raise CommandError(f"no draws files in {draws_dir}")
    return files


def cmd_diagnose(draws_dir, out_path, config: RunConfig) -> tuple[Path, bool]:
    rows, all_pass = [], True
    for f in _draw_files(draws_dir):
        traj_id, names, chains = art.read_draws(f)
        report = diagnose(chains, names, rhat_threshold=config.rhat_threshold,
                          ess_threshold=config.ess_threshold)
        all_pass &= report.passed
        for name, r, u, e in report.rows():
            rows.append([traj_id, name, r, u, e, int(report.passed)])
    path = art.atomic_write(out_path, art.csv_text(
        config.header(), ["trajectory", "parameter", "r_hat", "r_hat_upper95", "ess", "pass"], rows))
    return path, all_pass


def cmd_predict(draws_dir, traj_path, out_dir, config: RunConfig) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    trajs = {t.id: t for t in art.read_trajectories(traj_path)}
    band_rows, q_rows = [], []
    for f in _draw_files(draws_dir):
        traj_id, names, chains = art.read_draws(f)
        if traj_id not in trajs:
            raise CommandError(f"{f}: trajectory {traj_id!r} is not in {traj_path}")
        M = len(names) // 4
        if names != parameter_names(M):
            raise CommandError(f"{f}: unexpected parameter columns {names}")
        traj = trajs[traj_id].for_model(M)
        pooled = np.concatenate(chains, axis=0)
        rng = make_rng(np.random.SeedSequence(config.seed, spawn_key=(zlib.crc32(traj_id.encode()), 0xB7)))
        ens = simulate_predictive(pooled, traj, config.n_predictive, rng, config.levels,
                                  rel_tol=config.rel_tol, abs_tol=config.abs_tol)
        q = observed_quantile(ens, traj)
        beta = smallest_cri(q)
        for g, group in enumerate(traj.groups):
            for level in ens.levels:
                lo, hi = ens.bands[level]
                for j, t in enumerate(traj.times):
                    band_rows.append([traj_id, group, float(t), level, float(lo[j, g]), float(hi[j, g])])
            for j, t in enumerate(traj.times):
                q_rows.append([traj_id, group, j, float(t), float(traj.obs[j, g]),
                               float(q[j, g]), float(beta[j, g])])
    bands = art.atomic_write(out_dir / "bands.csv", art.csv_text(
        config.header(), ["trajectory", "group", "time", "level", "lo", "hi"], band_rows))
    quants = art.atomic_write(out_dir / "quantiles.csv", art.csv_text(
        config.header(), ["trajectory", "group", "visit", "time", "obs", "q_obs", "beta"], q_rows))
    return bands, quants


def cmd_coverage(quantiles_path, out_path, config: RunConfig) -> Path:
    _, rows = art.read_csv(quantiles_path)
    if not rows:
        raise CommandError(f"{quantiles_path}: no observations")
    betas = [float(r["beta"]) for r in rows
             if config.coverage_include_initial or int(r.get("visit", 1)) > 0]
    if not betas:
        raise CommandError(f"{quantiles_path}: no observations after the disturbance visit")
    curve = coverage_curve(betas)
    return art.atomic_write(out_path, art.csv_text(
        f"{config.header()} n_obs={curve.n_obs}", ["beta", "p_hat", "s_hat"],
        [[b, p, s] for b, p, s in curve.rows()]))


def cmd_plot(kind, source, out_dir, config: RunConfig) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    if kind == "richards":
        times, curves = richards_curves()
        written.append(art.atomic_write(out_dir / "richards.svg", richards_chart(times, curves, 90.0).render()))
    elif kind == "coverage":
        _, rows = art.read_csv(source)
        chart = coverage_chart([float(r["beta"]) for r in rows], [float(r["p_hat"]) for r in rows],
                               [float(r["s_hat"]) for r in rows])
        written.append(art.atomic_write(out_dir / "coverage.svg", chart.render()))
    elif kind == "bands":
        _, rows = art.read_csv(source)
        series: dict = {}
        for r in rows:
            key = (r["trajectory"], r["group"])
            series.setdefault(key, {}).setdefault(int(r["level"]), []).append(
                (float(r["time"]), float(r["lo"]), float(r["hi"])))
        for (traj_id, group), levels in series.items():
            bands = {}
            for level, pts in levels.items():
                pts.sort()
                times = np.array([p[0] for p in pts])
                bands[level] = (np.array([p[1] for p in pts]), np.array([p[2] for p in pts]))
            chart = bands_chart(times, bands, title=f"{traj_id} {group}")
            name = f"bands_{art.safe_name(traj_id)}_{art.safe_name(group)}.svg"
            written.append(art.atomic_write(out_dir / name, chart.render()))
    elif kind == "draws":
        for f in _draw_files(source):
            traj_id, names, chains = art.read_draws(f)
            stem = art.safe_name(traj_id)
            for j, name in enumerate(names):
                pooled = np.concatenate([c[:, j] for c in chains])
                written.append(art.atomic_write(out_dir / f"marginal_{stem}_{name}.svg",
                                                marginal_chart(pooled, name).render()))
                written.append(art.atomic_write(out_dir / f"trace_{stem}_{name}.svg",
                                                trace_chart([c[:, j] for c in chains], name).render()))
    else:
        raise CommandError(f"unknown plot kind {kind!r}")
    return written


# ---------------------------------------------------------------- argparse

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON file of settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--model", type=int, choices=(1, 2))
    p.add_argument("--max-iters", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--rhat-threshold", type=float)
    p.add_argument("--ess-threshold", type=float)
    p.add_argument("--p-threshold", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="biphasic", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic survey CSV from a site parameter file")
    p.add_argument("params")
    p.add_argument("-o", "--out", default="survey.csv")
    _common(p)

    p = sub.add_parser("segment", help="disturbance events and recovery trajectories")
    p.add_argument("survey")
    p.add_argument("-o", "--out-dir", default=".")
    p.add_argument("--taxonomy")
    p.add_argument("--site-metadata")
    _common(p)

    p = sub.add_parser("fit", help="posterior draws and fit reports per trajectory")
    p.add_argument("trajectories")
    p.add_argument("-o", "--out-dir", default="fit")
    _common(p)

    p = sub.add_parser("diagnose", help="R-hat and ESS table from draws files")
    p.add_argument("draws")
    p.add_argument("-o", "--out", default="diagnostics.csv")
    _common(p)

    p = sub.add_parser("predict", help="posterior predictive bands and observation quantiles")
    p.add_argument("draws")
    p.add_argument("trajectories")
    p.add_argument("-o", "--out-dir", default=".")
    _common(p)

    p = sub.add_parser("coverage", help="coverage curve from quantiles.csv")
    p.add_argument("quantiles")
    p.add_argument("-o", "--out", default="coverage.csv")
    _common(p)

    p = sub.add_parser("plot", help="static SVG charts")
    p.add_argument("kind", choices=("richards", "bands", "coverage", "draws"))
    p.add_argument("source", nargs="?", help="bands.csv, coverage.csv or a draws directory")
    p.add_argument("-o", "--out-dir", default="plots")
    _common(p)
    return ap


_FLAG_KEYS = ("seed", "jobs", "model", "max_iters", "chains", "rhat_threshold", "ess_threshold",
              "p_threshold", "taxonomy", "site_metadata")


def resolve_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    flags = {k: getattr(args, k, None) for k in _FLAG_KEYS}
    return config.updated(**flags).validate()


def run(args) -> dict:
    config = resolve_config(args)
    cmd = args.command
    if cmd == "simulate":
        return {"survey": str(cmd_simulate(args.params, args.out, config))}
    if cmd == "segment":
        t, e = cmd_segment(args.survey, args.out_dir, config)
        return {"trajectories": str(t), "events": str(e)}
    if cmd == "fit":
        status = cmd_fit(args.trajectories, args.out_dir, config)
        return {"fitted": len(status), "converged": sum(status.values())}
    if cmd == "diagnose":
        path, ok = cmd_diagnose(args.draws, args.out, config)
        return {"table": str(path), "pass": ok}
    if cmd == "predict":
        b, q = cmd_predict(args.draws, args.trajectories, args.out_dir, config)
        return {"bands": str(b), "quantiles": str(q)}
    if cmd == "coverage":
        return {"coverage": str(cmd_coverage(args.quantiles, args.out, config))}
    if cmd == "plot":
        if args.kind != "richards" and not args.source:
            raise CommandError(f"plot {args.kind} needs a source file or directory")
        return {"plots": [str(p) for p in cmd_plot(args.kind, args.source, args.out_dir, config)]}
    raise CommandError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(args)
    except Exception as exc:  # reported as JSON for batch drivers
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        log.debug("command failed", exc_info=True)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
