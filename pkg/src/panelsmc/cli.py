"""Command-line driver.

Every subcommand reads a YAML config (plus --seed / --workers / --out-dir
overrides), writes its tabular outputs as CSV and always persists a
RunRecord JSON before exiting successfully. Exit codes: 0 success,
2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .benchmarks import (
    AicRow,
    aic_table,
    glmm_fit,
    score_external_predictions,
)
from .dataio import RunConfig, RunRecord, ingest_panel_csv
from .errors import ConfigError, DataError, PanelSmcError
from .mif import CoolingSchedule, MifSettings, staged_search
from .panel import PanelParams, PanelPomp, panel_loglik
from .params import ParamVector, from_estimation_scale, to_estimation_scale
from .pfilter import pfilter
from .pomp import simulate
from .profile import load_profile_points, mcap, pin_parameter, profile_design, save_profile_points
from .rngs import derive_rng, derive_unit_rng, mix_seed

_common = [
    click.option("--config", "config_path", required=False, type=click.Path(), help="YAML config"),
    click.option("--seed", type=int, default=None, help="overrides the config seed"),
    click.option("--workers", type=int, default=1, show_default=True),
    click.option("--out-dir", "out_dir", type=click.Path(), default=".", show_default=True),
]


def common_options(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


def _load_config(config_path, seed) -> RunConfig:
    if config_path is None:
        if seed is None:
            raise ConfigError("either --config or --seed is required")
        return RunConfig.from_dict({"seed": seed})
    return RunConfig.from_yaml(config_path, seed_override=seed)


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _single_unit_panel_setup(cfg: RunConfig):
    """Build a panel where every data unit runs the configured model."""
    model, params = cfg.build_model()
    if cfg.data is None:
        raise ConfigError("this command needs a 'data' path in the config")
    data = ingest_panel_csv(cfg.data)
    units = [(uid, model, 0.0) for uid in data.unit_ids]
    panel = PanelPomp(units, shared_spec=model.param_spec, specific_spec=())
    pp = PanelParams(
        shared=params,
        specific={uid: ParamVector({}, ()) for uid in data.unit_ids},
    )
    return model, panel, data, pp


def _jittered_draws(pp: PanelParams, n_starts: int, rng, scale: float = 0.1):
    """Starting points spread around a center on the estimation scale;
    fixed parameters stay put."""
    free = np.array([s.perturbation_sd for s in pp.shared.spec]) > 0
    center = to_estimation_scale(pp.shared)
    draws = []
    for _ in range(n_starts):
        vec = center + rng.normal(0, scale, size=center.size) * free
        draws.append(
            PanelParams(
                shared=from_estimation_scale(vec, pp.shared.spec), specific=pp.specific
            )
        )
    return draws


@click.group()
def cli():
    """Simulation-based inference for panels of partially observed Markov
    processes."""


@cli.command("simulate")
@common_options
def simulate_cmd(config_path, seed, workers, out_dir):
    """Simulate trajectory ensembles and quantile bands."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    model, params = cfg.build_model()
    n_sims = int(cfg.algorithm.get("n_sims", 1000))
    if cfg.data is not None:
        data = ingest_panel_csv(cfg.data)
        times = data.times(data.unit_ids[0])
    else:
        times = np.array([5.0 * n + 2.0 for n in range(1, 11)])
    rng = derive_rng(cfg.seed, "simulate")
    diag: dict = {}
    trajs = simulate(model, params.values, times, n_sims, rng, diag=diag)

    rows = []
    for s in range(n_sims):
        for j, t in enumerate(times):
            for d, label in enumerate(model.state_labels):
                rows.append((s, float(t), label, trajs[s, j, d]))
    pd.DataFrame(rows, columns=["sim", "time", "label", "value"]).to_csv(
        out / "trajectories.csv", index=False
    )
    band_rows = []
    for j, t in enumerate(times):
        for d, label in enumerate(model.state_labels):
            q = np.quantile(trajs[:, j, d], [0.025, 0.5, 0.975])
            band_rows.append((float(t), label, q[0], q[1], q[2]))
    pd.DataFrame(band_rows, columns=["time", "label", "q025", "q500", "q975"]).to_csv(
        out / "bands.csv", index=False
    )
    record = RunRecord.create(
        "simulate", cfg, time.perf_counter() - t_start,
        results={"n_sims": n_sims, "model": model.name, "times": [float(t) for t in times]},
        diagnostics={"clamp_events": diag.get("clamp_events", 0)},
    )
    record.save(out / "simulate_record.json")
    click.echo(f"wrote {out / 'trajectories.csv'} and {out / 'bands.csv'}")


@cli.command("pfilter")
@common_options
@click.option("--per-label", is_flag=True, help="also record per-label conditional log-likelihoods")
def pfilter_cmd(config_path, seed, workers, out_dir, per_label):
    """Particle-filter likelihood evaluation on a dataset."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    model, panel, data, pp = _single_unit_panel_setup(cfg)
    J = int(cfg.algorithm.get("J", 1000))
    n_reps = int(cfg.algorithm.get("n_reps", 1))
    result = panel_loglik(panel, data, pp, J=J, n_reps=n_reps, seed=cfg.seed, workers=workers)

    rows = []
    for uid in data.unit_ids:
        rng = derive_unit_rng(cfg.seed, uid, n_reps)  # extra diagnostic pass
        res = pfilter(model, pp.shared.values, data.obs(uid), J, rng,
                      record_label_logliks=per_label)
        for n, t in enumerate(res.times):
            rows.append((uid, float(t), res.cond_logliks[n], res.ess_trace[n]))
    pd.DataFrame(rows, columns=["unit", "time", "cond_loglik", "ess"]).to_csv(
        out / "cond_logliks.csv", index=False
    )
    record = RunRecord.create(
        "pfilter", cfg, time.perf_counter() - t_start,
        results={
            "loglik": result.total,
            "se": result.se,
            "per_unit": result.per_unit,
            "J": J,
            "n_reps": n_reps,
        },
        diagnostics={"n_fail": result.n_fail},
    )
    record.save(out / "pfilter_record.json")
    click.echo(f"panel loglik {result.total:.3f} (se {result.se:.3f})")


def _stage_settings(cfg: RunConfig) -> list[MifSettings]:
    algo = cfg.algorithm
    J = int(algo.get("J", 500))
    rho = float(algo.get("rho", 0.7 ** (1 / 50)))
    marginalize = bool(algo.get("marginalize", False))
    stages = algo.get("stages") or [int(algo.get("M", 150))]
    return [
        MifSettings(J=J, M=int(m), schedule=CoolingSchedule(rho=rho), marginalize=marginalize)
        for m in stages
    ]


@cli.command("search")
@common_options
def search(config_path, seed, workers, out_dir):
    """Staged likelihood maximization, persisting the best candidate."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    model, panel, data, pp = _single_unit_panel_setup(cfg)
    stages = _stage_settings(cfg)
    n_starts = int(cfg.algorithm.get("n_starts", 4))
    sel = float(cfg.algorithm.get("selection_fraction", 0.25))
    eval_reps = int(cfg.algorithm.get("eval_reps", 5))

    draws = _jittered_draws(pp, n_starts, derive_rng(cfg.seed, "starts"))
    result = staged_search(
        panel, data, draws, stages, selection_fraction=sel,
        seed=cfg.seed, eval_reps=eval_reps, workers=workers,
    )
    stage_rows = []
    for summary in result.stages:
        for k, (ll, se) in enumerate(zip(summary.logliks, summary.ses)):
            stage_rows.append((summary.stage, k, ll, se, int(k in set(summary.selected))))
    pd.DataFrame(
        stage_rows, columns=["stage", "candidate", "loglik", "se", "selected"]
    ).to_csv(out / "stage_summary.csv", index=False)

    record = RunRecord.create(
        "search", cfg, time.perf_counter() - t_start,
        results={
            "loglik": result.loglik,
            "se": result.se,
            "marginalize": stages[0].marginalize,
            "best_params": dict(result.best_params.shared.values),
            "stages": [s.M for s in stages],
        },
    )
    record.save(out / "search_record.json")
    click.echo(f"best loglik {result.loglik:.3f} (se {result.se:.3f})")


@cli.command("profile")
@common_options
def profile(config_path, seed, workers, out_dir):
    """Profile a parameter over a grid of pinned values."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    model, panel, data, pp = _single_unit_panel_setup(cfg)
    if cfg.focal is None or not cfg.grid:
        raise ConfigError("profile needs 'focal' and 'grid' in the config")
    n_starts = int(cfg.algorithm.get("n_starts", 2))
    stages = _stage_settings(cfg)
    eval_reps = int(cfg.algorithm.get("eval_reps", 5))
    tasks = profile_design(panel, cfg.focal, cfg.grid, n_starts)

    from .profile import ProfilePoint

    points = []
    for task in tasks:
        pinned_panel, pinned_params = pin_parameter(panel, pp, task.focal, task.value)
        draws = _jittered_draws(
            pinned_params, 4,
            derive_rng(cfg.seed, "profile-starts", task.focal, task.replicate_id),
        )
        res = staged_search(
            pinned_panel, data, draws, stages, selection_fraction=0.25,
            seed=mix_seed(cfg.seed, "profile", task.focal, task.replicate_id,
                          int(task.value * 1e9)),
            eval_reps=eval_reps, workers=workers,
        )
        points.append(
            ProfilePoint(
                focal_value=task.value,
                loglik=res.loglik,
                replicate_id=task.replicate_id,
                full_params=res.best_params,
            )
        )
    save_profile_points(points, out / "profile_points.csv")
    record = RunRecord.create(
        "profile", cfg, time.perf_counter() - t_start,
        results={"focal": cfg.focal, "n_points": len(points)},
    )
    record.save(out / "profile_record.json")
    click.echo(f"wrote {out / 'profile_points.csv'}")


@cli.command("mcap")
@click.option("--points", "points_path", required=True, type=click.Path())
@click.option("--span", type=float, default=0.75, show_default=True)
@click.option("--confidence", type=float, default=0.95, show_default=True)
@common_options
def mcap_cmd(points_path, span, confidence, config_path, seed, workers, out_dir):
    """Smooth a profile and compute the adjusted confidence interval."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    points = load_profile_points(points_path)
    result = mcap(points, span=span, confidence=confidence)
    (out / "mcap.json").write_text(result.to_json())
    pd.DataFrame({"focal": result.grid, "smoothed": result.smoothed}).to_csv(
        out / "mcap_curve.csv", index=False
    )
    record = RunRecord.create(
        "mcap", cfg, time.perf_counter() - t_start,
        results={
            "mle": result.mle,
            "ci": list(result.ci),
            "cutoff": result.cutoff,
            "lo_open": result.lo_open,
            "hi_open": result.hi_open,
        },
    )
    record.save(out / "mcap_record.json")
    lo = "-inf" if result.lo_open else f"{result.ci[0]:.6g}"
    hi = "inf" if result.hi_open else f"{result.ci[1]:.6g}"
    click.echo(f"mle {result.mle:.6g}, {100 * confidence:.0f}% CI ({lo}, {hi})")


@cli.command("benchmark")
@common_options
def benchmark(config_path, seed, workers, out_dir):
    """Fit the polynomial-trend benchmark ladder per response category."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    if cfg.data is None:
        raise ConfigError("benchmark needs a 'data' path in the config")
    data = ingest_panel_csv(cfg.data)

    labels = sorted(
        {lbl for uid in data.unit_ids for ob in data.obs(uid) for lbl in ob.counts}
    )
    rows = []
    for degree, name in ((1, "nb_linear"), (2, "nb_quadratic"), (3, "nb_cubic")):
        total_ll = 0.0
        n_params = 0
        start_by_label: dict = {}
        for label in labels:
            units = []
            for uid in data.unit_ids:
                t, y = [], []
                for ob in data.obs(uid):
                    if label in ob.counts:
                        t.append(ob.time)
                        y.append(ob.counts[label])
                if t:
                    units.append((np.array(t), np.array(y)))
            prev = start_by_label.get((degree - 1, label))
            start = None
            if prev is not None:
                start = np.concatenate([prev[: degree], [0.0], prev[degree:]])
            fit = glmm_fit(degree, units, response_label=label,
                           seed=mix_seed(cfg.seed, "benchmark", degree, label), start=start)
            total_ll += fit.loglik
            n_params += degree + 3
        rows.append(AicRow(model_name=name, n_params=n_params, loglik=total_ll))

    table = aic_table(rows)
    table.to_csv(out / "benchmark_aic.csv", index=False)
    record = RunRecord.create(
        "benchmark", cfg, time.perf_counter() - t_start,
        results={"table": table.to_dict(orient="records")},
    )
    record.save(out / "benchmark_record.json")
    click.echo(table.to_string(index=False))


@cli.command("aic-table")
@click.argument("records", nargs=-1, type=click.Path())
@common_options
def aic_table_cmd(records, config_path, seed, workers, out_dir):
    """Collect (model, n_params, loglik) from run records into an AIC table."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    rows = []
    for path in records:
        rec = RunRecord.load(path)
        res = rec.results
        if "table" in res:
            for r in res["table"]:
                rows.append(AicRow(r["model"], int(r["parameters"]), float(r["loglik"])))
        else:
            if "n_params" not in res or "loglik" not in res:
                raise DataError(f"record {path} lacks n_params/loglik")
            rows.append(
                AicRow(res.get("model", Path(path).stem), int(res["n_params"]),
                       float(res["loglik"]))
            )
    table = aic_table(rows)
    table.to_csv(out / "aic_table.csv", index=False)
    record = RunRecord.create(
        "aic-table", cfg, time.perf_counter() - t_start,
        results={"table": table.to_dict(orient="records")},
    )
    record.save(out / "aic_table_record.json")
    click.echo(table.to_string(index=False))


@cli.command("score-external")
@click.option("--predictions", "predictions_path", required=True, type=click.Path())
@common_options
def score_external(predictions_path, config_path, seed, workers, out_dir):
    """Score externally supplied mean trajectories against panel data."""
    t_start = time.perf_counter()
    cfg = _load_config(config_path, seed)
    out = _prepare_out(out_dir)
    if cfg.data is None:
        raise ConfigError("score-external needs a 'data' path in the config")
    data = ingest_panel_csv(cfg.data)
    pred_df = pd.read_csv(predictions_path)
    needed = {"unit", "time", "label", "mean"}
    if not needed.issubset(pred_df.columns):
        raise DataError(f"predictions CSV must have columns {sorted(needed)}")
    predictions = {
        (str(r.unit), float(r.time), str(r.label)): float(r.mean)
        for r in pred_df.itertuples()
    }
    tau_grid = cfg.tau_grid or np.geomspace(0.05, 1e4, 60).tolist()
    best_tau, loglik = score_external_predictions(predictions, data, tau_grid)
    record = RunRecord.create(
        "score-external", cfg, time.perf_counter() - t_start,
        results={"best_tau": best_tau, "loglik": loglik, "n_tau": len(tau_grid)},
    )
    record.save(out / "score_external_record.json")
    click.echo(f"best tau {best_tau:.4g}, loglik {loglik:.3f}")


def main():
    """Entry point mapping package errors onto exit codes."""
    try:
        cli.main(standalone_mode=False)
    except click.exceptions.UsageError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(1)
    except PanelSmcError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(err.exit_code)


if __name__ == "__main__":
    main()
