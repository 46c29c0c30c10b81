"""Command-line entry point.

Subcommands cover the whole pipeline: synth-catalog, ingest, cluster,
run-bias, run-forgetting, estimate, report.  Flags override manifest
values, which override defaults; the effective configuration is echoed on
every run and its hash is embedded in every output file.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click
import numpy as np

from . import clustering, estimators, experiments, report, traces
from .catalog import (Catalog, CategoryThresholds, build_synthetic_catalog,
                      load_channel_scores, load_videos, write_catalog_csv)
from .errors import InvalidInputError, RecauditError
from .experiments import (FORGETTING_ARMS, ROLE_BASELINE, ROLE_LONG,
                          ROLE_SHORT, ExperimentSpecA, ExperimentSpecB,
                          load_manifest, read_run, run_baseline_sessions,
                          run_bias_experiment, run_forgetting_experiment)
from .platform import (HOMEPAGE, SIDEBAR, CatalogIndex, config_hash,
                       load_params, RecommenderParams, session_rng)

OUT_ROOT_ENV = "RECAUDIT_OUT"


def _fail_json(exc: RecauditError):
    record = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(record), err=True)
    sys.exit(1)


def _handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RecauditError as exc:
            _fail_json(exc)
    return wrapper


def _resolve_out(out):
    if out:
        return out
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return root
    raise InvalidInputError(
        f"no output directory: pass --out or set {OUT_ROOT_ENV}")


@click.group()
def main():
    """Recommender-audit simulator: bots, experiments, estimators."""


@main.command("synth-catalog")
@click.option("--channels", "n_channels", type=int, required=True)
@click.option("--mean", type=float, default=0.0, show_default=True)
@click.option("--sd", type=float, default=0.08, show_default=True)
@click.option("--videos-per-channel", type=int, default=5, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(), default=None)
@_handles_errors
def synth_catalog(n_channels, mean, sd, videos_per_channel, seed, out):
    """Generate a scored synthetic catalog (channels.csv, videos.csv)."""
    out = _resolve_out(out)
    catalog = build_synthetic_catalog(n_channels, mean, sd,
                                      videos_per_channel, seed)
    os.makedirs(out, exist_ok=True)
    write_catalog_csv(catalog, os.path.join(out, "channels.csv"),
                      os.path.join(out, "videos.csv"))
    click.echo(json.dumps({
        "channels": len(catalog.channels), "videos": len(catalog.videos),
        "seed": seed, "out": out}))


@main.command()
@click.option("--traces", "traces_path", type=click.Path(exists=True),
              required=True)
@_handles_errors
def ingest(traces_path):
    """Validate a trace file and report user/event counts."""
    trajectories = traces.ingest_traces(traces_path)
    n_events = sum(t.M for t in trajectories.values())
    eligible = sum(1 for t in trajectories.values()
                   if t.M >= traces.MIN_TRACE_LEN)
    click.echo(json.dumps({"users": len(trajectories), "events": n_events,
                           "eligible_users": eligible}))


def _load_catalog(channels_path, videos_path, sigma, impute, seed):
    catalog = Catalog(load_channel_scores(channels_path),
                      load_videos(videos_path))
    if impute:
        catalog = catalog.with_imputed_scores(sigma, seed)
    return catalog


def _sample_and_label(trajectories, catalog, thresholds, cfg, seed):
    """Histories, diet vectors, and archetype labels for all eligible users."""
    samples = []
    for user_id in sorted(trajectories):
        traj = trajectories[user_id]
        if traj.M < traces.MIN_TRACE_LEN:
            continue
        weight = traces.lifetime_weight(traj)
        user_rng = session_rng(seed, "history-sampling", user_id)
        samples.extend(traces.sample_histories(
            traj, weight, seed=int(user_rng.integers(2**32))))
    vectors = []
    for s in samples:
        nu = traces.viewership_vector(s, catalog, thresholds, cfg)
        # News filter: at least one minute of scored viewing in the window.
        if traces.news_seconds(s, catalog, thresholds, cfg) < 60.0:
            nu = np.zeros_like(nu)
        vectors.append(nu)
    labels = clustering.cluster_archetypes(vectors, cfg)
    for s, label in zip(samples, labels):
        s.archetype = label
    return samples, labels


@main.command()
@click.option("--traces", "traces_path", type=click.Path(exists=True),
              required=True)
@click.option("--channels", "channels_path", type=click.Path(exists=True),
              required=True)
@click.option("--videos", "videos_path", type=click.Path(exists=True),
              required=True)
@click.option("--seed", type=int, required=True)
@click.option("--k", type=int, default=8, show_default=True)
@click.option("--learning-window", type=int, default=60, show_default=True)
@click.option("--basis", type=click.Choice([traces.WATCH_TIME, traces.COUNT]),
              default=traces.WATCH_TIME, show_default=True)
@click.option("--sigma", type=float, default=0.08, show_default=True)
@click.option("--impute-missing", is_flag=True, default=False)
@click.option("--out", type=click.Path(), default=None)
@_handles_errors
def cluster(traces_path, channels_path, videos_path, seed, k,
            learning_window, basis, sigma, impute_missing, out):
    """Sample histories and cluster them into news-diet archetypes."""
    out = _resolve_out(out)
    thresholds = CategoryThresholds(sigma)
    cfg = traces.ClusterConfig(K=k, learning_window=learning_window,
                               basis=basis)
    catalog = _load_catalog(channels_path, videos_path, sigma,
                            impute_missing, seed)
    trajectories = traces.ingest_traces(traces_path)
    samples, labels = _sample_and_label(trajectories, catalog, thresholds,
                                        cfg, seed)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "archetypes.csv")
    traces.write_archetype_csv(path, samples)
    counts = {}
    for label in labels:
        counts[label.stratum()] = counts.get(label.stratum(), 0) + 1
    click.echo(json.dumps({"histories": len(samples), "strata": counts,
                           "out": path}))


def _manifest_or_flag(manifest, key, flag, default=None):
    if flag is not None:
        return flag
    if key in manifest:
        return manifest[key]
    return default


def _prepare_experiment_inputs(manifest_path, traces_path, channels_path,
                               videos_path, params_path, run_seed,
                               replications, sigma, impute_missing):
    manifest = load_manifest(manifest_path) if manifest_path else {
        "quotas": {}}
    traces_path = _manifest_or_flag(manifest, "traces", traces_path)
    channels_path = _manifest_or_flag(manifest, "channels", channels_path)
    videos_path = _manifest_or_flag(manifest, "videos", videos_path)
    params_path = _manifest_or_flag(manifest, "params", params_path)
    run_seed = _manifest_or_flag(manifest, "run_seed", run_seed)
    replications = _manifest_or_flag(manifest, "replications", replications,
                                     default=3)
    for name, value in (("traces", traces_path), ("channels", channels_path),
                        ("videos", videos_path), ("run_seed", run_seed)):
        if value is None:
            raise InvalidInputError(f"missing required input {name!r}")
    run_seed = int(run_seed)
    replications = int(replications)
    params = load_params(params_path) if params_path \
        else RecommenderParams()
    thresholds = CategoryThresholds(sigma)
    cfg = traces.ClusterConfig()
    catalog = _load_catalog(channels_path, videos_path, sigma,
                            impute_missing, run_seed)
    trajectories = traces.ingest_traces(traces_path)
    samples, labels = _sample_and_label(trajectories, catalog, thresholds,
                                        cfg, run_seed)
    return (manifest, params, thresholds, catalog, samples, labels,
            run_seed, replications)


_shared_experiment_options = [
    click.option("--manifest", "manifest_path", type=click.Path(exists=True),
                 default=None),
    click.option("--traces", "traces_path", type=click.Path(exists=True),
                 default=None),
    click.option("--channels", "channels_path", type=click.Path(exists=True),
                 default=None),
    click.option("--videos", "videos_path", type=click.Path(exists=True),
                 default=None),
    click.option("--params", "params_path", type=click.Path(exists=True),
                 default=None),
    click.option("--run-seed", type=int, default=None),
    click.option("--replications", type=int, default=None),
    click.option("--sigma", type=float, default=0.08, show_default=True),
    click.option("--impute-missing", is_flag=True, default=False),
    click.option("--workers", type=int, default=1, show_default=True),
    click.option("--out", type=click.Path(), default=None),
]


def _with_options(options):
    def deco(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return deco


@main.command("run-bias")
@_with_options(_shared_experiment_options)
@_handles_errors
def run_bias(manifest_path, traces_path, channels_path, videos_path,
             params_path, run_seed, replications, sigma, impute_missing,
             workers, out):
    """Run the four-bot bias experiment from a manifest or flags."""
    out = _resolve_out(out)
    (manifest, params, thresholds, catalog, samples, labels, run_seed,
     replications) = _prepare_experiment_inputs(
        manifest_path, traces_path, channels_path, videos_path, params_path,
        run_seed, replications, sigma, impute_missing)
    quotas = manifest["quotas"] or _default_bias_quotas(labels)
    selected, weights = clustering.stratify_focal_users(labels, quotas,
                                                        run_seed)
    focal = [samples[i] for i in selected]
    focal_weights = {samples[i].history_id: weights[i] for i in selected}
    spec = ExperimentSpecA(focal, focal_weights, replications=replications)
    index = CatalogIndex(catalog, thresholds)
    result = run_bias_experiment(spec, index, params, run_seed,
                                 out_dir=out, workers=workers)
    click.echo(json.dumps({
        "experiment": "bias", "focal_users": len(focal),
        "planned_sessions": result.planned,
        "completed_sessions": result.completed,
        "attrition": len(result.attrition),
        "run_seed": run_seed,
        "config_hash": config_hash(params, run_seed,
                                   {"experiment": "bias"}),
        "params": params.to_dict(), "out": out}))


def _default_bias_quotas(labels):
    """All fR-tier histories plus an equal-sized draw of centrists."""
    strata = {}
    for label in labels:
        strata[label.stratum()] = strata.get(label.stratum(), 0) + 1
    quotas = {}
    for stratum in strata:
        if stratum.startswith("fR:"):
            quotas[stratum] = clustering.ALL
    n_fr = sum(strata[s] for s in quotas)
    if "C" in strata:
        quotas["C"] = min(strata["C"], max(n_fr, 1))
    return quotas


@main.command("run-forgetting")
@_with_options(_shared_experiment_options)
@click.option("--observation", type=int, default=120, show_default=True)
@click.option("--with-baseline/--no-baseline", default=True,
              show_default=True)
@_handles_errors
def run_forgetting(manifest_path, traces_path, channels_path, videos_path,
                   params_path, run_seed, replications, sigma,
                   impute_missing, workers, out, observation, with_baseline):
    """Run the SHORT/LONG forgetting-time experiment."""
    out = _resolve_out(out)
    (manifest, params, thresholds, catalog, samples, labels, run_seed,
     replications) = _prepare_experiment_inputs(
        manifest_path, traces_path, channels_path, videos_path, params_path,
        run_seed, replications, sigma, impute_missing)
    quotas = manifest["quotas"] or {"fR:medium": clustering.ALL,
                                    "fR:high": clustering.ALL}
    selected, weights = clustering.stratify_focal_users(labels, quotas,
                                                        run_seed)
    focal = [samples[i] for i in selected]
    focal_weights = {samples[i].history_id: weights[i] for i in selected}
    moderate_pool = [s for s, label in zip(samples, labels)
                     if label.tag == "C"]
    if not moderate_pool:
        raise InvalidInputError("no moderate (C) partner histories found")
    rng = session_rng(run_seed, "partner-pairing")
    partners = [moderate_pool[int(rng.integers(len(moderate_pool)))]
                for _ in focal]
    spec = ExperimentSpecB(focal, partners, focal_weights,
                           observation=observation,
                           replications=replications)
    index = CatalogIndex(catalog, thresholds)
    result = run_forgetting_experiment(spec, index, params, run_seed,
                                       out_dir=out, workers=workers)
    if with_baseline:
        unique = {p.history_id: p for p in partners}
        run_baseline_sessions(list(unique.values()), index, params,
                              run_seed, out_dir=out)
    click.echo(json.dumps({
        "experiment": "forgetting", "focal_users": len(focal),
        "planned_sessions": result.planned,
        "completed_sessions": result.completed,
        "attrition": len(result.attrition),
        "run_seed": run_seed,
        "config_hash": config_hash(params, run_seed,
                                   {"experiment": "forgetting"}),
        "params": params.to_dict(), "out": out}))


def _catalog_index_from_run(result, channels_path, videos_path, sigma,
                            impute_missing):
    any_log = next(iter(result.logs.values()))
    seed = any_log.session.meta["run_seed"]
    catalog = _load_catalog(channels_path, videos_path, sigma,
                            impute_missing, seed)
    return CatalogIndex(catalog, CategoryThresholds(sigma))


def _forgetting_curves(result, baseline_result, epsilon, window, n_boot,
                       baseline_override=None):
    """Both framings, both surfaces, score and frac-fR metrics."""
    spec_b = next(iter(result.logs.values())).session.meta
    short_learn = min(log.session.n_learning
                      for log in result.logs.values())
    long_learn = max(log.session.n_learning
                     for log in result.logs.values())
    observation = spec_b["n_observation"]
    curves = {}
    for surface in (SIDEBAR, HOMEPAGE):
        if baseline_override is not None:
            baseline = baseline_override
        elif baseline_result is not None and baseline_result.logs:
            baseline = estimators.moderate_baseline(baseline_result, surface)
        else:
            baseline = 0.0
        windows = {
            # Short-vs-control framing: both arms over absolute steps
            # 31..(30+90); the long arm is still replaying fR there.
            "control": (ROLE_LONG, short_learn + 1,
                        min(90, long_learn - short_learn)),
            "switch": (ROLE_SHORT, short_learn + 1,
                       min(90, long_learn - short_learn)),
            # History-length framing: each arm's own post-switch window.
            "short_history": (ROLE_SHORT, short_learn + 1, observation),
            "long_history": (ROLE_LONG, long_learn + 1, observation),
        }
        for arm, (role, start, n_steps) in windows.items():
            matrix, weights = estimators.arm_matrix(
                result, role, surface, start, n_steps)
            frac, _ = estimators.arm_matrix(
                result, role, surface, start, n_steps, metric="frac")
            curves[(surface, arm)] = estimators.forgetting_curve(
                matrix, weights, baseline=baseline, epsilon=epsilon,
                window=window, n_boot=n_boot, frac_matrix=frac)
    return curves


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True),
              required=True)
@click.option("--experiment", type=click.Choice(["bias", "forgetting"]),
              required=True)
@click.option("--channels", "channels_path", type=click.Path(exists=True),
              required=True)
@click.option("--videos", "videos_path", type=click.Path(exists=True),
              required=True)
@click.option("--sigma", type=float, default=0.08, show_default=True)
@click.option("--impute-missing", is_flag=True, default=False)
@click.option("--se-method",
              type=click.Choice([estimators.CLASSICAL,
                                 estimators.BOOTSTRAP]),
              default=estimators.CLASSICAL, show_default=True)
@click.option("--epsilon", type=float, default=0.03, show_default=True)
@click.option("--window", type=int, default=5, show_default=True)
@click.option("--n-boot", type=int, default=500, show_default=True)
@click.option("--baseline", type=float, default=None,
              help="Override the moderate baseline slate score.")
@click.option("--out", type=click.Path(), default=None)
@_handles_errors
def estimate(run_dir, experiment, channels_path, videos_path, sigma,
             impute_missing, se_method, epsilon, window, n_boot, baseline,
             out):
    """Fit the estimators over a completed run directory."""
    out = _resolve_out(out)
    os.makedirs(out, exist_ok=True)
    result = read_run(run_dir, experiment)
    if not result.logs:
        raise InvalidInputError(f"no sessions found under {run_dir}")
    cfg_hash = next(iter(result.logs.values())).session.meta["config_hash"]
    if experiment == "bias":
        index = _catalog_index_from_run(result, channels_path, videos_path,
                                        sigma, impute_missing)
        fits = estimators.bias_regressions(result, index,
                                           se_method=se_method,
                                           n_boot=n_boot)
        bursts = estimators.burst_regressions(result, index,
                                              se_method=se_method,
                                              n_boot=n_boot)
        report.write_regression_json(
            os.path.join(out, "bias_regression.json"), fits, cfg_hash)
        report.write_regression_json(
            os.path.join(out, "burst_regression.json"), bursts, cfg_hash)
        click.echo(json.dumps({
            "experiment": "bias", "config_hash": cfg_hash,
            "alpha": {role: fit[estimators.INTERCEPT]["coef"]
                      for role, fit in fits.items()},
            "out": out}))
    else:
        baseline_result = None
        if os.path.isdir(os.path.join(run_dir, "baseline")):
            baseline_result = read_run(run_dir, "baseline")
        curves = _forgetting_curves(result, baseline_result, epsilon,
                                    window, n_boot,
                                    baseline_override=baseline)
        report.write_curves_csv(os.path.join(out, "forgetting_curves.csv"),
                                curves, cfg_hash)
        summary = {f"{surface}/{arm}": curve.status
                   for (surface, arm), curve in sorted(curves.items())}
        with open(os.path.join(out, "forgetting_summary.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({"config_hash": cfg_hash, "epsilon": epsilon,
                       "window": window,
                       "forgetting_steps": summary}, fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
        click.echo(json.dumps({"experiment": "forgetting",
                               "config_hash": cfg_hash,
                               "forgetting_steps": summary, "out": out}))


@main.command("report")
@click.option("--run", "run_dir", type=click.Path(exists=True),
              required=True)
@click.option("--experiment", type=click.Choice(["bias", "forgetting"]),
              required=True)
@click.option("--channels", "channels_path", type=click.Path(exists=True),
              required=True)
@click.option("--videos", "videos_path", type=click.Path(exists=True),
              required=True)
@click.option("--sigma", type=float, default=0.08, show_default=True)
@click.option("--impute-missing", is_flag=True, default=False)
@click.option("--epsilon", type=float, default=0.03, show_default=True)
@click.option("--window", type=int, default=5, show_default=True)
@click.option("--n-boot", type=int, default=500, show_default=True)
@click.option("--out", type=click.Path(), default=None)
@_handles_errors
def report_cmd(run_dir, experiment, channels_path, videos_path, sigma,
               impute_missing, epsilon, window, n_boot, out):
    """Render tables, curve CSVs, and figures for a completed run."""
    out = _resolve_out(out)
    os.makedirs(out, exist_ok=True)
    result = read_run(run_dir, experiment)
    if not result.logs:
        raise InvalidInputError(f"no sessions found under {run_dir}")
    cfg_hash = next(iter(result.logs.values())).session.meta["config_hash"]
    artifacts = []
    if experiment == "bias":
        index = _catalog_index_from_run(result, channels_path, videos_path,
                                        sigma, impute_missing)
        fits = estimators.bias_regressions(result, index)
        table = report.regression_table_text(fits, cfg_hash)
        table_path = os.path.join(out, "bias_table.txt")
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write(table)
        artifacts.append(table_path)

        rows = estimators.bias_gap_rows(result, index)
        bursts = estimators.burst_regressions(result, index)
        values = list(range(7))
        effects = {}
        for role, fit in bursts.items():
            means = estimators.weighted_feature_means(
                rows[role], ["n_C6", "n_R6", "n_fR6"])
            effects[role] = estimators.marginal_effects(
                fit, means, "n_fR6", values)
        fig_path = os.path.join(out, "burst_marginal_effects.png")
        report.plot_marginal_effects(fig_path, effects, values)
        artifacts.append(fig_path)

        scores_by_role = {}
        for (_, _, role), log in sorted(result.logs.items()):
            obs = log.session.column("watch_score")[log.session.n_learning:]
            scores_by_role.setdefault(role, []).append(
                float(np.nanmean(obs)))
        box_path = os.path.join(out, "observation_boxplots.png")
        report.plot_observation_boxplots(box_path, scores_by_role)
        artifacts.append(box_path)

        first = next(iter(result.by_replication().values()))
        traj_path = os.path.join(out, "example_trajectories.png")
        report.plot_trajectories(
            traj_path, {role: log.session for role, log in first.items()},
            n_learning=next(iter(first.values())).session.n_learning)
        artifacts.append(traj_path)
    else:
        baseline_result = None
        if os.path.isdir(os.path.join(run_dir, "baseline")):
            baseline_result = read_run(run_dir, "baseline")
        curves = _forgetting_curves(result, baseline_result, epsilon,
                                    window, n_boot)
        csv_path = os.path.join(out, "forgetting_curves.csv")
        report.write_curves_csv(csv_path, curves, cfg_hash)
        artifacts.append(csv_path)
        fig_path = os.path.join(out, "forgetting_curves.png")
        report.plot_forgetting_curves(fig_path, curves)
        artifacts.append(fig_path)
    click.echo(json.dumps({"experiment": experiment,
                           "config_hash": cfg_hash,
                           "artifacts": artifacts}))


if __name__ == "__main__":
    main()
