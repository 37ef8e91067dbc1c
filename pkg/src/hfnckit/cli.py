"""Command-line surface for reproducible experiment runs.

Subcommands: synth, segment, train, ensemble, predict, evaluate, report.
Each output directory carries exactly one run_manifest.json describing the
effective configuration and produced artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import click
import numpy as np

from . import __version__
from .catalog import (
    THERAPY_KINDS,
    assemble_episodes,
    catalog_from_json,
    catalog_to_json,
    episode_from_metadata,
    episode_metadata_dict,
    parse_observation_stream,
    records_to_csv,
    validate_catalog,
)
from .evaluate import (
    PredictionSeries,
    anchor_scores,
    horizon_sweep,
    operating_points,
    roc_curve,
    time_to_failure_stats,
)
from .neural import TrainHyper
from .pipeline import (
    fit_stats_for_training,
    make_episode_data,
    make_trial_data,
    segment_cohort,
)
from .preprocess import NormStats, catalog_hash
from .synth import SynthConfig, generate_cohort
from .trainer import (
    EnsembleSpec,
    bundle_from_json,
    bundle_to_json,
    build_multi_ensemble,
    build_simple_ensemble,
    predict_cohort,
    train_hfnc_model,
    train_pretext,
)
from .trials import HFNCPeriod, HFNCTrial, LabelSeries, split_cohort, trial_manifest_dict

CONFIG_DEFAULTS = {
    "hidden_sizes": [128, 256, 128],
    "batch_size": 12,
    "initial_lr": 9.6e-4,
    "patience": 10,
    "reduce_rate": 0.9,
    "max_reductions": 8,
    "dropout": 0.35,
    "recurrent_dropout": 0.2,
    "l2": 1e-4,
    "rmsprop_rho": 0.9,
    "rmsprop_eps": 1e-7,
    "max_epochs": None,
    "freeze_transfer": False,
    "perseveration_k": 3,
    "split_ratios": [0.535, 0.217, 0.248],
    "split_seed": 0,
    "seed": 1,
    "pretext_seed": 100,
    "pretext_seeds": [100, 101, 102, 103],
    "finetune_seeds": [1, 2, 3, 4, 5],
    "pretext_max_rows": 120,
    "pretext_episode_cap": None,
}


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Run config with reference defaults; unknown keys are rejected."""
    config = dict(CONFIG_DEFAULTS)
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        for key, value in user.items():
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"unknown config field: {key}")
            config[key] = value
    _validate_config(config)
    return config


def _require(cond, path, msg):
    if not cond:
        raise ConfigError(f"config field {path}: {msg}")


def _validate_config(c: dict) -> None:
    _require(
        isinstance(c["hidden_sizes"], list)
        and c["hidden_sizes"]
        and all(isinstance(h, int) and h > 0 for h in c["hidden_sizes"]),
        "hidden_sizes", "must be a non-empty list of positive integers",
    )
    for key in ("batch_size", "patience", "max_reductions", "perseveration_k"):
        _require(isinstance(c[key], int) and c[key] >= 1, key, "must be >= 1")
    for key in ("initial_lr", "l2", "rmsprop_rho", "rmsprop_eps"):
        _require(
            isinstance(c[key], (int, float)) and c[key] >= 0, key, "must be >= 0"
        )
    _require(0.0 < c["reduce_rate"] < 1.0, "reduce_rate", "must lie in (0, 1)")
    for key in ("dropout", "recurrent_dropout"):
        _require(0.0 <= c[key] < 1.0, key, "must lie in [0, 1)")
    _require(
        c["max_epochs"] is None or (isinstance(c["max_epochs"], int) and c["max_epochs"] >= 1),
        "max_epochs", "must be null or >= 1",
    )
    ratios = c["split_ratios"]
    _require(
        isinstance(ratios, list) and len(ratios) == 3
        and abs(sum(ratios) - 1.0) < 1e-9,
        "split_ratios", "must be three numbers summing to 1",
    )
    _require(
        len(set(c["finetune_seeds"])) == len(c["finetune_seeds"]),
        "finetune_seeds", "must be distinct",
    )
    _require(
        len(set(c["pretext_seeds"])) == len(c["pretext_seeds"]),
        "pretext_seeds", "must be distinct",
    )


def hyper_from_config(c: dict) -> TrainHyper:
    return TrainHyper(
        hidden_sizes=tuple(c["hidden_sizes"]),
        batch_size=c["batch_size"],
        initial_lr=c["initial_lr"],
        patience=c["patience"],
        reduce_rate=c["reduce_rate"],
        max_reductions=c["max_reductions"],
        dropout=c["dropout"],
        recurrent_dropout=c["recurrent_dropout"],
        l2=c["l2"],
        rmsprop_rho=c["rmsprop_rho"],
        rmsprop_eps=c["rmsprop_eps"],
        max_epochs=c["max_epochs"],
        freeze_transfer=c["freeze_transfer"],
    )


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def write_run_manifest(out: Path, config: dict, cat_hash: str, artifacts: list[str]):
    manifest = {
        "config": config,
        "config_hash": config_hash(config),
        "catalog_hash": cat_hash,
        "artifacts": sorted(artifacts),
        "tool_version": __version__,
    }
    (out / "run_manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2)
    )


# --------------------------------------------------------------- data access


def load_data_dir(data: Path):
    catalog = catalog_from_json((data / "catalog.json").read_text())
    records, diags = parse_observation_stream(
        (data / "observations.csv").read_text(), catalog
    )
    if diags:
        click.echo(f"warning: {len(diags)} rejected observation lines", err=True)
    metadata = [
        json.loads(line)
        for line in (data / "episodes.jsonl").read_text().splitlines()
        if line.strip()
    ]
    episodes = assemble_episodes(records, metadata)
    mortality = {}
    manifest_path = data / "manifest.jsonl"
    if manifest_path.exists():
        for line in manifest_path.read_text().splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("type") == "meta":
                mortality = {k: bool(v) for k, v in obj.get("mortality", {}).items()}
    return catalog, episodes, mortality


def _therapy_prevalence(catalog, episodes, training_episode_ids):
    eps = [e for e in episodes if e.episode_id in training_episode_ids]
    if not eps:
        return {}
    prevalence = {}
    for v in catalog:
        if v.kind not in THERAPY_KINDS:
            continue
        n = sum(1 for e in eps if any(r.variable == v.name for r in e.records))
        prevalence[v.name] = n / len(eps)
    return prevalence


def prepare_run(data_dir: Path, config: dict):
    """Shared front half of train/ensemble/predict: segmentation, split,
    catalog pruning, normalization, dense matrices."""
    catalog, episodes, mortality = load_data_dir(data_dir)
    trials, reports = segment_cohort(episodes)
    if not trials:
        raise ConfigError("no trials after segmentation")
    partition = split_cohort(
        trials, tuple(config["split_ratios"]), config["split_seed"]
    )
    training_eps = {
        t.episode_id for t in trials if partition[t.trial_id] == "training"
    }
    prevalence = _therapy_prevalence(catalog, episodes, training_eps)
    catalog2, removed, errors = validate_catalog(catalog, prevalence)
    if errors:
        raise ConfigError("; ".join(errors))
    stats = fit_stats_for_training(episodes, trials, partition, catalog2)
    data = make_trial_data(episodes, trials, partition, stats, catalog2)
    return catalog2, episodes, mortality, trials, partition, stats, data, removed


def save_trials(out: Path, trials, partition):
    lines = [
        json.dumps(trial_manifest_dict(t, partition.get(t.trial_id)), sort_keys=True)
        for t in trials
    ]
    (out / "trials.jsonl").write_text("\n".join(lines) + "\n")


def load_trials(path: Path) -> list[HFNCTrial]:
    trials = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        period = HFNCPeriod(
            d["episode_id"], d["period_start"], d["period_end"],
            d["outcome"], d["resolution_time"],
        )
        trials.append(
            HFNCTrial(
                episode_id=d["episode_id"],
                trial_id=d["trial_id"],
                patient_id=d["patient_id"],
                slice_end=d["resolution_time"],
                period=period,
                label_series=LabelSeries(np.array([]), np.array([])),
                respiratory=d.get("respiratory", False),
            )
        )
    return trials


def load_partition(path: Path) -> dict[str, str]:
    out = {}
    for line in path.read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            out[d["trial_id"]] = d.get("partition", "")
    return out


def save_predictions(path: Path, predictions: dict[str, PredictionSeries]):
    lines = []
    for trial_id in sorted(predictions):
        s = predictions[trial_id]
        for t, p in zip(s.times, s.probs):
            lines.append(
                json.dumps(
                    {"trial_id": trial_id, "time_min": float(t),
                     "probability": float(p)},
                    sort_keys=True,
                )
            )
    path.write_text("\n".join(lines) + "\n")


def load_predictions(path: Path) -> dict[str, PredictionSeries]:
    rows: dict[str, list] = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        rows.setdefault(d["trial_id"], []).append((d["time_min"], d["probability"]))
    out = {}
    for trial_id, pairs in rows.items():
        pairs.sort()
        out[trial_id] = PredictionSeries(
            trial_id,
            np.array([p[0] for p in pairs]),
            np.array([p[1] for p in pairs]),
        )
    return out


def _train_pretexts(config, episodes, mortality, stats, catalog, hyper, seeds):
    from .pipeline import make_episode_data

    episode_data = make_episode_data(
        episodes, stats, catalog, mortality, max_rows=config["pretext_max_rows"]
    )
    cap = config["pretext_episode_cap"]
    if cap is not None:
        episode_data = episode_data[:cap]
    return [(s, train_pretext(episode_data, hyper, s)) for s in seeds]


# -------------------------------------------------------------------- click


def _anchor_minutes(text: str) -> float:
    text = text.strip().lower()
    if text.endswith("h"):
        return float(text[:-1]) * 60.0
    if text.endswith("m"):
        return float(text[:-1])
    return float(text)


class _Fail(click.ClickException):
    exit_code = 1


def _guard(fn):
    """Map validation errors to exit 1 and internal errors to exit 2."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ValueError, FileNotFoundError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
        except click.exceptions.Exit:
            raise
        except Exception as exc:  # internal error
            click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """HFNC failure prediction pipeline."""


@main.command()
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with SynthConfig overrides")
@click.option("--seed", type=int, default=None)
@_guard
def synth(out, config_path, seed):
    """Generate a synthetic cohort with ground-truth manifest."""
    overrides = {}
    if config_path:
        overrides = json.loads(Path(config_path).read_text())
    known = {f.name for f in fields(SynthConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown synth config field: {sorted(unknown)[0]}")
    if seed is not None:
        overrides["seed"] = seed
    cfg = SynthConfig(**overrides)
    episodes, manifest, catalog = generate_cohort(cfg)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "catalog.json").write_text(catalog_to_json(catalog))
    all_records = [r for ep in episodes for r in ep.records]
    (out / "observations.csv").write_text(records_to_csv(all_records))
    (out / "episodes.jsonl").write_text(
        "\n".join(json.dumps(episode_metadata_dict(ep), sort_keys=True)
                  for ep in episodes) + "\n"
    )
    lines = [
        json.dumps(
            {"type": "meta", "config": manifest["config"],
             "scenario_counts": manifest["scenario_counts"],
             "mortality": manifest["mortality"]},
            sort_keys=True,
        )
    ]
    for t in manifest["trials"]:
        lines.append(json.dumps({"type": "trial", **t}, sort_keys=True))
    for e in manifest["exclusions"]:
        lines.append(json.dumps({"type": "exclusion", **e}, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    write_run_manifest(
        out, asdict(cfg), catalog_hash(catalog),
        ["catalog.json", "observations.csv", "episodes.jsonl", "manifest.jsonl"],
    )
    click.echo(
        f"wrote {len(episodes)} episodes, {len(manifest['trials'])} periods to {out}"
    )


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_guard
def segment(data, out, config_path):
    """Segment episodes into trials; write the exclusion report."""
    config = load_config(config_path)
    catalog, episodes, _ = load_data_dir(Path(data))
    trials, reports = segment_cohort(episodes)
    partition = (
        split_cohort(trials, tuple(config["split_ratios"]), config["split_seed"])
        if trials
        else {}
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_trials(out, trials, partition)
    with open(out / "exclusions.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode_id", "decision", "reason"])
        for r in reports:
            writer.writerow([r.episode_id, r.decision, r.reason])
    write_run_manifest(out, config, catalog_hash(catalog),
                       ["trials.jsonl", "exclusions.csv"])
    n_exc = sum(1 for r in reports if r.decision == "excluded")
    click.echo(f"{len(trials)} trials, {n_exc} excluded episodes -> {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--kind", type=click.Choice(
    ["lr14", "lr517", "lstm", "lstm_pers", "lstm_tl", "lstm_pers_tl"]),
    required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--pretext", "pretext_path", type=click.Path(exists=True), default=None,
              help="existing pretext checkpoint for TL kinds")
@_guard
def train(data, out, kind, config_path, pretext_path):
    """Train one model kind end to end."""
    config = load_config(config_path)
    hyper = hyper_from_config(config)
    (catalog, episodes, mortality, trials, partition, stats, tdata,
     removed) = prepare_run(Path(data), config)

    pstack, pseed = None, None
    if kind.endswith("_tl"):
        pseed = config["pretext_seed"]
        if pretext_path:
            pstack = bundle_from_json(Path(pretext_path).read_text()).lstm
        else:
            pstack = _train_pretexts(
                config, episodes, mortality, stats, catalog, hyper, [pseed]
            )[0][1]

    bundle = train_hfnc_model(kind, tdata, hyper, config["seed"], stats,
                              pstack, pseed)

    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    (out / "norm_stats.json").write_text(stats.to_json())
    (out / "checkpoints" / "model.json").write_text(bundle_to_json(bundle))
    save_trials(out, trials, partition)
    preds = predict_cohort(bundle, tdata)
    save_predictions(out / "predictions" / "predictions.jsonl", preds)
    write_run_manifest(
        out, {**config, "kind": kind}, stats.catalog_hash,
        ["checkpoints/model.json", "norm_stats.json", "trials.jsonl",
         "predictions/predictions.jsonl"],
    )
    if removed:
        click.echo(f"pruned rare therapies: {', '.join(removed)}")
    click.echo(f"trained {kind} -> {out}")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["simple", "multi"]), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@_guard
def ensemble(data, out, mode, config_path):
    """Train a simple (1x5) or multi (4x5) ensemble of LSTM+3xPers+TL."""
    config = load_config(config_path)
    hyper = hyper_from_config(config)
    (catalog, episodes, mortality, trials, partition, stats, tdata,
     _removed) = prepare_run(Path(data), config)

    if mode == "simple":
        pseeds = [config["pretext_seed"]]
    else:
        pseeds = config["pretext_seeds"]
    pretexts = _train_pretexts(
        config, episodes, mortality, stats, catalog, hyper, pseeds
    )
    if mode == "simple":
        spec = build_simple_ensemble(
            tdata, hyper, stats, pretexts[0][1], pretexts[0][0],
            config["finetune_seeds"],
        )
    else:
        spec = build_multi_ensemble(
            tdata, hyper, stats, pretexts, config["finetune_seeds"]
        )

    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(exist_ok=True)
    (out / "reports").mkdir(exist_ok=True)
    (out / "norm_stats.json").write_text(stats.to_json())
    member_files = []
    for i, member in enumerate(spec.members):
        name = f"checkpoints/member_{i:02d}.json"
        (out / name).write_text(bundle_to_json(member))
        member_files.append(name)
    (out / "checkpoints" / "ensemble.json").write_text(
        json.dumps({"mode": mode, "members": member_files}, sort_keys=True)
    )
    save_trials(out, trials, partition)
    preds = predict_cohort(spec, tdata)
    save_predictions(out / "predictions" / "predictions.jsonl", preds)
    write_run_manifest(
        out, {**config, "mode": mode}, stats.catalog_hash,
        member_files + ["checkpoints/ensemble.json", "norm_stats.json",
                        "trials.jsonl", "predictions/predictions.jsonl"],
    )
    click.echo(f"trained {mode} ensemble ({len(spec.members)} members) -> {out}")


def _load_run_model(run: Path):
    ens = run / "checkpoints" / "ensemble.json"
    if ens.exists():
        d = json.loads(ens.read_text())
        members = [bundle_from_json((run / m).read_text()) for m in d["members"]]
        return EnsembleSpec(members)
    return bundle_from_json((run / "checkpoints" / "model.json").read_text())


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True)
@click.option("--data", type=click.Path(exists=True), required=True)
@_guard
def predict(run_dir, data):
    """Regenerate predictions for a finished run."""
    run = Path(run_dir)
    model = _load_run_model(run)
    stats = NormStats.from_json((run / "norm_stats.json").read_text())
    catalog, episodes, _ = load_data_dir(Path(data))
    trials, _ = segment_cohort(episodes)
    partition = load_partition(run / "trials.jsonl")
    # features pruned at training time are simply absent from stats and
    # ignored when the matrix is built
    tdata = make_trial_data(episodes, trials, partition, stats, catalog)
    preds = predict_cohort(model, tdata)
    (run / "predictions").mkdir(exist_ok=True)
    save_predictions(run / "predictions" / "predictions.jsonl", preds)
    click.echo(f"wrote predictions for {len(preds)} trials")


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True)
@click.option("--anchor", default="2h", help="operating/ROC anchor, e.g. 2h or 120")
@click.option("--cohort", type=click.Choice(["all", "respiratory"]), default="all")
@click.option("--split", default="test",
              type=click.Choice(["training", "validation", "test", "all"]))
@_guard
def evaluate(run_dir, anchor, cohort, split):
    """Time-anchored AUROC sweep, ROC, operating points, and TTF reports."""
    run = Path(run_dir)
    trials = load_trials(run / "trials.jsonl")
    partition = load_partition(run / "trials.jsonl")
    if split != "all":
        trials = [t for t in trials if partition.get(t.trial_id) == split]
    if cohort == "respiratory":
        trials = [t for t in trials if t.respiratory]
    predictions = load_predictions(run / "predictions" / "predictions.jsonl")
    anchor_min = _anchor_minutes(anchor)

    reports = run / "reports"
    reports.mkdir(exist_ok=True)
    sweep = horizon_sweep(trials, predictions)
    with open(reports / "auroc_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_min", "n_eligible", "n_fail", "n_dropped", "auroc"])
        for r in sweep:
            w.writerow([r.t_min, r.n_eligible, r.n_failures, r.n_dropped,
                        "" if r.auroc is None else f"{r.auroc:.6f}"])

    scores, labels, n_elig, n_fail, dropped = anchor_scores(
        trials, predictions, anchor_min
    )
    tag = f"{int(anchor_min)}"
    plotdata = {"anchor_min": anchor_min, "cohort": cohort,
                "n_eligible": n_elig, "n_failures": n_fail, "n_dropped": dropped}
    if scores.size and 0 < labels.sum() < labels.size:
        curve = roc_curve(scores, labels)
        with open(reports / f"roc_{tag}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fpr", "tpr"])
            for thresh, fpr, tpr in curve:
                w.writerow([thresh, fpr, tpr])
        table = operating_points(scores, labels)
        with open(reports / f"operating_{tag}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["target_sensitivity", "threshold", "sensitivity",
                        "specificity", "ppv", "npv"])
            for row in table:
                w.writerow([
                    row.target_sensitivity, row.threshold,
                    f"{row.sensitivity:.6f}", f"{row.specificity:.6f}",
                    "" if row.ppv is None else f"{row.ppv:.6f}",
                    "" if row.npv is None else f"{row.npv:.6f}",
                ])
        plotdata["roc"] = [list(p) for p in curve]
    else:
        click.echo("warning: single-class labels at anchor; ROC skipped", err=True)

    ttf = time_to_failure_stats(trials)
    with open(reports / "ttf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_min", "count", "cdf"])
        for b, c, d in zip(ttf["bins"], ttf["counts"], ttf["cdf"]):
            w.writerow([b, c, d])
    plotdata["ttf"] = ttf
    plotdata["sweep"] = [
        [r.t_min, r.n_eligible, r.n_failures, r.n_dropped, r.auroc] for r in sweep
    ]
    (reports / "plotdata.json").write_text(json.dumps(plotdata, sort_keys=True))
    click.echo(f"evaluation reports -> {reports}")


@main.command()
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True)
@_guard
def report(run_dir):
    """Render figures from a run's evaluation reports."""
    from . import plots
    from .evaluate import SweepRow

    reports = Path(run_dir) / "reports"
    plotdata = json.loads((reports / "plotdata.json").read_text())
    if plotdata.get("ttf", {}).get("n_failures"):
        plots.plot_time_to_failure(plotdata["ttf"], str(reports / "ttf.png"))
    sweep = [SweepRow(*row) for row in plotdata.get("sweep", [])]
    if sweep:
        plots.plot_auroc_sweep({"model": sweep}, str(reports / "auroc_sweep.png"))
    if "roc" in plotdata:
        tag = f"{int(plotdata['anchor_min'])}"
        plots.plot_roc({"model": plotdata["roc"]},
                       str(reports / f"roc_{tag}.png"),
                       anchor_label=f"{plotdata['anchor_min'] / 60:g}h")
    click.echo(f"figures -> {reports}")


if __name__ == "__main__":
    main()
