"""CLI stages: each reads the run config, calls the toolkit and writes its artifacts.

Every stage returns the one-line summary ``main`` prints on stdout. Artifacts
are deterministic: JSON with sorted keys and the config echo, CSV with exact
float text, SVG without timestamps.
"""

from __future__ import annotations

from pathlib import Path
from typing import (
    List,
    Optional,
    Tuple,
)

import numpy as np

from app.cli.tracing import trace
from app.core.exceptions import (
    ConfigError,
    FeedbackError,
)
from app.core.logging import logger
from app.core.metrics import write_metrics
from app.tools.checkpoint import (
    load_checkpoint,
    save_checkpoint,
)
from app.tools.dataset import (
    is_sequence_store,
    load_dataset,
    load_sequence_store,
    load_store_manifest,
    save_dataset,
    save_sequence_store,
)
from app.tools.harness import (
    ablation_rows,
    evaluate,
    run_2d_vs_3d,
    run_ablation_suite,
    run_experiment,
    split_sequences,
)
from app.tools.models.config_model import RunConfig
from app.tools.models.dataset_model import (
    Dataset,
    DatasetManifest,
)
from app.tools.models.sequence_model import (
    LipIndexMap,
    S3dlmSequence,
)
from app.tools.plotting import save_heatmap
from app.tools.prior import (
    export_prior_csv,
    fit_prior,
)
from app.tools.reports import (
    aligned_table,
    csv_text,
    write_json,
    write_text,
)
from app.tools.sequence import (
    identity_lip_index_map,
    load_lip_index_map,
    preprocess_utterances,
)
from app.tools.stats import (
    independence_csv,
    independence_report,
    motion_variance_table,
    render_independence_report,
    verify_decomposition,
)
from app.tools.synthetic import generate_synthetic

CHECKPOINT_NAME = "model.3lmn"


def _out_dir(out: Path) -> Path:
    if not out.parent.exists():
        raise ConfigError(f"output parent directory does not exist: {out.parent}")
    out.mkdir(exist_ok=True)
    return out


def _index_map(config: RunConfig, override: Optional[Path]) -> LipIndexMap:
    path = override or config.preprocess.index_map
    return load_lip_index_map(path) if path else identity_lip_index_map()


def _sequences(
    data: Path, config: RunConfig, index_map: Optional[Path] = None
) -> Tuple[List[S3dlmSequence], DatasetManifest, Optional[Dataset]]:
    """Corrected sequences from a store, or from a raw dataset preprocessed in memory."""
    if is_sequence_store(data):
        return load_sequence_store(data), load_store_manifest(data), None
    ds = load_dataset(data)
    sequences, _ = preprocess_utterances(ds.utterances, _index_map(config, index_map))
    return sequences, ds.manifest, ds


@trace("gen")
def cmd_gen(*, config: RunConfig, out: Path) -> str:
    ds = generate_synthetic(config.synthetic)
    save_dataset(ds, out)
    return f"gen: {len(ds.utterances)} utterances ({ds.manifest.n_speakers} speakers) -> {out}"


@trace("preprocess")
def cmd_preprocess(*, config: RunConfig, data: Path, out: Path, index_map: Optional[Path] = None) -> str:
    ds = load_dataset(data)
    sequences, rows = preprocess_utterances(ds.utterances, _index_map(config, index_map))
    skipped = len(rows) - len(sequences)
    save_sequence_store(
        sequences,
        out,
        log_rows=rows,
        extra={"dataset": ds.manifest.model_dump(mode="json"), "skipped": skipped, "config": config.echo()},
    )
    write_metrics()
    return f"preprocess: {len(sequences)} sequences, {skipped} skipped -> {out}"


@trace("train")
def cmd_train(*, config: RunConfig, data: Path, out: Path) -> str:
    out = _out_dir(out)
    sequences, _, _ = _sequences(data, config)
    model, report = run_experiment(sequences, config.model, config.train, config_echo=config.echo())
    save_checkpoint(model, out / CHECKPOINT_NAME)
    write_json(out / "run_report.json", report.model_dump(mode="json"))
    write_text(out / "losses.csv", csv_text(["step", "loss"], list(enumerate(report.losses))))
    write_metrics()
    return (
        f"train: mode={report.mode.value} train_acc={report.train_accuracy:.4f} "
        f"test_acc={report.test_accuracy:.4f} -> {out}"
    )


@trace("eval")
def cmd_eval(*, config: RunConfig, data: Path, checkpoint: Path, out: Path) -> str:
    out = _out_dir(out)
    sequences, _, _ = _sequences(data, config)
    _, test = split_sequences(sequences, config.train.split_kind, config.train.n_train, config.train.seed)
    model = load_checkpoint(checkpoint)
    accuracy = evaluate(model, test)
    write_json(
        out / "eval.json",
        {
            "accuracy": accuracy,
            "checkpoint": checkpoint.name,
            "mode": model.config.ablation_mode.value,
            "split_kind": config.train.split_kind.value,
            "test_utterances": len(test),
            "config": config.echo(),
        },
    )
    return f"eval: accuracy={accuracy:.4f} on {len(test)} utterances -> {out}"


@trace("ablate")
def cmd_ablate(*, config: RunConfig, data: Path, out: Path, with_2d: bool = False) -> str:
    out = _out_dir(out)
    sequences, _, _ = _sequences(data, config)
    seeds = config.ablation.seeds
    table = run_ablation_suite(sequences, config.model, config.train, seeds, config_echo=config.echo())
    if with_2d or config.ablation.with_2d:
        table.rows.append(run_2d_vs_3d(sequences, config.model, config.train, seeds))
    headers, rows = ablation_rows(table)
    write_text(out / "ablation.csv", csv_text(headers, rows))
    pretty = [
        [r.label] + [f"{100 * s.mean:.2f}% ± {100 * s.std:.2f}" for s in r.scores.values()] for r in table.rows
    ]
    ordering = ", ".join(f"{k.value}={'holds' if v else 'VIOLATED'}" for k, v in table.ordering_holds.items())
    write_text(
        out / "ablation.txt",
        aligned_table(["model", *[k.value for k in table.ordering_holds]], pretty)
        + f"\nprior >= opposed prior: {ordering}\nseeds: {seeds}\n",
    )
    write_json(out / "ablation.json", table.model_dump(mode="json"))
    write_metrics()
    return f"ablate: {len(table.rows)} rows over {len(seeds)} seed(s), ordering {ordering} -> {out}"


@trace("stats")
def cmd_stats(*, config: RunConfig, data: Path, out: Path) -> str:
    out = _out_dir(out)
    sequences, manifest, raw = _sequences(data, config)
    table = motion_variance_table(sequences, manifest)
    cfg = config.stats
    report = independence_report(table, cfg.text_group_size, cfg.n_texts_used, cfg.speaker_group_size)
    if cfg.verify_decomposition and raw is not None and manifest.has_ground_truth and not manifest.pose_applied:
        report = report.model_copy(update={"decomposition_max_error": verify_decomposition(raw)})
    elif cfg.verify_decomposition:
        logger.info("decomposition_check_skipped", has_ground_truth=manifest.has_ground_truth)

    headers = ["speaker_id", *[f"sent{j}" for j in range(table.n_sentences)]]
    rows = [[i, *map(float, row)] for i, row in enumerate(table.v)]
    write_text(out / "variance_table.csv", csv_text(headers, rows))
    write_text(out / "independence.csv", independence_csv(report))
    write_text(out / "independence.txt", render_independence_report(report))
    payload = report.model_dump(mode="json")
    payload["ratio"] = None if np.isinf(report.ratio) else report.ratio
    write_json(out / "independence.json", {**payload, "config": config.echo()})
    extra = ""
    if report.decomposition_max_error is not None:
        extra = f" decomposition_max_error={report.decomposition_max_error:.3g}"
    return (
        f"stats: std(D_t)={report.std_of_Dt:.4g} std(D_s)={report.std_of_Ds:.4g} "
        f"ratio={report.ratio:.3g}{extra} -> {out}"
    )


@trace("plot-prior")
def cmd_plot_prior(*, config: RunConfig, data: Path, out: Path, checkpoint: Optional[Path] = None) -> str:
    out = _out_dir(out)
    sequences, _, _ = _sequences(data, config)
    train, _ = split_sequences(sequences, config.train.split_kind, config.train.n_train, config.train.seed)
    stats, prior = fit_prior(train)
    save_heatmap(prior.p, "Fluctuation prior p (lighter = larger fluctuation)", out / "prior.svg")
    write_text(out / "prior.csv", export_prior_csv(stats.delta, prior))
    written = ["prior.svg", "prior.csv"]
    if checkpoint is not None:
        model = load_checkpoint(checkpoint)
        if model.feedback is None:
            raise FeedbackError(f"{checkpoint}: baseline checkpoint has no feedback vector to plot")
        theta = model.feedback.theta.values
        title = f"Learned feedback theta ({model.config.ablation_mode.value})"
        save_heatmap(theta, title, out / "theta.svg")
        written.append("theta.svg")
    return f"plot-prior: {', '.join(written)} -> {out}"
