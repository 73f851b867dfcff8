"""Training, evaluation and the four-way feedback ablation.

Accuracy is per utterance: argmax of the logits against the speaker id, ties
going to the lowest class index.
"""

from __future__ import annotations

import time
from typing import (
    Dict,
    List,
    Optional,
    Protocol,
    Sequence,
    Tuple,
)

import numpy as np
from tqdm import tqdm

from app.core import metrics
from app.core.exceptions import (
    ConfigError,
    DimensionError,
    EmptyInputError,
    TrainingDivergedError,
)
from app.core.logging import logger
from app.engine import tensor as T
from app.engine.optim import (
    AdamState,
    adam_step,
    lr_decay,
)
from app.tools.dataset import (
    partition_text_dependent,
    partition_text_independent,
)
from app.tools.models.harness_model import (
    AblationRow,
    AblationTable,
    FeedbackOptimizer,
    RunReport,
    SplitKind,
    SplitScore,
    TrainConfig,
)
from app.tools.models.network_model import (
    AblationMode,
    ModelConfig,
)
from app.tools.models.sequence_model import S3dlmSequence
from app.tools.network import (
    LipMotionNet,
    update_feedback,
)
from app.tools.prior import fit_prior
from app.tools.sequence import project_2d

ROW_ORDER: Tuple[Tuple[AblationMode, str], ...] = (
    (AblationMode.BASELINE, "3LMNet-RFM-prior"),
    (AblationMode.RFM_ONLY, "3LMNet+RFM-prior"),
    (AblationMode.RFM_PRIOR_OPPOSED, "3LMNet+RFM+prior_opp"),
    (AblationMode.RFM_PRIOR, "3LMNet+RFM+prior"),
)
LABEL_2D = "3LMNet (2D landmarks)"


class Classifier(Protocol):
    def predict(self, batch: np.ndarray) -> np.ndarray: ...


def _stack(seqs: Sequence[S3dlmSequence]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.network_input() for s in seqs])
    y = np.array([s.speaker_id for s in seqs], dtype=np.int64)
    return x, y


# ───────────────────────────── splits ─────────────────────────────────────
def split_sequences(
    seqs: Sequence[S3dlmSequence], kind: SplitKind, n_train: int, seed: int
) -> Tuple[List[S3dlmSequence], List[S3dlmSequence]]:
    """Text-independent or per-speaker random sentence split of preprocessed sequences."""
    if not seqs:
        raise EmptyInputError("no sequences to split")
    n_sentences = max(s.sentence_id for s in seqs) + 1
    n_speakers = max(s.speaker_id for s in seqs) + 1
    if SplitKind(kind) is SplitKind.TEXT_INDEPENDENT:
        return partition_text_independent(seqs, n_sentences, n_train)
    return partition_text_dependent(seqs, n_speakers, n_sentences, seed, n_train)


# ───────────────────────────── model + training ───────────────────────────
def build_model(config: ModelConfig, train: Sequence[S3dlmSequence], seed: int = 0) -> LipMotionNet:
    """Network for ``config.ablation_mode``; the prior, when needed, is fitted on ``train`` alone."""
    prior = fit_prior(train)[1] if config.ablation_mode.needs_prior else None
    return LipMotionNet(config, prior=prior, seed=seed)


def _grad_norms(model: LipMotionNet) -> Dict[str, float]:
    return {name: float(np.linalg.norm(t.grad)) for name, t in model.named_parameters() if t.grad is not None}


def train(
    model: LipMotionNet,
    train_seqs: Sequence[S3dlmSequence],
    cfg: TrainConfig,
    test_seqs: Optional[Sequence[S3dlmSequence]] = None,
    config_echo: Optional[dict] = None,
) -> RunReport:
    """Mini-batch Adam with step decay; batches are drawn from a seeded reshuffle each epoch."""
    if not train_seqs:
        raise EmptyInputError("training split is empty")
    x, y = _stack(train_seqs)
    classes = model.config.num_speakers
    if y.max() >= classes:
        raise DimensionError("train", "class", classes, int(y.max()) + 1)

    mode = model.config.ablation_mode
    theta = model.feedback.theta if model.feedback is not None else None
    theta_separate = theta is not None and cfg.feedback_optimizer is FeedbackOptimizer.SGD
    params = [t for t in model.parameters() if not (theta_separate and t is theta)]
    state = AdamState(lr=cfg.lr)
    theta_init = theta.values.tolist() if theta is not None else None

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(x))
    cursor = 0
    losses: List[float] = []
    started = time.perf_counter()
    logger.info("training_started", mode=mode.value, samples=len(x), steps=cfg.max_steps, batch_size=cfg.batch_size)

    for step in tqdm(range(cfg.max_steps), desc=f"train[{mode.value}]", leave=False, disable=None):
        if cursor >= len(x):
            order = rng.permutation(len(x))
            cursor = 0
        idx = order[cursor : cursor + cfg.batch_size]
        cursor += cfg.batch_size

        with metrics.training_step_seconds.time():
            model.zero_grad()
            loss = T.softmax_cross_entropy(model(x[idx]), y[idx])
            T.backward(loss)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(step, state.lr, _grad_norms(model))
            adam_step(params, [p.grad for p in params], state)
            if theta_separate:
                update_feedback(model.feedback, theta.grad, cfg.rfm_lr)
            lr_decay(state, step + 1, cfg.decay_every, cfg.decay_factor)

        losses.append(value)
        metrics.training_steps_total.labels(mode=mode.value).inc()
        metrics.training_loss.labels(mode=mode.value).set(value)
        if step % cfg.log_every == 0 or step == cfg.max_steps - 1:
            logger.debug("training_step", mode=mode.value, step=step, loss=value, lr=state.lr)

    report = RunReport(
        mode=mode,
        split_kind=cfg.split_kind,
        seed=cfg.seed,
        steps=cfg.max_steps,
        parameter_count=model.parameter_count(),
        losses=losses,
        train_accuracy=evaluate(model, train_seqs),
        test_accuracy=evaluate(model, test_seqs) if test_seqs else None,
        theta_init=theta_init,
        theta_final=theta.values.tolist() if theta is not None else None,
        config=config_echo or {},
        wall_time_s=time.perf_counter() - started,
    )
    logger.info(
        "training_finished",
        mode=mode.value,
        final_loss=losses[-1],
        train_accuracy=report.train_accuracy,
        test_accuracy=report.test_accuracy,
        wall_time_s=round(report.wall_time_s, 3),
    )
    return report


def evaluate(model: Classifier, seqs: Sequence[S3dlmSequence]) -> float:
    """Fraction of utterances whose argmax logit is the speaker id."""
    if not seqs:
        raise EmptyInputError("evaluation split is empty")
    x, y = _stack(seqs)
    logits = np.asarray(model.predict(x))
    if logits.ndim != 2 or logits.shape[0] != len(y):
        raise DimensionError("evaluate", "batch", len(y), logits.shape[0] if logits.ndim else 0)
    if y.max() >= logits.shape[1]:
        raise DimensionError("evaluate", "class", logits.shape[1], int(y.max()) + 1)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def run_experiment(
    seqs: Sequence[S3dlmSequence],
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    config_echo: Optional[dict] = None,
) -> Tuple[LipMotionNet, RunReport]:
    """Split, fit the prior on the training part, build, train and score one configuration."""
    train_seqs, test_seqs = split_sequences(seqs, cfg.split_kind, cfg.n_train, cfg.seed)
    model_cfg = model_cfg.model_copy(update={"ablation_mode": cfg.ablation_mode})
    model = build_model(model_cfg, train_seqs, seed=cfg.seed)
    return model, train(model, train_seqs, cfg, test_seqs, config_echo)


# ───────────────────────────── ablation ───────────────────────────────────
def _score(accuracies: List[float]) -> SplitScore:
    arr = np.asarray(accuracies)
    return SplitScore(accuracies=accuracies, mean=float(arr.mean()), std=float(arr.std()))


def _row(
    seqs: Sequence[S3dlmSequence],
    model_cfg: ModelConfig,
    base_cfg: TrainConfig,
    mode: AblationMode,
    seeds: Sequence[int],
    label: str,
    input_kind: str = "3d",
) -> AblationRow:
    scores = {}
    for kind in SplitKind:
        accs = []
        for seed in seeds:
            cfg = base_cfg.model_copy(update={"ablation_mode": mode, "split_kind": kind, "seed": seed})
            _, report = run_experiment(seqs, model_cfg, cfg)
            accs.append(report.test_accuracy)
            logger.info(
                "ablation_run", label=label, split=kind.value, seed=seed, test_accuracy=report.test_accuracy
            )
        scores[kind] = _score(accs)
    return AblationRow(label=label, mode=mode, input_kind=input_kind, scores=scores)


def run_ablation_suite(
    seqs: Sequence[S3dlmSequence],
    model_cfg: ModelConfig,
    base_cfg: TrainConfig,
    seeds: Sequence[int],
    config_echo: Optional[dict] = None,
) -> AblationTable:
    """All four feedback variants on both split kinds, mean and population std over seeds."""
    if not seeds:
        raise ConfigError("the ablation suite needs at least one seed")
    rows = [_row(seqs, model_cfg, base_cfg, mode, seeds, label) for mode, label in ROW_ORDER]
    by_mode = {r.mode: r for r in rows}
    ordering = {
        kind: by_mode[AblationMode.RFM_PRIOR].scores[kind].mean
        >= by_mode[AblationMode.RFM_PRIOR_OPPOSED].scores[kind].mean
        for kind in SplitKind
    }
    for kind, holds in ordering.items():
        if not holds:
            logger.warning("ablation_ordering_violated", split=kind.value, seeds=list(seeds))
    return AblationTable(seeds=list(seeds), rows=rows, ordering_holds=ordering, config=config_echo or {})


def run_2d_vs_3d(
    seqs: Sequence[S3dlmSequence],
    model_cfg: ModelConfig,
    base_cfg: TrainConfig,
    seeds: Sequence[int],
) -> AblationRow:
    """The configured mode trained on depth-free landmarks (z set to 0 on both splits)."""
    flat = [project_2d(s) for s in seqs]
    return _row(flat, model_cfg, base_cfg, base_cfg.ablation_mode, seeds, LABEL_2D, input_kind="2d")


def ablation_rows(table: AblationTable) -> Tuple[List[str], List[List]]:
    columns = [(k, stat) for k in SplitKind for stat in ("mean", "std")]
    headers = ["model"] + [f"{k.value}_{stat}" for k, stat in columns]
    rows = [[r.label] + [getattr(r.scores[k], stat) for k, stat in columns] for r in table.rows]
    return headers, rows
