"""Training loop, ablation modes and evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence, TextIO

import numpy as np

from . import augment
from .augment import ParaphraseTable, PerturbationOp, SynonymLexicon
from .encoder import EncoderModel, forward
from .errors import ConfigError, NumericError, TrainingDivergedError
from .mixer import MixConfig, doublemix_forward, merged_forward, partner_forward
from .objective import combined_loss
from .tensor import Tape, backward
from .text import DEFAULT_MAX_SEQ_LEN, Batch, Example, Vocabulary, batch_iter, pad_batch

logger = logging.getLogger(__name__)

FULL = "full"
NO_JSD = "no_jsd"
MERGED_STEPS = "merged_steps"
MIX_OTHER_SAMPLE = "mix_other_sample"
MIX_SAME_CLASS = "mix_same_class"
NO_AUG_BASELINE = "no_aug_baseline"
ABLATION_MODES = (FULL, NO_JSD, MERGED_STEPS, MIX_OTHER_SAMPLE, MIX_SAME_CLASS, NO_AUG_BASELINE)

DEFAULT_OP_POOL = (
    PerturbationOp(augment.SYNONYM_REPLACE, 0.2),
    PerturbationOp(augment.RANDOM_INSERT, 0.1),
    PerturbationOp(augment.RANDOM_SWAP, 0.1),
    PerturbationOp(augment.RANDOM_DELETE, 0.1),
    PerturbationOp(augment.GAUSSIAN_NOISE, augment.DEFAULT_NOISE_SIGMA),
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr_encoder: float = 0.05
    lr_classifier: float = 0.1
    batch_size: int = 16
    gamma: float = 8.0
    mix: MixConfig = field(default_factory=MixConfig)
    op_pool: tuple[PerturbationOp, ...] = DEFAULT_OP_POOL
    patience: int = 5
    ablation_mode: str = FULL
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (self.lr_encoder > 0 and self.lr_classifier > 0):
            raise ConfigError("learning rates must be positive")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.ablation_mode not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {self.ablation_mode!r}; expected one of {ABLATION_MODES}")
        if not self.op_pool:
            raise ConfigError("op_pool is empty")

    @property
    def interpolates(self) -> bool:
        return self.ablation_mode != NO_AUG_BASELINE and bool(self.mix.layer_set)


@dataclass
class Metrics:
    accuracy: float
    macro_f1: float


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_ce: float
    train_jsd: float
    dev_accuracy: float | None
    dev_macro_f1: float | None


@dataclass
class TrainResult:
    model: EncoderModel
    seed: int
    best_epoch: int
    epochs_ran: int
    per_epoch: list[EpochRecord]
    losses: list[float]
    dev: Metrics | None

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "epochs_ran": self.epochs_ran,
            "per_epoch": [asdict(r) for r in self.per_epoch],
            "dev": asdict(self.dev) if self.dev else None,
        }


@dataclass
class AugmentResources:
    """What the perturbation operators need besides the example itself."""

    vocab: Vocabulary
    lexicon: SynonymLexicon | None = None
    paraphrases: ParaphraseTable | None = None


# --- evaluation -----------------------------------------------------------


def macro_f1(gold, pred, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes`` classes.

    A class with no gold and no predicted examples scores 0.
    """
    gold, pred = np.asarray(gold), np.asarray(pred)
    scores = []
    for c in range(num_classes):
        tp = np.sum((pred == c) & (gold == c))
        fp = np.sum((pred == c) & (gold != c))
        fn = np.sum((pred != c) & (gold == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom and tp else 0.0)
    return float(np.mean(scores))


def predict(model: EncoderModel, dataset: Sequence[Example], batch_size: int = 64,
            noise_sigma: float = 0.0, noise_seed: int = 0):
    """Gold labels and argmax predictions, in id order; ties go to the lowest class."""
    ordered = sorted(dataset, key=lambda e: e.id)
    rng = np.random.default_rng(noise_seed)
    preds, gold = [], []
    for start in range(0, len(ordered), batch_size):
        chunk = ordered[start:start + batch_size]
        sigma = np.full(len(chunk), noise_sigma) if noise_sigma > 0 else None
        batch = pad_batch([e.tokens for e in chunk], [e.label for e in chunk],
                          [e.id for e in chunk], noise_sigma=sigma)
        log_p = forward(model, batch, rng).data
        preds.append(np.argmax(log_p, axis=1))
        gold.append(batch.labels)
    if not ordered:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(gold), np.concatenate(preds)


def evaluate(model: EncoderModel, dataset: Sequence[Example], batch_size: int = 64,
             noise_sigma: float = 0.0, noise_seed: int = 0) -> Metrics:
    gold, pred = predict(model, dataset, batch_size, noise_sigma, noise_seed)
    if len(gold) == 0:
        return Metrics(0.0, 0.0)
    acc = float(np.mean(gold == pred))
    return Metrics(acc, macro_f1(gold, pred, model.config.num_classes))


# --- one optimisation step ------------------------------------------------


@dataclass
class RunStreams:
    augment: np.random.Generator
    mix: np.random.Generator
    noise: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        a, m, n = np.random.SeedSequence(seed).spawn(3)
        return cls(np.random.default_rng(a), np.random.default_rng(m), np.random.default_rng(n))


def perturbed_batches(examples: Sequence[Example], batch: Batch, config: TrainConfig,
                      resources: AugmentResources, rng: np.random.Generator) -> list[Batch]:
    """Sample N operations per example and build N batches aligned with ``batch``."""
    n = config.mix.n_aug
    views = []
    for ex in examples:
        plan = augment.sample_operations(config.op_pool, n, rng)
        views.append(augment.apply_plan(ex, plan, resources.lexicon, resources.paraphrases, rng))
    out = []
    for k in range(n):
        seqs = [resources.vocab.encode(v[k].words[: config.max_seq_len]) for v in views]
        sigma = np.array([v[k].noise_sigma for v in views])
        out.append(pad_batch(seqs, batch.labels, batch.example_ids,
                             noise_sigma=sigma if np.any(sigma > 0) else None))
    return out


def train_step_ablated(mode: str, model: EncoderModel, examples: Sequence[Example], batch: Batch,
                       config: TrainConfig, resources: AugmentResources | None,
                       streams: RunStreams):
    """Build the loss for one batch under ``mode``. Returns ``(LossBreakdown, MixPlan | None)``."""
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}")
    if mode == NO_AUG_BASELINE or not config.mix.layer_set:
        return combined_loss(forward(model, batch), None, batch.labels, config.gamma), None

    gamma = 0.0 if mode == NO_JSD else config.gamma
    if mode in (MIX_OTHER_SAMPLE, MIX_SAME_CLASS):
        out = partner_forward(model, batch, config.mix, streams.mix, same_class=mode == MIX_SAME_CLASS)
    else:
        if resources is None:
            raise ConfigError(f"mode {mode!r} needs a vocabulary to encode perturbed views")
        views = perturbed_batches(examples, batch, config, resources, streams.augment)
        fwd = merged_forward if mode == MERGED_STEPS else doublemix_forward
        out = fwd(model, batch, views, config.mix, streams.mix, streams.noise)
    return combined_loss(out.p_orig, out.p_mix, batch.labels, gamma), out.plan


def sgd_update(model: EncoderModel, lr_encoder: float, lr_classifier: float) -> None:
    """In-place ``p -= lr * grad`` with separate rates for encoder and classifier."""
    for p in model.encoder_parameters():
        if p.grad is not None:
            p.data -= lr_encoder * p.grad
    for p in model.classifier_parameters():
        if p.grad is not None:
            p.data -= lr_classifier * p.grad


# --- the loop -------------------------------------------------------------


def train(model: EncoderModel, train_set: Sequence[Example], dev_set: Sequence[Example] | None,
          config: TrainConfig, seed: int, resources: AugmentResources | None = None,
          mixplan_log: TextIO | None = None) -> TrainResult:
    """Train ``model`` in place and return the best-on-dev snapshot.

    Batches are shuffled from ``seed + epoch``; augmentation, mixing and
    noise draw from independent streams spawned from ``seed``. Without a dev
    set the final weights are returned.
    """
    if config.interpolates:
        config.mix.validate(model.num_layers)
    streams = RunStreams.from_seed(seed)
    by_id = {ex.id: ex for ex in train_set}
    tape = Tape()
    per_epoch: list[EpochRecord] = []
    losses: list[float] = []
    best_state, best_acc, best_epoch, stale = None, -1.0, -1, 0
    best_dev: Metrics | None = None

    for epoch in range(config.epochs):
        sums = np.zeros(3)
        batches = batch_iter(train_set, config.batch_size, seed, epoch)
        for b_idx, batch in enumerate(batches):
            examples = [by_id[int(i)] for i in batch.example_ids]
            try:
                with tape:
                    parts, plan = train_step_ablated(config.ablation_mode, model, examples, batch,
                                                     config, resources, streams)
            except NumericError as exc:
                tape.reset()
                raise TrainingDivergedError(epoch, b_idx, None, math.nan) from exc
            total = parts.total
            if not math.isfinite(total):
                raise TrainingDivergedError(epoch, b_idx, plan.to_json() if plan else None, total)
            model.zero_grad()
            backward(parts.loss, tape)
            tape.reset()
            sgd_update(model, config.lr_encoder, config.lr_classifier)
            losses.append(total)
            sums += (total, parts.ce, parts.jsd)
            if mixplan_log is not None and plan is not None:
                mixplan_log.write(json.dumps({"epoch": epoch, "batch": b_idx, **plan.to_json()}) + "\n")
        means = sums / max(len(batches), 1)

        dev = evaluate(model, dev_set) if dev_set else None
        per_epoch.append(EpochRecord(epoch, float(means[0]), float(means[1]), float(means[2]),
                                     dev.accuracy if dev else None, dev.macro_f1 if dev else None))
        logger.debug("epoch %d loss %.4f dev %s", epoch, means[0], dev)
        if dev is None:
            continue
        if dev.accuracy > best_acc:
            best_acc, best_epoch, best_dev, stale = dev.accuracy, epoch, dev, 0
            best_state = model.state_dict()
        else:
            stale += 1
            if stale >= config.patience:
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        best_epoch = len(per_epoch) - 1
    return TrainResult(model, seed, best_epoch, len(per_epoch), per_epoch, losses, best_dev)


def with_mode(config: TrainConfig, mode: str) -> TrainConfig:
    return replace(config, ablation_mode=mode)
