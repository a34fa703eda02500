"""Multi-seed runs, the ablation suite, layer-set and low-resource sweeps.

Every function returns plain dicts ready for ``json.dump``. A run is fully
determined by (seed, config, data): the model is initialised from ``seed``
and training draws its streams from the same seed.
"""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, replace
from typing import Sequence

from .augment import ParaphraseTable, SynonymLexicon
from .encoder import EncoderConfig, init_model
from .errors import ConfigError, ContractError
from .mixer import MixConfig
from .text import Example, Vocabulary, subsample
from .trainer import (
    ABLATION_MODES,
    NO_AUG_BASELINE,
    AugmentResources,
    TrainConfig,
    TrainResult,
    evaluate,
    train,
)


@dataclass
class Experiment:
    """Data splits and model shape shared by every run of a study."""

    train: list[Example]
    dev: list[Example]
    test: list[Example]
    vocab: Vocabulary
    num_classes: int
    num_layers: int = 4
    dim: int = 64
    hidden_dim: int = 64
    lexicon: SynonymLexicon | None = None
    paraphrases: ParaphraseTable | None = None
    # sigma of Gaussian noise on test-time embeddings; 0 disables the noisy evaluation
    eval_noise_sigma: float = 0.0

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(len(self.vocab), self.num_classes, self.num_layers, self.dim, self.hidden_dim)

    def resources(self) -> AugmentResources:
        return AugmentResources(self.vocab, self.lexicon, self.paraphrases)


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single run)."""
    values = list(values)
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


def run_once(exp: Experiment, config: TrainConfig, seed: int,
             train_set: Sequence[Example] | None = None, mixplan_log=None) -> tuple[TrainResult, dict]:
    model = init_model(exp.encoder_config(), seed)
    data = exp.train if train_set is None else list(train_set)
    result = train(model, data, exp.dev, config, seed, exp.resources(), mixplan_log)
    target = exp.test if exp.test else exp.dev
    clean = evaluate(result.model, target)
    row = {
        "seed": seed,
        "accuracy": clean.accuracy,
        "macro_f1": clean.macro_f1,
        "epochs_ran": result.epochs_ran,
        "best_epoch": result.best_epoch,
        "per_epoch": [asdict(r) for r in result.per_epoch],
    }
    if exp.eval_noise_sigma > 0:
        noisy = evaluate(result.model, target, noise_sigma=exp.eval_noise_sigma, noise_seed=seed)
        row["noisy_accuracy"] = noisy.accuracy
        row["noisy_macro_f1"] = noisy.macro_f1
        row["accuracy_drop"] = clean.accuracy - noisy.accuracy
    return result, row


def aggregate(rows: list[dict]) -> dict:
    keys = [k for k in ("accuracy", "macro_f1", "noisy_accuracy", "noisy_macro_f1", "accuracy_drop")
            if rows and k in rows[0]]
    mean, std = {}, {}
    for k in keys:
        mean[k], std[k] = summarize([r[k] for r in rows])
    return {"runs": rows, "mean": mean, "std": std}


def run_seeds(exp: Experiment, config: TrainConfig, seeds: Sequence[int] | None = None,
              mixplan_log=None) -> tuple[dict, list[TrainResult]]:
    """Train once per seed. Returns the metrics report and the trained runs."""
    seeds = list(config.seeds if seeds is None else seeds)
    if not seeds:
        raise ConfigError("no seeds configured")
    results, rows = [], []
    for seed in seeds:
        result, row = run_once(exp, config, seed, mixplan_log=mixplan_log)
        results.append(result)
        rows.append(row)
    report = aggregate(rows)
    report["ablation_mode"] = config.ablation_mode
    return report, results


def ablation_suite(exp: Experiment, config: TrainConfig, modes: Sequence[str] = ABLATION_MODES,
                   seeds: Sequence[int] | None = None) -> dict:
    for mode in modes:
        if mode not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {mode!r}")
    return {mode: run_seeds(exp, replace(config, ablation_mode=mode), seeds)[0] for mode in modes}


def _validate_layer_sets(layer_sets, num_layers: int) -> list[tuple[int, ...]]:
    out = []
    for ls in layer_sets:
        ls = tuple(sorted(set(int(i) for i in ls)))
        bad = [i for i in ls if not 0 <= i <= num_layers]
        if bad:
            raise ConfigError(f"layer set {list(ls)} has layers {bad} outside [0, {num_layers}]")
        out.append(ls)
    return out


def layer_set_sweep(exp: Experiment, layer_sets: Sequence[Sequence[int]], config: TrainConfig,
                    seeds: Sequence[int] | None = None) -> dict:
    """One study per interpolation layer set, with deltas against no interpolation.

    The empty set is the no-augmentation baseline; it is always run and its
    row is reused if the caller lists it.
    """
    sets = _validate_layer_sets(layer_sets, exp.num_layers)
    baseline, _ = run_seeds(exp, replace(config, ablation_mode=NO_AUG_BASELINE), seeds)
    base_acc, base_f1 = baseline["mean"]["accuracy"], baseline["mean"]["macro_f1"]
    rows = []
    for ls in sets:
        if ls:
            mix = replace(config.mix, layer_set=ls)
            report, _ = run_seeds(exp, replace(config, mix=mix), seeds)
        else:
            report = baseline
        acc, f1 = report["mean"]["accuracy"], report["mean"]["macro_f1"]
        rows.append({
            "layer_set": list(ls),
            "accuracy": acc,
            "macro_f1": f1,
            "delta_accuracy": acc - base_acc,
            "delta_macro_f1": f1 - base_f1,
            "report": report,
        })
    return {"baseline": baseline, "rows": rows}


def low_resource_sweep(exp: Experiment, sizes: Sequence[int], config: TrainConfig,
                       seeds: Sequence[int] | None = None) -> dict:
    """Train on stratified subsamples of each size; dev and test stay fixed."""
    sizes = [int(n) for n in sizes]
    too_big = [n for n in sizes if n > len(exp.train)]
    if too_big:
        raise ContractError(f"sizes {too_big} exceed the {len(exp.train)} training examples")
    seeds = list(config.seeds if seeds is None else seeds)
    rows = []
    for n in sizes:
        runs = []
        for seed in seeds:
            picked = subsample(exp.train, n, seed)
            _, row = run_once(exp, config, seed, train_set=picked)
            row["train_ids"] = sorted(e.id for e in picked)
            runs.append(row)
        report = aggregate(runs)
        rows.append({"size": n, "accuracy": report["mean"]["accuracy"],
                     "macro_f1": report["mean"]["macro_f1"], "report": report})
    return {"ablation_mode": config.ablation_mode, "rows": rows}


def default_mix(num_layers: int) -> MixConfig:
    """Upper-layer interpolation set for an encoder of the given depth."""
    return MixConfig(layer_set=tuple(range(max(num_layers - 1, 0), num_layers + 1)))

