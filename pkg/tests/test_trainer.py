import io
import json
import math

import numpy as np
import pytest

from doublemix import augment as A
from doublemix import synthetic
from doublemix.encoder import EncoderConfig, forward, init_model
from doublemix.errors import ConfigError, TrainingDivergedError
from doublemix.mixer import MixConfig
from doublemix.objective import cross_entropy
from doublemix.text import batch_iter, build_vocab, make_example
from doublemix.trainer import (
    ABLATION_MODES,
    AugmentResources,
    RunStreams,
    TrainConfig,
    evaluate,
    macro_f1,
    train,
    train_step_ablated,
)
from helpers import ce_only_trajectory


def synthetic_data(n, seed, vocab=None):
    recs = synthetic.make_records(n, seed)
    vocab = vocab or build_vocab([r["text"] for r in recs])
    label_map = {lab: i for i, lab in enumerate(synthetic.LABELS)}
    return [make_example(i + 1, r["text"], label_map[r["label"]], vocab) for i, r in enumerate(recs)], vocab


@pytest.fixture(scope="module")
def data():
    train_set, vocab = synthetic_data(64, 0)
    dev_set, _ = synthetic_data(32, 1, vocab)
    return train_set, dev_set, vocab


def small_model(vocab, seed=0, layers=2):
    return init_model(EncoderConfig(len(vocab), 2, layers, 8, 8), seed)


def test_config_validation():
    for bad in (dict(epochs=0), dict(lr_encoder=0), dict(patience=0), dict(batch_size=0),
                dict(gamma=-1), dict(ablation_mode="nope"), dict(op_pool=())):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_macro_f1_examples():
    assert macro_f1([0, 1, 0, 1], [0, 1, 0, 1], 2) == 1.0
    assert macro_f1([0, 0, 0, 0], [1, 1, 1, 1], 2) == 0.0
    # per-class F1 = 2/3 and 6/7
    assert abs(macro_f1([0, 0, 1, 1, 1], [0, 1, 1, 1, 1], 2) - (2 / 3 + 6 / 7) / 2) < 1e-15
    # an absent class counts as 0
    assert macro_f1([0, 0], [0, 0], 3) == pytest.approx(1 / 3)


def test_macro_f1_matches_counting_oracle():
    rng = np.random.default_rng(0)
    gold, pred = rng.integers(0, 3, 200), rng.integers(0, 3, 200)
    f1s = []
    for c in range(3):
        tp = sum(1 for g, p in zip(gold, pred) if g == c and p == c)
        prec = tp / max(1, sum(1 for p in pred if p == c))
        rec = tp / max(1, sum(1 for g in gold if g == c))
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    assert abs(macro_f1(gold, pred, 3) - sum(f1s) / 3) < 1e-12


def test_evaluate_is_order_invariant(data):
    _, dev, vocab = data
    m = small_model(vocab)
    assert evaluate(m, dev) == evaluate(m, list(reversed(dev)))
    assert evaluate(m, dev, noise_sigma=0.5, noise_seed=3) == evaluate(m, dev, noise_sigma=0.5, noise_seed=3)


def test_baseline_reproduces_ce_only_training_bitwise(data):
    train_set, _, vocab = data
    cfg = TrainConfig(epochs=3, batch_size=8, ablation_mode="no_aug_baseline")
    got = train(small_model(vocab, 4), train_set, None, cfg, seed=4)
    ref_model = small_model(vocab, 4)
    ref = ce_only_trajectory(ref_model, train_set, cfg, seed=4)
    assert got.losses == ref
    for name, p in got.model.params.items():
        assert np.array_equal(p.data, ref_model.params[name].data)


def test_zero_strength_perturbations_collapse_to_ce(data):
    train_set, _, vocab = data
    model = small_model(vocab, 1)
    pool = (A.PerturbationOp(A.RANDOM_SWAP, 0.0), A.PerturbationOp(A.GAUSSIAN_NOISE, 0.0))
    cfg = TrainConfig(batch_size=8, op_pool=pool, mix=MixConfig(layer_set=(0, 1, 2)))
    streams = RunStreams.from_seed(0)
    res = AugmentResources(vocab)
    by_id = {e.id: e for e in train_set}
    for batch in batch_iter(train_set, 8, 0, 0):
        exs = [by_id[int(i)] for i in batch.example_ids]
        parts, plan = train_step_ablated("full", model, exs, batch, cfg, res, streams)
        ce = cross_entropy(forward(model, batch), batch.labels).item()
        assert plan is not None
        assert abs(parts.total - ce) <= 1e-9


def test_training_is_deterministic(data):
    train_set, dev, vocab = data
    cfg = TrainConfig(epochs=2, batch_size=8, mix=MixConfig(layer_set=(1, 2)))
    res = AugmentResources(vocab, synthetic.lexicon())
    a = train(small_model(vocab), train_set, dev, cfg, 7, res)
    b = train(small_model(vocab), train_set, dev, cfg, 7, res)
    assert a.losses == b.losses and a.as_dict() == b.as_dict()
    c = train(small_model(vocab), train_set, dev, cfg, 8, res)
    assert a.losses != c.losses


def test_separable_set_is_learned():
    words = {0: ["alpha", "beta", "gamma"], 1: ["delta", "eps", "zeta"]}
    rng = np.random.default_rng(0)
    texts = [(" ".join(rng.choice(words[i % 2], size=5)), i % 2) for i in range(200)]
    vocab = build_vocab([t for t, _ in texts])
    train_set = [make_example(i + 1, t, y, vocab) for i, (t, y) in enumerate(texts)]
    model = init_model(EncoderConfig(len(vocab), 2, 2, 16, 16), 0)
    train(model, train_set, None, TrainConfig(epochs=10, ablation_mode="no_aug_baseline"), 0)
    assert evaluate(model, train_set).accuracy >= 0.95


def test_early_stopping_returns_best_dev_snapshot(data):
    train_set, dev, vocab = data
    cfg = TrainConfig(epochs=8, batch_size=8, patience=2, lr_encoder=0.5, lr_classifier=0.5,
                      ablation_mode="no_aug_baseline")
    result = train(small_model(vocab), train_set, dev, cfg, 0)
    accs = [r.dev_accuracy for r in result.per_epoch]
    assert result.dev.accuracy == max(accs)
    assert accs[result.best_epoch] == max(accs)
    assert evaluate(result.model, dev).accuracy == max(accs)
    if result.epochs_ran < cfg.epochs:
        assert result.epochs_ran - 1 - result.best_epoch == cfg.patience


def test_no_jsd_reports_jsd_with_zero_weight(data):
    train_set, _, vocab = data
    model = small_model(vocab)
    cfg = TrainConfig(batch_size=8, mix=MixConfig(layer_set=(1, 2)))
    res = AugmentResources(vocab, synthetic.lexicon())
    batch = batch_iter(train_set, 8, 0, 0)[0]
    by_id = {e.id: e for e in train_set}
    exs = [by_id[int(i)] for i in batch.example_ids]
    parts, _ = train_step_ablated("no_jsd", model, exs, batch, cfg, res, RunStreams.from_seed(0))
    assert parts.gamma == 0.0 and parts.jsd > 0
    assert parts.total == parts.ce


@pytest.mark.parametrize("mode", ABLATION_MODES)
def test_every_mode_runs(mode, data):
    train_set, dev, vocab = data
    cfg = TrainConfig(epochs=1, batch_size=16, ablation_mode=mode, mix=MixConfig(layer_set=(1, 2)))
    result = train(small_model(vocab), train_set, dev, cfg, 0, AugmentResources(vocab, synthetic.lexicon()))
    assert all(math.isfinite(x) for x in result.losses)


def test_non_finite_weights_abort_with_context(data):
    train_set, _, vocab = data
    cfg = TrainConfig(epochs=3, batch_size=8, mix=MixConfig(layer_set=(1, 2)))
    model = small_model(vocab)
    model.params["cls.out.bias"].data[0] = np.inf
    with pytest.raises(TrainingDivergedError) as info:
        train(model, train_set, None, cfg, 0, AugmentResources(vocab, synthetic.lexicon()))
    assert info.value.epoch == 0 and info.value.batch == 0


def test_mixplan_log_lines(data):
    train_set, _, vocab = data
    cfg = TrainConfig(epochs=1, batch_size=16, mix=MixConfig(layer_set=(1, 2)))
    buf = io.StringIO()
    train(small_model(vocab), train_set, None, cfg, 0, AugmentResources(vocab, synthetic.lexicon()), buf)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert len(lines) == 4
    for rec in lines:
        assert rec["layer"] in (1, 2)
        assert 0.5 <= np.min(rec["lambda"]) and np.max(rec["lambda"]) <= 1
