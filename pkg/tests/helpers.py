"""Shared oracles: central finite differences and small fixtures."""

from __future__ import annotations

import numpy as np

from doublemix import tensor as T
from doublemix.encoder import forward
from doublemix.objective import cross_entropy
from doublemix.text import Example, Vocabulary, batch_iter, make_example

FD_STEP = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of the scalar function ``f`` at ``x`` (restored after)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def analytic_grads(build, params: list[T.Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with T.Tape() as tape:
        loss = build()
    T.backward(loss, tape)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def check_grads(build, params: list[T.Tensor], tol: float = 1e-4) -> float:
    """Worst relative error between backward and finite differences over ``params``."""
    grads = analytic_grads(build, params)
    worst = 0.0
    for p, g in zip(params, grads):
        data = p.data.copy()
        p.data = data

        def f():
            return build().item()

        num = numeric_grad(f, data)
        worst = max(worst, rel_err(g, num))
    assert worst < tol, worst
    return worst


def toy_vocab(words) -> Vocabulary:
    return Vocabulary(sorted(set(words)))


def examples_from(texts_labels, vocab: Vocabulary, start_id: int = 1) -> list[Example]:
    return [make_example(start_id + i, t, y, vocab) for i, (t, y) in enumerate(texts_labels)]


# --- straight-line numpy reference of the encoder and classifier -----------


def ref_to_layer(params: dict, ids: np.ndarray, layer: int) -> np.ndarray:
    h = params["embedding"][ids]
    for l in range(1, layer + 1):
        h = np.tanh(h @ params[f"block{l}.weight"] + params[f"block{l}.bias"])
    return h


def ref_from_layer(params: dict, h: np.ndarray, mask: np.ndarray, layer: int, num_layers: int) -> np.ndarray:
    for l in range(layer + 1, num_layers + 1):
        h = np.tanh(h @ params[f"block{l}.weight"] + params[f"block{l}.bias"])
    pooled = (h * mask[:, :, None]).sum(axis=1) / mask.sum(axis=1, keepdims=True)
    z = np.maximum(pooled @ params["cls.hidden.weight"] + params["cls.hidden.bias"], 0.0)
    logits = z @ params["cls.out.weight"] + params["cls.out.bias"]
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


# --- CE-only training loop, written without the trainer ----------------------


def ce_only_trajectory(model, train_set, config, seed):
    """Straight-line CE training loop used as an oracle for the baseline mode."""
    losses = []
    enc = {id(p) for p in model.encoder_parameters()}
    for epoch in range(config.epochs):
        for batch in batch_iter(train_set, config.batch_size, seed, epoch):
            for p in model.params.values():
                p.grad = None
            with T.Tape() as tape:
                loss = cross_entropy(forward(model, batch), batch.labels)
            T.backward(loss, tape)
            for p in model.params.values():
                lr = config.lr_encoder if id(p) in enc else config.lr_classifier
                p.data -= lr * p.grad
            losses.append(loss.item())
    return losses
