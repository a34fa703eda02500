"""Two-step hidden-space interpolation.

Step I blends the N perturbed hidden states with Dirichlet(tau) weights.
Step II blends the original hidden state with that blend using a Beta(alpha,
alpha) weight folded into [0.5, 1], so the result always sits nearer the
original. The mixed state then runs through the rest of the encoder.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoder import EncoderModel, HiddenState, classify, forward_from_layer, forward_to_layer
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor
from .text import Batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixConfig:
    alpha: float = 0.75
    tau: float = 1.0
    layer_set: tuple[int, ...] = (3, 4)
    n_aug: int = 2
    # sample Dirichlet weights and lambda per example instead of per batch
    per_example: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.n_aug < 1:
            raise ConfigError(f"n_aug must be >= 1, got {self.n_aug}")
        object.__setattr__(self, "layer_set", tuple(sorted(set(int(i) for i in self.layer_set))))

    def validate(self, num_layers: int) -> None:
        if not self.layer_set:
            raise ConfigError("interpolation layer set is empty")
        bad = [i for i in self.layer_set if not 0 <= i <= num_layers]
        if bad:
            raise ConfigError(f"interpolation layers {bad} outside [0, {num_layers}]")


@dataclass
class MixPlan:
    layer: int
    weights: np.ndarray  # (N,) shared by the batch, or (batch, N)
    lam: float | np.ndarray | None  # None when the two steps are merged
    partners: np.ndarray | None = None

    def to_json(self) -> dict:
        lam = self.lam.tolist() if isinstance(self.lam, np.ndarray) else self.lam
        out = {"layer": int(self.layer), "weights": np.asarray(self.weights).tolist(), "lambda": lam}
        if self.partners is not None:
            out["partners"] = self.partners.tolist()
        return out


@dataclass
class MixOutput:
    p_mix: Tensor
    p_orig: Tensor
    plan: MixPlan


# --- sampling -------------------------------------------------------------


def select_layer(layer_set: Sequence[int], rng: np.random.Generator) -> int:
    layers = sorted(layer_set)
    if not layers:
        raise ContractError("cannot select from an empty layer set")
    return int(layers[rng.integers(len(layers))])


def sample_gamma(shape: float, rng: np.random.Generator) -> float:
    """Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 via the shape+1 boost."""
    if not shape > 0:
        raise ContractError(f"gamma shape must be > 0, got {shape}")
    if shape < 1.0:
        u = rng.random()
        return sample_gamma(shape + 1.0, rng) * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0:
            continue
        v = v * v * v
        u = rng.random()
        if u < 1.0 - 0.0331 * x ** 4:
            return d * v
        if u > 0 and math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_dirichlet(n: int, tau: float, rng: np.random.Generator) -> np.ndarray:
    """Symmetric Dirichlet(tau, ..., tau) draw of length ``n``."""
    if n < 1:
        raise ContractError(f"Dirichlet dimension must be >= 1, got {n}")
    if not tau > 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    g = np.array([sample_gamma(tau, rng) for _ in range(n)])
    total = g.sum()
    if total == 0:
        # every draw underflowed (tiny tau): the limit is a uniform vertex
        w = np.zeros(n)
        w[rng.integers(n)] = 1.0
        return w
    return g / total


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    x, y = sample_gamma(alpha, rng), sample_gamma(alpha, rng)
    if x + y == 0:
        return float(rng.integers(2))
    return x / (x + y)


def constrain_lambda(raw):
    """Fold a mixing weight onto [0.5, 1] so the original dominates."""
    return np.maximum(raw, 1.0 - raw) if isinstance(raw, np.ndarray) else max(raw, 1.0 - raw)


def sample_beta_constrained(alpha: float, rng: np.random.Generator) -> float:
    if not alpha > 0:
        raise ContractError(f"alpha must be > 0, got {alpha}")
    return constrain_lambda(sample_beta(alpha, rng))


def sample_plan(config: MixConfig, batch_size: int, n: int, rng: np.random.Generator) -> MixPlan:
    layer = select_layer(config.layer_set, rng)
    if config.per_example:
        weights = np.stack([sample_dirichlet(n, config.tau, rng) for _ in range(batch_size)])
        lam = np.array([sample_beta_constrained(config.alpha, rng) for _ in range(batch_size)])
    else:
        weights = sample_dirichlet(n, config.tau, rng)
        lam = sample_beta_constrained(config.alpha, rng)
    return MixPlan(layer, weights, lam)


# --- interpolation --------------------------------------------------------


def _weighted(values: Tensor, w) -> Tensor:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 0:
        return T.scale(values, float(w))
    if w.shape != (values.shape[0],):
        raise DimensionError(f"per-example weights {w.shape} do not match batch {values.shape[0]}")
    return T.mul(values, T.Tensor(np.broadcast_to(w.reshape(-1, 1, 1), values.shape)))


def mix_step1(states: Sequence[HiddenState], weights) -> HiddenState:
    """Convex combination ``sum_k w_k h_k`` of same-layer, same-shape hidden states.

    ``weights`` is ``(N,)`` or ``(batch, N)``. Masks may differ; the result
    carries their union.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not states or w.shape[-1] != len(states):
        raise ContractError(f"{len(states)} hidden states but weights of shape {w.shape}")
    first = states[0]
    for h in states[1:]:
        if h.layer != first.layer:
            raise ContractError(f"cannot mix layer {h.layer} with layer {first.layer}")
        if h.values.shape != first.values.shape:
            raise DimensionError(f"cannot mix shapes {h.values.shape} and {first.values.shape}")
    acc = _weighted(first.values, w[..., 0])
    mask = first.mask
    for k, h in enumerate(states[1:], start=1):
        acc = T.add(acc, _weighted(h.values, w[..., k]))
        mask = np.maximum(mask, h.mask)
    return HiddenState(first.layer, acc, mask)


def mix_step2(h_orig: HiddenState, h_aug: HiddenState, lam) -> HiddenState:
    """``lam * h_orig + (1 - lam) * h_aug`` with ``lam`` already folded into [0.5, 1]."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if not ((lam_arr >= 0.5) & (lam_arr <= 1.0)).all():
        raise ContractError(f"lambda must lie in [0.5, 1] (apply the constraint first), got {lam}")
    if h_orig.layer != h_aug.layer:
        raise ContractError(f"cannot mix layer {h_orig.layer} with layer {h_aug.layer}")
    if h_orig.values.shape != h_aug.values.shape:
        raise DimensionError(f"cannot mix shapes {h_orig.values.shape} and {h_aug.values.shape}")
    out = T.add(_weighted(h_orig.values, lam_arr), _weighted(h_aug.values, 1.0 - lam_arr))
    return HiddenState(h_orig.layer, out, h_orig.mask)


def _repad(batch: Batch, width: int) -> Batch:
    extra = width - batch.ids.shape[1]
    if extra == 0:
        return batch
    return replace(batch, ids=np.pad(batch.ids, ((0, 0), (0, extra))),
                   mask=np.pad(batch.mask, ((0, 0), (0, extra))))


def align_group(batch: Batch, perturbed: Sequence[Batch]) -> tuple[Batch, list[Batch]]:
    """Pad the original and its perturbed batches to one common width."""
    for pb in perturbed:
        if len(pb) != len(batch) or not np.array_equal(pb.example_ids, batch.example_ids):
            raise ContractError("perturbed batch is not aligned example-wise with the original")
    width = max([batch.ids.shape[1]] + [pb.ids.shape[1] for pb in perturbed])
    return _repad(batch, width), [_repad(pb, width) for pb in perturbed]


def doublemix_forward(model: EncoderModel, batch: Batch, perturbed: Sequence[Batch],
                      config: MixConfig, rng: np.random.Generator,
                      noise_rng: np.random.Generator | None = None,
                      plan: MixPlan | None = None) -> MixOutput:
    """Encode, interpolate in two steps, resume, and classify both paths.

    The original is encoded to the chosen layer once; that state feeds Step
    II and, continued to the top, gives ``p_orig``. Passing ``plan`` replays
    a previous draw of layer, weights and lambda.
    """
    if not perturbed:
        raise ContractError("DoubleMix needs at least one perturbed batch")
    batch, perturbed = align_group(batch, perturbed)
    noise_rng = rng if noise_rng is None else noise_rng
    if plan is None:
        plan = sample_plan(config, len(batch), len(perturbed), rng)
    h_orig = forward_to_layer(model, batch, plan.layer, noise_rng)
    p_orig = classify(model, forward_from_layer(model, h_orig))
    views = [forward_to_layer(model, pb, plan.layer, noise_rng) for pb in perturbed]
    h_aug = mix_step1(views, plan.weights)
    h_mix = mix_step2(h_orig, h_aug, plan.lam)
    p_mix = classify(model, forward_from_layer(model, h_mix))
    return MixOutput(p_mix, p_orig, plan)


def merged_forward(model: EncoderModel, batch: Batch, perturbed: Sequence[Batch],
                   config: MixConfig, rng: np.random.Generator,
                   noise_rng: np.random.Generator | None = None,
                   plan: MixPlan | None = None) -> MixOutput:
    """Single-step ablation: one Dirichlet over the original and the N views, no lambda."""
    batch, perturbed = align_group(batch, perturbed)
    noise_rng = rng if noise_rng is None else noise_rng
    n = len(perturbed) + 1
    if plan is None:
        layer = select_layer(config.layer_set, rng)
        if config.per_example:
            weights = np.stack([sample_dirichlet(n, config.tau, rng) for _ in range(len(batch))])
        else:
            weights = sample_dirichlet(n, config.tau, rng)
        plan = MixPlan(layer, weights, None)
    h_orig = forward_to_layer(model, batch, plan.layer, noise_rng)
    p_orig = classify(model, forward_from_layer(model, h_orig))
    views = [forward_to_layer(model, pb, plan.layer, noise_rng) for pb in perturbed]
    h_mix = replace(mix_step1([h_orig] + views, plan.weights), mask=h_orig.mask)
    p_mix = classify(model, forward_from_layer(model, h_mix))
    return MixOutput(p_mix, p_orig, plan)


def choose_partners(labels, same_class: bool, rng: np.random.Generator) -> tuple[np.ndarray, list[int]]:
    """Pick a Step II partner for every batch row.

    Rows are paired by a random cyclic permutation (over the whole batch, or
    within each class), so nobody is their own partner unless no other
    candidate exists. Returns the partner index array and the rows that had
    to fall back to themselves.
    """
    labels = np.asarray(labels)
    partners = np.arange(len(labels))
    groups = [np.flatnonzero(labels == lab) for lab in np.unique(labels)] if same_class \
        else [np.arange(len(labels))]
    fallbacks: list[int] = []
    for members in groups:
        if len(members) < 2:
            fallbacks.extend(int(m) for m in members)
            continue
        order = members[rng.permutation(len(members))]
        partners[order] = np.roll(order, -1)
    return partners, fallbacks


def partner_forward(model: EncoderModel, batch: Batch, config: MixConfig,
                    rng: np.random.Generator, same_class: bool,
                    plan: MixPlan | None = None) -> MixOutput:
    """Ablation: Step II mixes with another batch member instead of the perturbed blend."""
    if plan is None:
        layer = select_layer(config.layer_set, rng)
        partners, fallbacks = choose_partners(batch.labels, same_class, rng)
        if fallbacks:
            logger.info("no %s partner for batch rows %s; mixing them with themselves",
                        "same-class" if same_class else "other", fallbacks)
        if config.per_example:
            lam = np.array([sample_beta_constrained(config.alpha, rng) for _ in range(len(batch))])
        else:
            lam = sample_beta_constrained(config.alpha, rng)
        plan = MixPlan(layer, np.zeros(0), lam, partners)
    h_orig = forward_to_layer(model, batch, plan.layer)
    p_orig = classify(model, forward_from_layer(model, h_orig))
    h_partner = HiddenState(plan.layer, T.take_rows(h_orig.values, plan.partners),
                            h_orig.mask[plan.partners])
    h_mix = mix_step2(h_orig, h_partner, plan.lam)
    p_mix = classify(model, forward_from_layer(model, h_mix))
    return MixOutput(p_mix, p_orig, plan)
