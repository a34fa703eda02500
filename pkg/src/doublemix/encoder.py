"""Layered text encoder with split execution and a two-layer MLP classifier.

Layer 0 is the embedding output; layers 1..L are position-wise dense+tanh
blocks. ``forward_to_layer`` and ``forward_from_layer`` cut the stack at any
layer so hidden states can be interpolated in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .augment import gaussian_noise
from .errors import ConfigError, ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_classes: int
    num_layers: int = 4
    dim: int = 64
    hidden_dim: int = 64
    # reserved for a self-attention block; not implemented
    attention: bool = False

    def __post_init__(self):
        for name in ("vocab_size", "num_classes", "num_layers", "dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.attention:
            raise ConfigError("attention blocks are not available in this encoder")


@dataclass
class HiddenState:
    layer: int
    values: Tensor  # (batch, seq, dim)
    mask: np.ndarray  # (batch, seq)


class EncoderModel:
    def __init__(self, config: EncoderConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @property
    def num_layers(self) -> int:
        return self.config.num_layers

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def encoder_parameters(self) -> list[Tensor]:
        return [p for name, p in self.params.items() if not name.startswith("cls.")]

    def classifier_parameters(self) -> list[Tensor]:
        return [p for name, p in self.params.items() if name.startswith("cls.")]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: T.parameter(v.data.copy()) for k, v in self.params.items()})

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ContractError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
            p.grad = None


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    d, dh = config.dim, config.hidden_dim
    shapes = {"embedding": (config.vocab_size, d)}
    for layer in range(1, config.num_layers + 1):
        shapes[f"block{layer}.weight"] = (d, d)
        shapes[f"block{layer}.bias"] = (d,)
    shapes["cls.hidden.weight"] = (d, dh)
    shapes["cls.hidden.bias"] = (dh,)
    shapes["cls.out.weight"] = (dh, config.num_classes)
    shapes["cls.out.bias"] = (config.num_classes,)
    return shapes


def init_model(config: EncoderConfig, seed: int) -> EncoderModel:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = T.parameter(np.zeros(shape))
        else:
            s = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = T.parameter(rng.uniform(-s, s, size=shape))
    return EncoderModel(config, params)


def _block(model: EncoderModel, h: Tensor, layer: int) -> Tensor:
    b, s, d = h.shape
    flat = T.reshape(h, (b * s, d))
    out = T.tanh(T.add_bias(T.matmul(flat, model.params[f"block{layer}.weight"]),
                            model.params[f"block{layer}.bias"]))
    return T.reshape(out, (b, s, d))


def embed(model: EncoderModel, batch, rng: np.random.Generator | None = None) -> HiddenState:
    h = HiddenState(0, T.embedding_lookup(model.params["embedding"], batch.ids), batch.mask)
    sigma = getattr(batch, "noise_sigma", None)
    if sigma is not None and (np.asarray(sigma) > 0).any():
        if rng is None:
            raise ContractError("batch carries Gaussian-noise flags but no rng was supplied")
        h = gaussian_noise(h, sigma, rng)
    return h


def run_blocks(model: EncoderModel, h: HiddenState, stop: int) -> HiddenState:
    if not h.layer <= stop <= model.num_layers:
        raise ContractError(f"cannot advance from layer {h.layer} to layer {stop}")
    values = h.values
    for layer in range(h.layer + 1, stop + 1):
        values = _block(model, values, layer)
    return HiddenState(stop, values, h.mask)


def forward_to_layer(model: EncoderModel, batch, layer: int,
                     rng: np.random.Generator | None = None) -> HiddenState:
    """Embed ``batch`` (applying any deferred noise) and run blocks 1..layer."""
    if not 0 <= layer <= model.num_layers:
        raise ContractError(f"layer {layer} outside [0, {model.num_layers}]")
    return run_blocks(model, embed(model, batch, rng), layer)


def forward_from_layer(model: EncoderModel, h: HiddenState) -> Tensor:
    """Run the remaining blocks after ``h.layer`` and mean-pool unmasked positions."""
    if not 0 <= h.layer <= model.num_layers:
        raise ContractError(f"hidden state layer {h.layer} outside [0, {model.num_layers}]")
    top = run_blocks(model, h, model.num_layers)
    return T.masked_mean_pool(top.values, h.mask)


def classify(model: EncoderModel, pooled: Tensor) -> Tensor:
    p = model.params
    hidden = T.relu(T.add_bias(T.matmul(pooled, p["cls.hidden.weight"]), p["cls.hidden.bias"]))
    return T.log_softmax(T.add_bias(T.matmul(hidden, p["cls.out.weight"]), p["cls.out.bias"]))


def forward(model: EncoderModel, batch, rng: np.random.Generator | None = None) -> Tensor:
    h = forward_to_layer(model, batch, model.num_layers, rng)
    return classify(model, forward_from_layer(model, h))
