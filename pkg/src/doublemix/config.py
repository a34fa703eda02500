"""Flat ``key = value`` run configuration with typed keys and CLI overrides.

Lines starting with ``#`` and blank lines are ignored. Every key must be one
of ``KEYS``; anything else is an error naming the key. Later assignments
(file lines, then overrides) replace earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Mapping

from .augment import parse_op_pool
from .errors import ConfigError
from .harness import default_mix
from .mixer import MixConfig
from .text import DEFAULT_MAX_SEQ_LEN
from .trainer import ABLATION_MODES, DEFAULT_OP_POOL, FULL, TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _opt_ints(text: str) -> tuple[int, ...] | None:
    text = text.strip()
    return None if text.lower() in ("", "default") else _ints(text)


def _layer_sets(text: str) -> tuple[tuple[int, ...], ...]:
    # "none|0|1,2|3,4"; "none" (or an empty item) is the empty set
    out = []
    for item in text.split("|"):
        item = item.strip()
        out.append(() if item.lower() in ("", "none") else _ints(item))
    return tuple(out)


def _modes(text: str) -> tuple[str, ...]:
    modes = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in modes if m not in ABLATION_MODES]
    if bad:
        raise ValueError(f"unknown ablation modes {bad}; expected some of {ABLATION_MODES}")
    return modes


def _op_pool(text: str) -> str:
    parse_op_pool(text)
    return text.strip()


def _path(text: str) -> str | None:
    text = text.strip()
    return text or None


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "|".join(",".join(map(str, s)) if s else "none" for s in value)
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    return str(value)


_DEFAULT_POOL = ",".join(str(op) for op in DEFAULT_OP_POOL)


@dataclass
class RunConfig:
    train_path: str | None = None
    dev_path: str | None = None
    test_path: str | None = None
    lexicon_path: str | None = None
    paraphrase_path: str | None = None
    checkpoint: str | None = None
    out_dir: str = "runs"
    max_seq_len: int = DEFAULT_MAX_SEQ_LEN
    min_freq: int = 1
    num_layers: int = 4
    dim: int = 64
    hidden_dim: int = 64
    epochs: int = 20
    lr_encoder: float = 0.05
    lr_classifier: float = 0.1
    batch_size: int = 16
    gamma: float = 8.0
    alpha: float = 0.75
    tau: float = 1.0
    # None means the upper two layers of the configured depth
    layer_set: tuple[int, ...] | None = None
    n_aug: int = 2
    per_example_mix: bool = False
    op_pool: str = _DEFAULT_POOL
    patience: int = 5
    ablation_mode: str = FULL
    ablation_modes: tuple[str, ...] = ABLATION_MODES
    seed: tuple[int, ...] = (0,)
    eval_noise_sigma: float = 0.0
    sizes: tuple[int, ...] = (50, 100, 200, 400)
    layer_sets: tuple[tuple[int, ...], ...] = ((), (0,), (1, 2), (3, 4))
    preview_count: int = 3
    log_mixplans: bool = False
    split: str = "test"

    def mix_config(self) -> MixConfig:
        base = default_mix(self.num_layers) if self.layer_set is None else MixConfig(layer_set=self.layer_set)
        return MixConfig(alpha=self.alpha, tau=self.tau, layer_set=base.layer_set,
                         n_aug=self.n_aug, per_example=self.per_example_mix)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            lr_encoder=self.lr_encoder,
            lr_classifier=self.lr_classifier,
            batch_size=self.batch_size,
            gamma=self.gamma,
            mix=self.mix_config(),
            op_pool=tuple(parse_op_pool(self.op_pool)),
            patience=self.patience,
            ablation_mode=self.ablation_mode,
            max_seq_len=self.max_seq_len,
            seeds=self.seed,
        )

    def to_text(self) -> str:
        lines = ["# effective configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _mode(text: str) -> str:
    text = text.strip()
    if text not in ABLATION_MODES:
        raise ValueError(f"unknown ablation mode {text!r}; expected one of {ABLATION_MODES}")
    return text


def _split(text: str) -> str:
    text = text.strip()
    if text not in ("train", "dev", "test"):
        raise ValueError(f"expected train, dev or test, got {text!r}")
    return text


KEYS: dict[str, Callable[[str], object]] = {
    "train_path": _path,
    "dev_path": _path,
    "test_path": _path,
    "lexicon_path": _path,
    "paraphrase_path": _path,
    "checkpoint": _path,
    "out_dir": str.strip,
    "max_seq_len": int,
    "min_freq": int,
    "num_layers": int,
    "dim": int,
    "hidden_dim": int,
    "epochs": int,
    "lr_encoder": float,
    "lr_classifier": float,
    "batch_size": int,
    "gamma": float,
    "alpha": float,
    "tau": float,
    "layer_set": _opt_ints,
    "n_aug": int,
    "per_example_mix": _bool,
    "op_pool": _op_pool,
    "patience": int,
    "ablation_mode": _mode,
    "ablation_modes": _modes,
    "seed": _ints,
    "eval_noise_sigma": float,
    "sizes": _ints,
    "layer_sets": _layer_sets,
    "preview_count": int,
    "log_mixplans": _bool,
    "split": _split,
}

ALIASES = {"n": "n_aug", "seeds": "seed"}


def canonical_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` strings; keys are checked, values are not yet parsed."""
    out: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}: line {line_no}: expected 'key = value'")
        try:
            out[canonical_key(key)] = value.strip()
        except ConfigError as exc:
            raise ConfigError(f"{source}: line {line_no}: {exc}") from None
    return out


def build(raw: Mapping[str, str]) -> RunConfig:
    values = {}
    for key, text in raw.items():
        key = canonical_key(key)
        try:
            values[key] = KEYS[key](text)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    cfg = RunConfig(**values)
    # surface range errors now rather than mid-run
    cfg.train_config()
    return cfg


def load_config(path=None, overrides: Mapping[str, str] | None = None) -> RunConfig:
    """Read ``path`` (if any), apply ``overrides`` on top and parse."""
    raw: dict[str, str] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        raw.update(parse_text(path.read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        raw[canonical_key(key)] = value
    return build(raw)
