"""Versioned JSON checkpoints holding weights, vocabulary and label map.

Floats are written with ``repr`` precision, so a save/load round trip is
bitwise exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoder import EncoderConfig, EncoderModel, param_shapes
from .errors import DataError
from .text import PAD_TOKEN, UNK_TOKEN, Vocabulary

FORMAT = "doublemix-checkpoint"
VERSION = 1


def save_checkpoint(path, model: EncoderModel, vocab: Vocabulary, label_map: dict[str, int]) -> None:
    cfg = model.config
    if len(vocab) != cfg.vocab_size:
        raise DataError(f"vocabulary has {len(vocab)} entries but the model expects {cfg.vocab_size}")
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "config": {"vocab_size": cfg.vocab_size, "num_classes": cfg.num_classes,
                   "num_layers": cfg.num_layers, "dim": cfg.dim, "hidden_dim": cfg.hidden_dim},
        "label_map": dict(label_map),
        "vocab": {"tokens": vocab.id_to_token, "fingerprint": vocab.fingerprint()},
        "params": {name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
                   for name, p in model.params.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[EncoderModel, Vocabulary, dict[str, int]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a JSON checkpoint ({exc})") from None
    if doc.get("format") != FORMAT:
        raise DataError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    if doc.get("version") != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")

    tokens = doc["vocab"]["tokens"]
    if tokens[:2] != [PAD_TOKEN, UNK_TOKEN]:
        raise DataError(f"{path}: vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}")
    vocab = Vocabulary(tokens[2:])
    if vocab.fingerprint() != doc["vocab"]["fingerprint"]:
        raise DataError(f"{path}: vocabulary fingerprint mismatch")

    config = EncoderConfig(**doc["config"])
    params = {}
    for name, shape in param_shapes(config).items():
        entry = doc["params"].get(name)
        if entry is None:
            raise DataError(f"{path}: missing parameter {name!r}")
        if tuple(entry["shape"]) != shape:
            raise DataError(f"{path}: parameter {name!r} has shape {entry['shape']}, expected {list(shape)}")
        params[name] = T.parameter(np.array(entry["data"], dtype=np.float64).reshape(shape))
    return EncoderModel(config, params), vocab, {str(k): int(v) for k, v in doc["label_map"].items()}
