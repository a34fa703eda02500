"""Perturbation operators that produce the N augmented views of an example.

Token-level operators (EDA-style replace/insert/swap/delete and paraphrase
lookup) act on word lists. Gaussian noise acts on the embedding output and is
carried as a deferred flag until the example is encoded.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DataError
from .text import tokenize

SYNONYM_REPLACE = "synonym_replace"
RANDOM_INSERT = "random_insert"
RANDOM_SWAP = "random_swap"
RANDOM_DELETE = "random_delete"
PARAPHRASE = "paraphrase"
GAUSSIAN_NOISE = "gaussian_noise"
OP_KINDS = (SYNONYM_REPLACE, RANDOM_INSERT, RANDOM_SWAP, RANDOM_DELETE, PARAPHRASE, GAUSSIAN_NOISE)
_FRACTION_KINDS = (SYNONYM_REPLACE, RANDOM_INSERT, RANDOM_SWAP, RANDOM_DELETE)

DEFAULT_NOISE_SIGMA = 0.01


@dataclass(frozen=True)
class PerturbationOp:
    """One operator with its strength.

    ``param`` is the ratio (replace/insert/swap), the drop probability
    (delete), the variant index (paraphrase) or sigma (gaussian_noise).
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise ConfigError(f"unknown perturbation kind {self.kind!r}; expected one of {OP_KINDS}")
        if self.kind in _FRACTION_KINDS and not 0.0 <= self.param <= 1.0:
            raise ConfigError(f"{self.kind} strength must lie in [0, 1], got {self.param}")
        if self.kind == GAUSSIAN_NOISE and self.param < 0:
            raise ConfigError(f"gaussian_noise sigma must be >= 0, got {self.param}")
        if self.kind == PARAPHRASE and (self.param < 0 or self.param != int(self.param)):
            raise ConfigError(f"paraphrase variant index must be a non-negative integer, got {self.param}")

    def __str__(self):
        param = int(self.param) if self.kind == PARAPHRASE else self.param
        return f"{self.kind}:{param}"


def parse_op_pool(text: str) -> list[PerturbationOp]:
    """Parse ``"synonym_replace:0.2,gaussian_noise:0.01"`` into operators."""
    ops = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, param = item.partition(":")
        try:
            value = float(param) if param else (DEFAULT_NOISE_SIGMA if kind == GAUSSIAN_NOISE else 0.0)
        except ValueError:
            raise ConfigError(f"bad strength in perturbation {item!r}") from None
        ops.append(PerturbationOp(kind.strip(), value))
    if not ops:
        raise ConfigError("perturbation pool is empty")
    return ops


@dataclass(frozen=True)
class PerturbationPlan:
    ops: tuple[PerturbationOp, ...]

    def __post_init__(self):
        if len(self.ops) < 1:
            raise ContractError("a perturbation plan needs at least one operation")

    def __len__(self):
        return len(self.ops)


class SynonymLexicon:
    """word -> synonyms; a word is never kept as its own synonym."""

    def __init__(self, entries: dict[str, Sequence[str]] | None = None):
        self.entries: dict[str, tuple[str, ...]] = {}
        for word, syns in (entries or {}).items():
            clean = tuple(dict.fromkeys(s for s in syns if s and s != word))
            if clean:
                self.entries[word] = clean

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def synonyms(self, word: str) -> tuple[str, ...]:
        return self.entries.get(word, ())


def load_lexicon(path) -> SynonymLexicon:
    """Read ``word<TAB>syn1,syn2,...`` lines."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"lexicon file not found: {path}")
    entries: dict[str, list[str]] = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            word, sep, rest = line.partition("\t")
            if not sep:
                raise DataError(f"{path}: line {line_no}: expected word<TAB>synonyms")
            syns = [s.strip().lower() for s in rest.split(",") if s.strip()]
            entries.setdefault(word.strip().lower(), []).extend(syns)
    return SynonymLexicon(entries)


class ParaphraseTable:
    """Precomputed paraphrases per example id; variant k plays the role of one pivot language."""

    def __init__(self, entries: dict[int, Sequence[str]] | None = None):
        self.entries = {int(k): list(v) for k, v in (entries or {}).items()}

    def __contains__(self, example_id: int) -> bool:
        return example_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def check_ids(self, known_ids) -> dict:
        """Raise on ids absent from the dataset; report coverage otherwise."""
        known = set(int(i) for i in known_ids)
        unknown = sorted(set(self.entries) - known)
        if unknown:
            raise DataError(f"paraphrase table references unknown example ids {unknown[:10]}")
        covered = len(known & set(self.entries))
        return {"examples": len(known), "covered": covered,
                "coverage": covered / len(known) if known else 0.0}


def load_paraphrases(path) -> ParaphraseTable:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"paraphrase file not found: {path}")
    entries: dict[int, list[str]] = {}
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.setdefault(int(obj["id"]), []).extend(str(p) for p in obj["paraphrases"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise DataError(f"{path}: line {line_no}: expected {{\"id\": int, \"paraphrases\": [...]}}") from None
    return ParaphraseTable(entries)


def _count(ratio: float, n: int) -> int:
    # rounding guards against 0.3 * 10 == 3.0000000000000004
    return math.ceil(round(ratio * n, 9))


def sample_operations(op_pool: Sequence[PerturbationOp], n: int,
                      rng: np.random.Generator) -> PerturbationPlan:
    if not op_pool:
        raise ContractError("cannot sample from an empty operation pool")
    if n < 1:
        raise ContractError(f"number of operations must be >= 1, got {n}")
    picks = rng.integers(len(op_pool), size=n)
    return PerturbationPlan(tuple(op_pool[i] for i in picks))


def synonym_replace(tokens: Sequence[str], ratio: float, lexicon: SynonymLexicon,
                    rng: np.random.Generator) -> list[str]:
    out = list(tokens)
    covered = [i for i, tok in enumerate(out) if tok in lexicon]
    k = min(_count(ratio, len(out)), len(covered))
    if k == 0:
        return out
    for pos in rng.choice(covered, size=k, replace=False):
        syns = lexicon.synonyms(out[pos])
        out[pos] = syns[rng.integers(len(syns))]
    return out


def random_insert(tokens: Sequence[str], ratio: float, lexicon: SynonymLexicon,
                  rng: np.random.Generator) -> list[str]:
    out = list(tokens)
    for _ in range(_count(ratio, len(tokens))):
        covered = [tok for tok in out if tok in lexicon]
        if not covered:
            break
        syns = lexicon.synonyms(covered[rng.integers(len(covered))])
        out.insert(int(rng.integers(len(out) + 1)), syns[rng.integers(len(syns))])
    return out


def random_swap(tokens: Sequence[str], ratio: float, rng: np.random.Generator) -> list[str]:
    out = list(tokens)
    if len(out) < 2:
        return out
    for _ in range(_count(ratio, len(out))):
        i, j = rng.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def random_delete(tokens: Sequence[str], prob: float, rng: np.random.Generator) -> list[str]:
    if not tokens:
        return []
    keep = rng.random(len(tokens)) >= prob
    if not keep.any():
        return [tokens[int(rng.integers(len(tokens)))]]
    return [tok for tok, k in zip(tokens, keep) if k]


def lookup_paraphrase(example_id: int, variant_index: int, table: ParaphraseTable | None,
                      original: Sequence[str]) -> list[str]:
    """Tokenized paraphrase, or ``original`` when the id or variant is missing."""
    if table is None:
        return list(original)
    variants = table.entries.get(int(example_id), [])
    if variant_index >= len(variants):
        return list(original)
    words = tokenize(variants[variant_index])
    return words if words else list(original)


def gaussian_noise(h, sigma, rng: np.random.Generator):
    """Add N(0, sigma^2) noise to the unmasked positions of a layer-0 hidden state.

    ``sigma`` may be a scalar or one value per example.
    """
    if h.layer != 0:
        raise ContractError(f"Gaussian noise applies to the embedding output, got layer {h.layer}")
    sig = np.asarray(sigma, dtype=np.float64)
    if (sig < 0).any():
        raise ContractError("sigma must be non-negative")
    if not (sig > 0).any():
        return h
    values = h.values
    per_row = sig.reshape(-1, 1, 1) if sig.ndim == 1 else sig
    eps = rng.standard_normal(values.shape) * per_row * h.mask[:, :, None]
    return dataclasses.replace(h, values=T.add(values, T.Tensor(eps)))


@dataclass(frozen=True)
class PerturbedSample:
    words: list[str]
    noise_sigma: float = 0.0


def apply_op(op: PerturbationOp, example, lexicon: SynonymLexicon | None,
             table: ParaphraseTable | None, rng: np.random.Generator) -> PerturbedSample:
    words = list(example.words)
    lex = lexicon if lexicon is not None else SynonymLexicon()
    if op.kind == SYNONYM_REPLACE:
        return PerturbedSample(synonym_replace(words, op.param, lex, rng))
    if op.kind == RANDOM_INSERT:
        return PerturbedSample(random_insert(words, op.param, lex, rng))
    if op.kind == RANDOM_SWAP:
        return PerturbedSample(random_swap(words, op.param, rng))
    if op.kind == RANDOM_DELETE:
        return PerturbedSample(random_delete(words, op.param, rng))
    if op.kind == PARAPHRASE:
        return PerturbedSample(lookup_paraphrase(example.id, int(op.param), table, words))
    return PerturbedSample(words, op.param)


def apply_plan(example, plan: PerturbationPlan, lexicon: SynonymLexicon | None,
               table: ParaphraseTable | None, rng: np.random.Generator) -> list[PerturbedSample]:
    """One perturbed view per planned op, in plan order. ``example`` is left untouched."""
    return [apply_op(op, example, lexicon, table, rng) for op in plan.ops]
