"""Tokenization, vocabulary, JSONL datasets, stratified subsampling, batching."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DataError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
DEFAULT_MAX_SEQ_LEN = 64

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and break punctuation into its own tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map with PAD fixed at 0 and UNK at 1."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
        for tok in tokens:
            if tok in self.token_to_id:
                raise DataError(f"duplicate vocabulary entry {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(w, UNK_ID) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()


def build_vocab(corpus: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Ids 2.. go to tokens seen at least ``min_freq`` times.

    Ordered by descending frequency, ties broken lexicographically.
    """
    if min_freq < 1:
        raise ContractError(f"min_freq must be >= 1, got {min_freq}")
    texts = list(corpus)
    if not texts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in texts for tok in tokenize(text))
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class Example:
    id: int
    tokens: list[int]
    label: int
    raw_text: str
    words: list[str] = field(default_factory=list)


@dataclass
class Batch:
    ids: np.ndarray
    mask: np.ndarray
    labels: np.ndarray
    example_ids: np.ndarray
    # per-example sigma of Gaussian noise injected on the embedding output
    noise_sigma: np.ndarray | None = None

    def __len__(self) -> int:
        return self.ids.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(np.int64)


def read_jsonl_records(path, label_map: dict[str, int] | None = None):
    """Parse ``{"text", "label"}`` lines into ``(line_no, text, label_index)`` triples."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {line_no}: unparsable JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise DataError(f"{path}: line {line_no}: expected a JSON object")
            for key in ("text", "label"):
                if key not in obj:
                    raise DataError(f"{path}: line {line_no}: missing field {key!r}")
            raw.append((line_no, str(obj["text"]), str(obj["label"])))

    if label_map is None:
        label_map = {lab: i for i, lab in enumerate(sorted({r[2] for r in raw}))}
    records = []
    for line_no, text, lab in raw:
        if lab not in label_map:
            raise DataError(f"{path}: line {line_no}: unknown label {lab!r}")
        records.append((line_no, text, label_map[lab]))
    return records, dict(label_map)


def make_example(ex_id: int, text: str, label: int, vocab: Vocabulary,
                 max_seq_len: int = DEFAULT_MAX_SEQ_LEN) -> Example:
    words = tokenize(text)[:max_seq_len]
    if not words:
        raise DataError(f"example {ex_id} has no tokens")
    return Example(id=ex_id, tokens=vocab.encode(words), label=label, raw_text=text, words=words)


def load_dataset(path, vocab: Vocabulary, label_map: dict[str, int] | None = None,
                 max_seq_len: int = DEFAULT_MAX_SEQ_LEN):
    """Load a JSONL file into Examples. Returns ``(examples, label_map)``.

    Labels are indexed by sorted label string unless ``label_map`` is given;
    the 1-based line number becomes the example id.
    """
    records, label_map = read_jsonl_records(path, label_map)
    examples = []
    for line_no, text, label in records:
        try:
            examples.append(make_example(line_no, text, label, vocab, max_seq_len))
        except DataError:
            raise DataError(f"{path}: line {line_no}: text has no tokens") from None
    return examples, label_map


def subsample(dataset: Sequence[Example], n: int, seed: int) -> list[Example]:
    """Stratified sample of ``n`` examples without replacement.

    Per-class quotas are proportional (floored); leftover slots go to the
    largest classes first. The result depends only on ids, labels and seed,
    not on the order of ``dataset``.
    """
    if n > len(dataset):
        raise ContractError(f"cannot subsample {n} examples from a dataset of {len(dataset)}")
    if n < 0:
        raise ContractError(f"sample size must be non-negative, got {n}")
    by_label: dict[int, list[Example]] = {}
    for ex in sorted(dataset, key=lambda e: e.id):
        by_label.setdefault(ex.label, []).append(ex)
    labels = sorted(by_label)
    total = len(dataset)
    quota = {lab: n * len(by_label[lab]) // total for lab in labels}
    leftover = n - sum(quota.values())
    largest_first = sorted(labels, key=lambda lab: (-len(by_label[lab]), lab))
    while leftover > 0:
        for lab in largest_first:
            if leftover == 0:
                break
            if quota[lab] < len(by_label[lab]):
                quota[lab] += 1
                leftover -= 1

    rng = np.random.default_rng(seed)
    chosen: list[Example] = []
    for lab in labels:
        members = by_label[lab]
        order = rng.permutation(len(members))[: quota[lab]]
        chosen.extend(members[i] for i in order)
    return [chosen[i] for i in rng.permutation(len(chosen))]


def pad_batch(seqs: Sequence[Sequence[int]], labels, example_ids=None,
              pad_to: int | None = None, noise_sigma=None) -> Batch:
    """Right-pad id sequences with PAD into a Batch."""
    width = max((len(s) for s in seqs), default=0)
    if pad_to is not None:
        if pad_to < width:
            raise ContractError(f"pad_to={pad_to} shorter than longest sequence {width}")
        width = pad_to
    ids = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float64)
    for r, s in enumerate(seqs):
        ids[r, : len(s)] = s
        mask[r, : len(s)] = 1.0
    if example_ids is None:
        example_ids = np.arange(len(seqs))
    sigma = None if noise_sigma is None else np.asarray(noise_sigma, dtype=np.float64)
    return Batch(ids, mask, np.asarray(labels, dtype=np.int64),
                 np.asarray(example_ids, dtype=np.int64), sigma)


def batch_iter(dataset: Sequence[Example], batch_size: int, shuffle_seed: int,
               epoch: int = 0) -> list[Batch]:
    """Shuffle with ``shuffle_seed + epoch`` and cut into batches.

    The shuffle starts from id order, so equal example sets give equal
    batches regardless of how the caller ordered them.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    ordered = sorted(dataset, key=lambda e: e.id)
    perm = np.random.default_rng(shuffle_seed + epoch).permutation(len(ordered))
    batches = []
    for start in range(0, len(ordered), batch_size):
        chunk = [ordered[i] for i in perm[start:start + batch_size]]
        batches.append(pad_batch([e.tokens for e in chunk], [e.label for e in chunk],
                                 [e.id for e in chunk]))
    return batches


def unpad(batch: Batch) -> list[list[int]]:
    return [list(row[: int(n)]) for row, n in zip(batch.ids, batch.lengths)]
