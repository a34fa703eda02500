"""Synthetic two-template text classification task for desk-scale studies.

Each class has its own cue-word distribution; sentences mix cue words with
shared filler. Within a synonym group the first word is common and the rest
are rare, as in natural text. The lexicon only maps words to synonyms
carrying the same label, so synonym perturbations are label-preserving.

Run ``python -m doublemix.synthetic OUT_DIR`` to write train/dev/test JSONL
files, a lexicon TSV and a ready-to-use config.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .augment import SynonymLexicon

LABELS = ("neg", "pos")

# synonym groups; every group stays inside one class
_CUES = {
    "pos": [["good", "great", "fine"], ["happy", "glad", "cheerful"], ["bright", "sunny"],
            ["love", "adore"], ["win", "triumph"]],
    "neg": [["bad", "poor", "awful"], ["sad", "gloomy", "unhappy"], ["dark", "dim"],
            ["hate", "loathe"], ["lose", "fail"]],
}
_FILLER = [["the", "a"], ["movie", "film"], ["story", "plot"], ["day", "time"], ["it", "this"],
           ["was", "seemed"], ["very", "really"], ["and"], ["of"], ["with"], ["people"],
           ["scene"], ["music"], ["ending"], ["actor"], ["city"]]


def lexicon() -> SynonymLexicon:
    entries: dict[str, list[str]] = {}
    for group in [g for groups in _CUES.values() for g in groups] + _FILLER:
        for w in group:
            entries[w] = [s for s in group if s != w]
    return SynonymLexicon(entries)


def _pick(group: list[str], rng: np.random.Generator, skew: float) -> str:
    # Zipf-like: the first word of a group is the common one
    w = 1.0 / np.arange(1, len(group) + 1) ** skew
    return group[rng.choice(len(group), p=w / w.sum())]


def _sentence(label: str, rng: np.random.Generator, cue_rate: float, cross_rate: float,
              skew: float) -> str:
    other = "neg" if label == "pos" else "pos"
    n = int(rng.integers(8, 15))
    words = []
    for _ in range(n):
        u = rng.random()
        if u < cue_rate:
            groups = _CUES[label]
        elif u < cue_rate + cross_rate:
            groups = _CUES[other]
        else:
            groups = _FILLER
        group = groups[rng.integers(len(groups))]
        words.append(_pick(group, rng, skew))
    return " ".join(words)


def make_records(n: int, seed: int, cue_rate: float = 0.25, cross_rate: float = 0.08,
                 skew: float = 1.5) -> list[dict]:
    """``n`` balanced ``{"text", "label"}`` records.

    ``skew`` > 0 makes later synonyms in each group rarer (weights ``1/rank**skew``).
    """
    rng = np.random.default_rng(seed)
    labels = [LABELS[i % 2] for i in range(n)]
    return [{"text": _sentence(lab, rng, cue_rate, cross_rate, skew), "label": lab} for lab in labels]


def write_jsonl(records, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


def write_lexicon(lex: SynonymLexicon, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for word, syns in sorted(lex.entries.items()):
            fh.write(f"{word}\t{','.join(syns)}\n")


def write_demo(out_dir, n_train: int = 400, n_dev: int = 100, n_test: int = 200, seed: int = 0) -> Path:
    out = Path(out_dir).resolve()
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(make_records(n_train, seed), out / "train.jsonl")
    write_jsonl(make_records(n_dev, seed + 1), out / "dev.jsonl")
    write_jsonl(make_records(n_test, seed + 2), out / "test.jsonl")
    write_lexicon(lexicon(), out / "lexicon.tsv")
    cfg = out / "demo.cfg"
    cfg.write_text(
        "# synthetic two-class demo\n"
        f"train_path = {out / 'train.jsonl'}\n"
        f"dev_path = {out / 'dev.jsonl'}\n"
        f"test_path = {out / 'test.jsonl'}\n"
        f"lexicon_path = {out / 'lexicon.tsv'}\n"
        "num_layers = 2\ndim = 16\nhidden_dim = 16\n"
        "epochs = 10\nbatch_size = 16\n"
        "layer_set = 1,2\nn_aug = 2\ngamma = 8\n"
        "op_pool = synonym_replace:0.2,random_insert:0.1\n"
        "eval_noise_sigma = 0.1\n"
        "seed = 0,1,2\n"
        f"out_dir = {out / 'runs'}\n",
        encoding="utf-8",
    )
    return cfg


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: python -m doublemix.synthetic OUT_DIR")
    print(write_demo(sys.argv[1]))
