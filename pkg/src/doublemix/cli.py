"""Command-line entry point: config file plus ``--key=value`` overrides.

Exit status is 0 on success, 1 on user error (bad flag, unknown key, missing
file, invalid data) and 2 on anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import augment
from .augment import load_lexicon, load_paraphrases
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .errors import ConfigError, ContractError, DataError
from .features import dump_features
from .harness import Experiment, ablation_suite, layer_set_sweep, low_resource_sweep, run_seeds
from .text import build_vocab, load_dataset, read_jsonl_records
from .trainer import evaluate

logger = logging.getLogger("doublemix")

COMMANDS = ("train", "eval", "ablate", "sweep-layers", "sweep-lowres", "preview-augment", "dump-features")
USER_ERRORS = (ConfigError, ContractError, DataError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="doublemix", allow_abbrev=False,
                     description="Train and study two-step hidden-space interpolation on text classifiers.",
                     epilog="Any config key can be overridden as --key=value, e.g. --seed=0,1,2.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "train": "train one model per seed; writes metrics.json and checkpoints",
        "eval": "evaluate a checkpoint on the configured split",
        "ablate": "run every configured ablation mode",
        "sweep-layers": "one study per interpolation layer set",
        "sweep-lowres": "one study per training-set size",
        "preview-augment": "print perturbed variants of the first training examples",
        "dump-features": "write pooled features and their 2-D PCA as CSV",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], allow_abbrev=False)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out-dir", help="directory for every output file")
    return parser


def parse_overrides(parser: _Parser, extra: list[str]) -> dict[str, str]:
    out = {}
    for arg in extra:
        if not arg.startswith("--") or "=" not in arg:
            parser.error(f"unrecognized argument {arg!r}; overrides take the form --key=value")
        key, _, value = arg[2:].partition("=")
        out[key] = value
    return out


# --- data -----------------------------------------------------------------


def load_experiment(cfg: RunConfig) -> tuple[Experiment, dict[str, int]]:
    if cfg.train_path is None:
        raise ConfigError("train_path is not set")
    records, label_map = read_jsonl_records(cfg.train_path)
    vocab = build_vocab([text for _, text, _ in records], cfg.min_freq)
    train, _ = load_dataset(cfg.train_path, vocab, label_map, cfg.max_seq_len)
    dev = load_dataset(cfg.dev_path, vocab, label_map, cfg.max_seq_len)[0] if cfg.dev_path else []
    test = load_dataset(cfg.test_path, vocab, label_map, cfg.max_seq_len)[0] if cfg.test_path else []
    lexicon = load_lexicon(cfg.lexicon_path) if cfg.lexicon_path else None
    paraphrases = load_paraphrases(cfg.paraphrase_path) if cfg.paraphrase_path else None
    if paraphrases is not None:
        cover = paraphrases.check_ids(e.id for e in train)
        logger.info("paraphrase coverage %.1f%% of training examples", 100 * cover["coverage"])
    exp = Experiment(train, dev, test, vocab, len(label_map), cfg.num_layers, cfg.dim, cfg.hidden_dim,
                     lexicon, paraphrases, cfg.eval_noise_sigma)
    return exp, label_map


def _split_path(cfg: RunConfig) -> str:
    path = {"train": cfg.train_path, "dev": cfg.dev_path, "test": cfg.test_path}[cfg.split]
    if path is None:
        raise ConfigError(f"split {cfg.split!r} selected but {cfg.split}_path is not set")
    return path


def _checkpoint_path(cfg: RunConfig, out: Path) -> Path:
    return Path(cfg.checkpoint) if cfg.checkpoint else out / f"model_seed{cfg.seed[0]}.json"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)


# --- commands -------------------------------------------------------------


def cmd_train(cfg: RunConfig, out: Path) -> None:
    exp, label_map = load_experiment(cfg)
    tc = cfg.train_config()
    log = (out / "mixplans.jsonl").open("w", encoding="utf-8") if cfg.log_mixplans else None
    try:
        report, results = run_seeds(exp, tc, mixplan_log=log)
    finally:
        if log is not None:
            log.close()
    for res in results:
        save_checkpoint(out / f"model_seed{res.seed}.json", res.model, exp.vocab, label_map)
    _write_json(out / "metrics.json", report)
    m = report["mean"]
    print(f"accuracy {m['accuracy']:.4f} macro_f1 {m['macro_f1']:.4f} over {len(results)} seed(s)")


def cmd_eval(cfg: RunConfig, out: Path) -> None:
    model, vocab, label_map = load_checkpoint(_checkpoint_path(cfg, out))
    data, _ = load_dataset(_split_path(cfg), vocab, label_map, cfg.max_seq_len)
    clean = evaluate(model, data)
    result = {"split": cfg.split, "accuracy": clean.accuracy, "macro_f1": clean.macro_f1}
    if cfg.eval_noise_sigma > 0:
        noisy = evaluate(model, data, noise_sigma=cfg.eval_noise_sigma, noise_seed=cfg.seed[0])
        result.update(noisy_accuracy=noisy.accuracy, noisy_macro_f1=noisy.macro_f1,
                      accuracy_drop=clean.accuracy - noisy.accuracy)
    _write_json(out / "eval_metrics.json", result)
    print(f"{cfg.split}: accuracy {clean.accuracy:.4f} macro_f1 {clean.macro_f1:.4f}")


def cmd_ablate(cfg: RunConfig, out: Path) -> None:
    exp, _ = load_experiment(cfg)
    reports = ablation_suite(exp, cfg.train_config(), cfg.ablation_modes)
    for mode, report in reports.items():
        _write_json(out / f"metrics_{mode}.json", report)
        print(f"{mode:18s} accuracy {report['mean']['accuracy']:.4f} macro_f1 {report['mean']['macro_f1']:.4f}")
    _write_json(out / "ablation.json", reports)


def cmd_sweep_layers(cfg: RunConfig, out: Path) -> None:
    exp, _ = load_experiment(cfg)
    result = layer_set_sweep(exp, cfg.layer_sets, cfg.train_config())
    _write_json(out / "sweep_layers.json", result)
    for row in result["rows"]:
        name = ",".join(map(str, row["layer_set"])) or "none"
        print(f"{{{name}}}: accuracy {row['accuracy']:.4f} delta {row['delta_accuracy']:+.4f}")


def cmd_sweep_lowres(cfg: RunConfig, out: Path) -> None:
    exp, _ = load_experiment(cfg)
    result = low_resource_sweep(exp, cfg.sizes, cfg.train_config())
    _write_json(out / "sweep_lowres.json", result)
    for row in result["rows"]:
        print(f"n={row['size']}: accuracy {row['accuracy']:.4f} macro_f1 {row['macro_f1']:.4f}")


def cmd_preview(cfg: RunConfig, out: Path) -> None:
    exp, _ = load_experiment(cfg)
    tc = cfg.train_config()
    rng = np.random.default_rng(cfg.seed[0])
    for ex in sorted(exp.train, key=lambda e: e.id)[: cfg.preview_count]:
        print(f"[{ex.id}] {' '.join(ex.words)}")
        plan = augment.sample_operations(tc.op_pool, tc.mix.n_aug, rng)
        views = augment.apply_plan(ex, plan, exp.lexicon, exp.paraphrases, rng)
        for op, view in zip(plan.ops, views):
            note = f"  (+ embedding noise sigma={view.noise_sigma})" if view.noise_sigma > 0 else ""
            print(f"  {str(op):24s} {' '.join(view.words)}{note}")


def cmd_dump_features(cfg: RunConfig, out: Path) -> None:
    model, vocab, label_map = load_checkpoint(_checkpoint_path(cfg, out))
    data, _ = load_dataset(_split_path(cfg), vocab, label_map, cfg.max_seq_len)
    path = out / f"features_{cfg.split}.csv"
    dump_features(model, data, path)
    print(f"wrote {len(data)} rows to {path}")


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep-layers": cmd_sweep_layers,
    "sweep-lowres": cmd_sweep_lowres,
    "preview-augment": cmd_preview,
    "dump-features": cmd_dump_features,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        overrides = parse_overrides(parser, extra)
    except UsageError as exc:
        print(f"doublemix: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        cfg = load_config(args.config, overrides)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "effective_config.txt").write_text(cfg.to_text(), encoding="utf-8")
        HANDLERS[args.command](cfg, out)
    except USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, FileNotFoundError) and exc.args else exc
        print(f"doublemix: error: {msg}", file=sys.stderr)
        if isinstance(exc, ConfigError) and "unknown config key" in str(exc):
            parser.print_usage(sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc(file=sys.stderr)
        print(f"doublemix: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
