"""Command-line pipeline: ground, train, eval, and predict subcommands.

Every flag can also be given through a YAML config file (flat keys named
like the flags, or grouped one level deep; groups are flattened). Explicit
command-line flags override config values, which override built-in defaults.

Exit codes: 0 success, 2 usage or config error, 3 data or IO error,
4 checkpoint/vocabulary mismatch, 5 training abort, 6 checkpoint directory
locked by another run.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .evaluation import TIE_MODES, evaluate
from .kg import KnowledgeGraph, TripleFileError, write_triples
from .model import ComplexEmbeddings
from .rules import Grounding, RuleFileError, parse_rules, propositionalize
from .softlabels import predict_soft_labels
from .training import TrainConfig, TrainingAbort, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_VOCAB = 4
EXIT_TRAINING = 5
EXIT_LOCKED = 6

DEFAULTS = {
    "dim": 100,
    "neg_ratio": 10,
    "lr": 0.5,
    "l2": 0.01,
    "slack_c": 0.01,
    "inner_epochs": 1,
    "batches": 100,
    "max_epochs": 1000,
    "eval_every": 50,
    "patience": 3,
    "min_confidence": 0.8,
    "seed": 0,
    "threads": 1,
    "tie_mode": "mid",
    "grad_norm": "row",
    "init_scale": 0.1,
    "train": None,
    "valid": None,
    "test": None,
    "rules": None,
    "checkpoint_dir": None,
    "checkpoint": None,
    "out_dir": None,
    "out": None,
    "ranks_out": None,
}


class ConfigError(ValueError):
    pass


def _load_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    flat: dict = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    unknown = set(flat) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return flat


def _resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and explicit flags (highest precedence)."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_load_config_file(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _require_paths(cfg: dict, keys: list[str]) -> None:
    for key in keys:
        value = cfg.get(key)
        if value is None:
            raise ConfigError(f"missing required option --{key.replace('_', '-')}")
        if not Path(value).exists():
            raise ConfigError(f"--{key.replace('_', '-')}: no such file: {value}")


def _train_config(cfg: dict) -> TrainConfig:
    tc = TrainConfig(
        dim=int(cfg["dim"]),
        neg_ratio=int(cfg["neg_ratio"]),
        learning_rate=float(cfg["lr"]),
        l2=float(cfg["l2"]),
        slack_penalty=float(cfg["slack_c"]),
        inner_epochs=int(cfg["inner_epochs"]),
        n_batches=int(cfg["batches"]),
        max_epochs=int(cfg["max_epochs"]),
        eval_every=int(cfg["eval_every"]),
        patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
        grad_norm=str(cfg["grad_norm"]),
        init_scale=float(cfg["init_scale"]),
    )
    tc.validate()
    return tc


def _load_kg(cfg: dict) -> KnowledgeGraph:
    return KnowledgeGraph.from_files(cfg["train"], cfg.get("valid"), cfg.get("test"))


def _load_rules_and_ground(cfg: dict, kg: KnowledgeGraph):
    rules = parse_rules(cfg["rules"], kg, float(cfg["min_confidence"]))
    groundings, unlabeled = propositionalize(rules, kg)
    return rules, groundings, unlabeled


def _write_groundings(path: Path, groundings: list[Grounding], kg: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("# rule_index\tn_premises\tpremise triples...\tconclusion triple\n")
        for g in groundings:
            fields = [str(g.rule_index), str(len(g.premise))]
            for t in (*g.premise, g.conclusion):
                fields.extend(kg.triple_names(t))
            f.write("\t".join(fields) + "\n")


def _check_vocab(meta: dict, kg: KnowledgeGraph) -> None:
    ent_hash, rel_hash = kg.vocab_hashes()
    if meta.get("entity_vocab_sha256") != ent_hash or meta.get("relation_vocab_sha256") != rel_hash:
        raise VocabMismatch(
            "checkpoint vocabularies do not match the loaded graph "
            "(was it trained on different triple files?)"
        )


class VocabMismatch(ValueError):
    pass


# -- subcommands -----------------------------------------------------------------


def cmd_ground(cfg: dict) -> int:
    _require_paths(cfg, ["train", "rules"])
    kg = _load_kg(cfg)
    rules, groundings, unlabeled = _load_rules_and_ground(cfg, kg)

    out_dir = Path(cfg["out_dir"] or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_groundings(out_dir / "groundings.tsv", groundings, kg)
    write_triples(out_dir / "unlabeled.tsv", unlabeled, kg)

    stats = (
        ("n_e (entities)", kg.n_entities),
        ("n_r (relations)", kg.n_relations),
        ("n_l (labeled positives)", len(kg.train)),
        ("n_u (unlabeled triples)", len(unlabeled)),
        ("n_g (valid groundings)", len(groundings)),
    )
    print(f"rules kept: {len(rules)} (min confidence {cfg['min_confidence']})")
    for label, value in stats:
        print(f"{label:<26}{value:>10}")
    print(f"wrote {out_dir / 'groundings.tsv'} and {out_dir / 'unlabeled.tsv'}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _require_paths(cfg, ["train"])
    if cfg.get("checkpoint_dir") is None:
        raise ConfigError("missing required option --checkpoint-dir")
    kg = _load_kg(cfg)
    if cfg.get("rules") is not None:
        _require_paths(cfg, ["rules"])
        rules, groundings, _ = _load_rules_and_ground(cfg, kg)
    else:
        logger.info("no rule file given: training without rule guidance")
        rules, groundings = [], []

    ckpt_dir = Path(cfg["checkpoint_dir"])
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    lock_path = ckpt_dir / ".lock"
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        print(f"error: {ckpt_dir} is locked by another run (remove {lock_path} if stale)",
              file=sys.stderr)
        return EXIT_LOCKED
    try:
        os.write(lock_fd, str(os.getpid()).encode())
        os.close(lock_fd)

        tc = _train_config(cfg)
        log_lines: list[str] = []
        result = train(kg, rules, groundings, tc, log_lines)

        ent_hash, rel_hash = kg.vocab_hashes()
        snapshot = {k: v for k, v in cfg.items() if v is not None}
        result.embeddings.save(
            ckpt_dir / "best.npz",
            meta={
                "entity_vocab_sha256": ent_hash,
                "relation_vocab_sha256": rel_hash,
                "config": snapshot,
                "best_val_mrr": result.best_val_mrr,
                "stopped_epoch": result.stopped_epoch,
            },
        )
        (ckpt_dir / "training.log").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        print(f"checkpoint written to {ckpt_dir / 'best.npz'} "
              f"(stopped at epoch {result.stopped_epoch}, "
              f"best val MRR {result.best_val_mrr})")
        return EXIT_OK
    finally:
        lock_path.unlink(missing_ok=True)


def cmd_eval(cfg: dict) -> int:
    _require_paths(cfg, ["checkpoint", "train", "test"])
    kg = _load_kg(cfg)
    emb, meta = ComplexEmbeddings.load(cfg["checkpoint"])
    _check_vocab(meta, kg)
    report = evaluate(
        emb,
        kg.test,
        kg,
        tie_mode=cfg["tie_mode"],
        keep_records=cfg.get("ranks_out") is not None,
        n_threads=int(cfg["threads"]),
    )
    print(report.format_table())
    print()
    print(report.format_key_values())
    if cfg.get("ranks_out"):
        with open(cfg["ranks_out"], "w", encoding="utf-8") as f:
            f.write("# head\trelation\ttail\thead_rank\ttail_rank\n")
            for rec in report.records:
                h, r, t = kg.triple_names(rec.triple)
                f.write(f"{h}\t{r}\t{t}\t{rec.head_rank}\t{rec.tail_rank}\n")
        print(f"per-triple ranks written to {cfg['ranks_out']}")
    return EXIT_OK


def cmd_predict(cfg: dict) -> int:
    _require_paths(cfg, ["checkpoint", "train", "rules"])
    kg = _load_kg(cfg)
    emb, meta = ComplexEmbeddings.load(cfg["checkpoint"])
    _check_vocab(meta, kg)
    rules, groundings, unlabeled = _load_rules_and_ground(cfg, kg)
    labels = predict_soft_labels(unlabeled, groundings, rules, emb, float(cfg["slack_c"]))
    phi = emb.truths(np.asarray(unlabeled, dtype=np.int64)) if unlabeled else []

    out_path = cfg.get("out") or "soft_labels.tsv"
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("# head\trelation\ttail\tphi\tsoft_label\n")
        for t, p in zip(unlabeled, phi):
            h, r, tl = kg.triple_names(t)
            f.write(f"{h}\t{r}\t{tl}\t{p:.6f}\t{labels[t]:.6f}\n")
    print(f"{len(unlabeled)} soft labels written to {out_path}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file; flags override its keys")
    p.add_argument("--train", help="training triples (TSV)")
    p.add_argument("--valid", help="validation triples (TSV)")
    p.add_argument("--test", help="test triples (TSV)")
    p.add_argument("--rules", help="rule file")
    p.add_argument("--min-confidence", dest="min_confidence", type=float,
                   help="drop rules below this confidence (default 0.8)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int, help="evaluation thread count")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, help="embedding dimensionality")
    p.add_argument("--neg-ratio", dest="neg_ratio", type=int,
                   help="negatives per positive")
    p.add_argument("--lr", type=float, help="initial AdaGrad learning rate")
    p.add_argument("--l2", type=float, help="L2 regularization coefficient")
    p.add_argument("--slack-c", dest="slack_c", type=float,
                   help="rule-constraint slack penalty")
    p.add_argument("--inner-epochs", dest="inner_epochs", type=int,
                   help="rectification passes per mini-batch")
    p.add_argument("--batches", type=int, help="mini-batches per epoch")
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int,
                   help="validation cadence in epochs")
    p.add_argument("--patience", type=int,
                   help="validations without improvement before stopping")
    p.add_argument("--grad-norm", dest="grad_norm", choices=["row", "global", "none"])
    p.add_argument("--init-scale", dest="init_scale", type=float)
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rulekge",
        description="Knowledge graph embeddings with soft-rule guidance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ground = sub.add_parser("ground", help="propositionalize rules and dump artifacts")
    _add_common(p_ground)
    p_ground.add_argument("--out-dir", dest="out_dir", help="artifact directory (default .)")

    p_train = sub.add_parser("train", help="train embeddings")
    _add_common(p_train)
    _add_train_flags(p_train)

    p_eval = sub.add_parser("eval", help="filtered link-prediction evaluation")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint file (best.npz)")
    p_eval.add_argument("--tie-mode", dest="tie_mode", choices=list(TIE_MODES))
    p_eval.add_argument("--ranks-out", dest="ranks_out", help="per-triple rank dump (TSV)")

    p_pred = sub.add_parser("predict", help="dump soft labels for unlabeled triples")
    _add_common(p_pred)
    p_pred.add_argument("--checkpoint", help="checkpoint file (best.npz)")
    p_pred.add_argument("--slack-c", dest="slack_c", type=float)
    p_pred.add_argument("--out", help="output TSV path")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    commands = {
        "ground": cmd_ground,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
    }
    try:
        cfg = _resolve(args)
        return commands[args.command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (TripleFileError, RuleFileError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except VocabMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VOCAB
    except TrainingAbort as e:
        print(f"error: training aborted: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
