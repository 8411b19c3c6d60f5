"""Command-line entry points.

Subcommands: ``pretrain``, ``train``, ``eval``, ``rank``, ``sweep-dropout`` and
``make-planted``. Every subcommand accepts ``--config``, ``--seed`` and
``--out``. Errors print one ``error[CODE]: message`` line on stderr and exit 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import reporting
from .checkpoint import Checkpoint
from .config import RunConfig, load_config
from .corpus import (InteractionSet, Vocabulary, build_vocab, catalog_tokens, load_interactions,
                     make_text_item, read_texts, split_items, tokenize)
from .encoder import CnnParams, MovParams
from .errors import CheckpointError, ConfigError, DataFormatError, TerecError, UnknownIdError
from .model import JointModel, JointParams
from .numkit import SeededRng
from .pvec import PretrainedMatrix, pretrain
from .trainkit import (EvalReport, build_candidate_sets, dropout_sweep, evaluate,
                       fit_and_evaluate)

log = logging.getLogger("terec")

PV_TENSOR = "pv.doc_embeddings"


def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing required setting: {what}")
    return value


def _report_text(report: EvalReport) -> str:
    return reporting.format_tsv(["metric", "value"], report.rows())


def _trace_text(losses: Sequence[float]) -> str:
    return reporting.format_tsv(["epoch", "loss"], [(k, f"{v:.6f}") for k, v in enumerate(losses, 1)])


def load_pretrained(path: str | Path) -> PretrainedMatrix:
    ckpt = Checkpoint.load(path)
    ids = ckpt.meta.get("pv_ids")
    if ids is None or PV_TENSOR not in ckpt.tensors:
        raise CheckpointError(f"{path} holds no pre-trained matrix")
    return PretrainedMatrix(list(ids), ckpt.get(PV_TENSOR))


# ---------------------------------------------------------------- pretrain

def cmd_pretrain(config: RunConfig, out: str | None = None) -> Checkpoint:
    corpus_path = _require(config.pretrain_corpus or config.texts, "pretrain_corpus")
    target = _require(config.checkpoint, "checkpoint (output path)")
    texts = read_texts(corpus_path)
    if not texts:
        raise DataFormatError(f"{corpus_path}: pre-training corpus is empty")
    vocab = build_vocab(texts.values(), config.min_count)
    docs = [(doc_id, np.asarray(vocab.encode(tokenize(raw)), dtype=np.int64))
            for doc_id, raw in texts.items()]
    result = pretrain(docs, vocab, config.pv_config(), SeededRng(config.seed).child("pretrain"))
    ckpt = Checkpoint({"kind": "pretrain", "config": config.to_dict(),
                       "pv_ids": result.matrix.ids, "pv_vocab": vocab.to_dict(),
                       "pv_epoch_loss": result.epoch_loss, "pv_skipped": result.skipped})
    ckpt.add(PV_TENSOR, result.matrix.matrix)
    ckpt.save(target)
    reporting.emit(_trace_text(result.epoch_loss), out)
    if out:
        reporting.plot_loss_trace(result.epoch_loss, reporting.figure_path(out, "loss"),
                                  "paragraph vector pre-training")
    return ckpt


# ---------------------------------------------------------------- data prep

@dataclass
class Prepared:
    interactions: InteractionSet
    vocab: Vocabulary
    tokens: list[np.ndarray]
    pretrained: PretrainedMatrix | None


def _read_id_list(path: str) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise DataFormatError(f"test item list not found: {p}")
    return [line.strip() for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def prepare(config: RunConfig, vocab: Vocabulary | None = None,
            test_items: Sequence[str] | None = None, with_pretrained: bool = True) -> Prepared:
    """Load texts and interactions, split items and look up pre-trained rows."""
    texts = read_texts(_require(config.texts, "texts"))
    catalog = sorted(texts)
    if test_items is None:
        if config.test_items:
            test_items = _read_id_list(config.test_items)
        else:
            test_items = split_items(catalog, config.holdout_fraction,
                                     SeededRng(config.seed).child("split"))[1]
    iset = load_interactions(_require(config.interactions, "interactions"), catalog, test_items)
    vocab = vocab or build_vocab(texts.values(), config.min_count)
    tokens = catalog_tokens(texts, iset.items, vocab, config.max_len)
    pretrained = None
    if config.mode == "ter+" and with_pretrained:
        pretrained = load_pretrained(_require(config.pretrained, "pretrained (ter+ mode)"))
        pretrained.rows_for(iset.items)
    return Prepared(iset, vocab, tokens, pretrained)


# ---------------------------------------------------------------- train

def model_checkpoint(model: JointModel, config: RunConfig, prep: Prepared, extra: dict) -> Checkpoint:
    iset = prep.interactions
    meta = {"kind": "model", "config": config.to_dict(), "vocab": prep.vocab.to_dict(),
            "users": iset.users, "test_items": [iset.items[j] for j in iset.test_items],
            "mode": model.joint.mode, "dropout_rate": model.joint.dropout_rate,
            "item_dropout": model.joint.item_dropout, **extra}
    ckpt = Checkpoint(meta)
    for name, t in {**model.encoder.tensors(), **model.joint.tensors()}.items():
        ckpt.add(name, t)
    if prep.pretrained is not None:
        meta["pv_ids"] = prep.pretrained.ids
        ckpt.add(PV_TENSOR, prep.pretrained.matrix)
    return ckpt


def cmd_train(config: RunConfig, out: str | None = None):
    target = _require(config.checkpoint, "checkpoint (output path)")
    prep = prepare(config)
    log.info("data: %s", prep.interactions.summary())
    run = fit_and_evaluate(config.train_config(), prep.interactions, prep.tokens,
                           len(prep.vocab), prep.pretrained)
    ckpt = model_checkpoint(run.model, config, prep, {
        "epoch_loss": run.train.epoch_loss,
        "report": dict(run.report.rows()),
    })
    ckpt.save(target)
    reporting.emit(_trace_text(run.train.epoch_loss) + "\n" + _report_text(run.report), out)
    if out:
        reporting.plot_loss_trace(run.train.epoch_loss, reporting.figure_path(out, "loss"),
                                  f"{config.mode} ({config.encoder})")
    return run, ckpt


# ---------------------------------------------------------------- eval / rank

def model_from_checkpoint(ckpt: Checkpoint, tokens: Sequence[np.ndarray],
                          item_ids: Sequence[str]) -> JointModel:
    meta = ckpt.meta
    if meta.get("kind") != "model":
        raise CheckpointError("checkpoint does not hold a trained model")
    cfg = meta["config"]
    if "enc.dense_w" in ckpt.tensors:
        encoder = MovParams(ckpt.get("enc.word_emb"), ckpt.get("enc.dense_w"),
                            ckpt.vector("enc.dense_b"))
    else:
        encoder = CnnParams(ckpt.get("enc.word_emb"), ckpt.get("enc.filters"),
                            ckpt.vector("enc.filter_bias"), int(cfg["filter_size"]))
    mode = meta["mode"]
    pretrained = rows = None
    if mode == "ter+":
        m = PretrainedMatrix(list(meta["pv_ids"]), ckpt.get(PV_TENSOR))
        pretrained, rows = m.matrix, m.rows_for(item_ids)
        joint = JointParams(ckpt.get("joint.user_emb"), ckpt.get("joint.comb_w"),
                            ckpt.vector("joint.comb_b"), mode, meta["dropout_rate"],
                            meta["item_dropout"])
    else:
        joint = JointParams(ckpt.get("joint.user_emb"), mode=mode,
                            dropout_rate=meta["dropout_rate"], item_dropout=meta["item_dropout"])
    return JointModel(encoder, joint, list(tokens), pretrained, rows)


def cmd_eval(checkpoint: str, interactions: str | None = None, texts: str | None = None,
             n_neg: int | None = None, seed: int | None = None, out: str | None = None) -> EvalReport:
    ckpt = Checkpoint.load(checkpoint)
    if ckpt.meta.get("kind") != "model":
        raise CheckpointError(f"{checkpoint} does not hold a trained model")
    cfg = dict(ckpt.meta["config"])
    for key, val in (("interactions", interactions), ("texts", texts), ("seed", seed),
                     ("n_neg_eval", n_neg)):
        if val is not None:
            cfg[key] = val
    config = RunConfig.from_dict(cfg)
    vocab = Vocabulary.from_dict(ckpt.meta["vocab"])
    # the pre-trained matrix travels inside the model checkpoint
    prep = prepare(config, vocab, ckpt.meta["test_items"], with_pretrained=False)
    if prep.interactions.users != list(ckpt.meta["users"]):
        raise DataFormatError("training users in the interactions file differ from the checkpoint's")
    model = model_from_checkpoint(ckpt, prep.tokens, prep.interactions.items)
    cands = build_candidate_sets(prep.interactions, SeededRng(config.seed).child("candidates"),
                                 config.n_neg_eval)
    report = evaluate(model, cands)
    reporting.emit(_report_text(report), out)
    return report


def cmd_rank(checkpoint: str, user: str, texts: str, top_k: int = 10,
             out: str | None = None) -> list[tuple[int, str, float]]:
    ckpt = Checkpoint.load(checkpoint)
    meta = ckpt.meta
    if meta.get("kind") != "model":
        raise CheckpointError(f"{checkpoint} does not hold a trained model")
    users = list(meta["users"])
    if user not in users:
        raise UnknownIdError(f"unknown user {user!r}; checkpoint has {len(users)} users")
    vocab = Vocabulary.from_dict(meta["vocab"])
    raw = read_texts(texts)
    if not raw:
        raise DataFormatError(f"{texts}: no candidate texts")
    ids = sorted(raw)
    tokens = [make_text_item(i, raw[i], vocab, int(meta["config"]["max_len"])).tokens for i in ids]
    model = model_from_checkpoint(ckpt, tokens, ids)
    u = model.joint.user_emb[users.index(user)].astype(np.float64)
    vecs = model.item_vectors(np.arange(len(ids)))
    scores = np.einsum("sk,sck->sc", u[None, :], vecs[None, :, :])[0]
    # ids are sorted, so a stable sort on -score breaks ties by ascending id
    order = np.argsort(-scores, kind="stable")[:max(top_k, 0)]
    ranked = [(r, ids[j], float(scores[j])) for r, j in enumerate(order, 1)]
    reporting.emit(reporting.format_tsv(["rank", "item_id", "score"],
                                        [(r, i, f"{s:.9g}") for r, i, s in ranked]), out)
    return ranked


# ---------------------------------------------------------------- sweep

def cmd_sweep(config: RunConfig, rates: Sequence[float] | None = None, out: str | None = None):
    if config.mode != "ter+":
        raise ConfigError("sweep-dropout needs mode 'ter+'")
    rates = list(rates if rates is not None else config.sweep_rates)
    prep = prepare(config)
    rows = dropout_sweep(config.train_config(), prep.interactions, prep.tokens, len(prep.vocab),
                         prep.pretrained, rates)
    reporting.emit(reporting.format_tsv(
        ["rate", "map", "auc"], [(f"{r:g}", f"{rep.map:.6f}", f"{rep.auc:.6f}") for r, rep in rows]), out)
    if out:
        reporting.plot_dropout_sweep([r for r, _ in rows], [rep.map for _, rep in rows],
                                     reporting.figure_path(out, "sweep"),
                                     f"{config.mode} ({config.encoder})")
    return rows


# ---------------------------------------------------------------- planted data

def cmd_make_planted(directory: str, seed: int = 0, users: int = 200, items: int = 400,
                     train_per_user: int = 20, words_per_topic: int = 50, unlabeled: int = 0,
                     shuffle: bool = False) -> dict:
    from .synth import planted_dataset, write_planted

    data = planted_dataset(seed, n_users=users, n_items=items, train_per_user=train_per_user,
                           words_per_topic=words_per_topic, n_unlabeled=unlabeled, shuffle=shuffle)
    paths = write_planted(data, directory)
    cfg = {key: Path(paths[key]).name
           for key in ("texts", "interactions", "pretrain_corpus", "test_items")}
    cfg.update(min_count=1, seed=seed)
    cfg_path = Path(directory) / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    paths["config"] = str(cfg_path)
    return paths


# ---------------------------------------------------------------- argparse

def _rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="also write the TSV report here (figures go alongside)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="terec", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("pretrain", parents=[common], help="train paragraph vectors")
    sp.add_argument("--corpus", dest="pretrain_corpus")
    sp.add_argument("--checkpoint")

    def data_flags(sp):
        sp.add_argument("--interactions")
        sp.add_argument("--texts")
        sp.add_argument("--test-items", dest="test_items")
        sp.add_argument("--pretrained")
        sp.add_argument("--mode", choices=["ter", "ter+"])
        sp.add_argument("--encoder", choices=["mov", "cnn"])
        sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("train", parents=[common], help="train and evaluate a recommender")
    data_flags(sp)
    sp.add_argument("--checkpoint")

    sp = sub.add_parser("eval", parents=[common], help="evaluate a trained checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--interactions")
    sp.add_argument("--texts")
    sp.add_argument("--n-neg", dest="n_neg", type=int)

    sp = sub.add_parser("rank", parents=[common], help="rank new texts for a user")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--user", required=True)
    sp.add_argument("--texts", required=True)
    sp.add_argument("--top-k", dest="top_k", type=int, default=10)

    sp = sub.add_parser("sweep-dropout", parents=[common], help="MAP over pre-trained dropout rates")
    data_flags(sp)
    sp.add_argument("--rates", type=_rates)

    sp = sub.add_parser("make-planted", parents=[common], help="write a planted synthetic dataset")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--users", type=int, default=200)
    sp.add_argument("--items", type=int, default=400)
    sp.add_argument("--train-per-user", type=int, default=20)
    sp.add_argument("--words-per-topic", type=int, default=50)
    sp.add_argument("--unlabeled", type=int, default=0)
    sp.add_argument("--shuffle", action="store_true")
    return p


def _run(args: argparse.Namespace) -> None:
    cmd = args.command
    if cmd == "eval":
        cmd_eval(args.checkpoint, args.interactions, args.texts, args.n_neg, args.seed, args.out)
        return
    if cmd == "rank":
        cmd_rank(args.checkpoint, args.user, args.texts, args.top_k, args.out)
        return
    if cmd == "make-planted":
        paths = cmd_make_planted(args.dir, args.seed or 0, args.users, args.items,
                                 args.train_per_user, args.words_per_topic, args.unlabeled,
                                 args.shuffle)
        reporting.emit(reporting.format_tsv(["role", "path"], sorted(paths.items())), args.out)
        return
    keys = ("pretrain_corpus", "checkpoint", "interactions", "texts", "test_items", "pretrained",
            "mode", "encoder", "epochs")
    overrides = {k: getattr(args, k, None) for k in keys}
    config = load_config(args.config, seed=args.seed, **overrides)
    if cmd == "pretrain":
        cmd_pretrain(config, args.out)
    elif cmd == "train":
        cmd_train(config, args.out)
    elif cmd == "sweep-dropout":
        cmd_sweep(config, args.rates, args.out)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _run(args)
    except TerecError as exc:
        print(exc.oneline(), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[E_IO]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
