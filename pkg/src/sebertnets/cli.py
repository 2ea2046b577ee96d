"""Command-line interface: train, eval, predict, inspect, and synth.

Configuration is a flat INI file with [run], [model], [data], and
[synth] sections; any key can be overridden by a flag of the same name.
Human-readable progress goes to stderr, machine-readable artifacts
(training log, predictions, reports) go to files or stdout.

Exit codes: 0 success, 1 usage error, 2 data error, 3 divergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .data import (
    RawExample,
    SynthConfig,
    Vocabulary,
    batch,
    encode_example,
    flatten_for_training,
    generate_synthetic,
    load_jsonl,
    write_jsonl,
)
from .encoder import EncoderConfig
from .errors import (
    ContractError,
    DataError,
    DivergenceError,
    GoldNotFoundError,
    SebertNetsError,
    UsageError,
)
from .evaluation import evaluate
from .model import (
    BERT_BASELINE,
    HSEBERTNETS,
    SEBERTNETS,
    Model,
    ModelConfig,
)
from .optim import AdamState, SgdState, SwatsState, make_state
from .recurrent import GRU, LSTM

log = logging.getLogger("sebertnets")

_VARIANT_ALIASES = {
    "bert": BERT_BASELINE,
    "bert_baseline": BERT_BASELINE,
    "sebertnets": SEBERTNETS,
    "hsebertnets": HSEBERTNETS,
}


@dataclass
class RunConfig:
    """Every tunable of a run, with paper-default hyper-parameters."""

    # [run]
    variant: str = SEBERTNETS
    seed: int = 0
    epochs: int = 5
    batch_size: int = 32
    optimizer: str = "adam"
    lr: float = 1e-3
    eps_switch: float = 1e-9
    top_k: int = 5
    match_mode: str = "any"
    max_span_len: int = 30
    # [model]
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    activation: str = "relu"
    cell: str = GRU
    hidden: int = 200
    max_len: int = 140
    # [data]
    train: str | None = None
    dev: str | None = None
    checkpoint: str = "model.sebn"
    log_path: str = "train_log.jsonl"
    # [synth]
    n_examples: int = 1000
    multi_entity_fraction: float = 0.0
    min_distractors: int = 1
    max_distractors: int = 2

    def validate(self) -> None:
        if self.variant not in _VARIANT_ALIASES:
            raise UsageError(
                f"variant must be one of {sorted(_VARIANT_ALIASES)}, "
                f"got {self.variant!r}"
            )
        self.variant = _VARIANT_ALIASES[self.variant]
        if self.cell not in (LSTM, GRU):
            raise UsageError(f"cell must be {LSTM!r} or {GRU!r}, got {self.cell!r}")
        if self.optimizer not in ("adam", "sgd", "swats"):
            raise UsageError(f"optimizer must be adam, sgd, or swats, "
                             f"got {self.optimizer!r}")
        if self.activation not in ("relu", "gelu"):
            raise UsageError(f"activation must be relu or gelu, "
                             f"got {self.activation!r}")
        if self.match_mode not in ("any", "all"):
            raise UsageError(f"match_mode must be any or all, "
                             f"got {self.match_mode!r}")
        for name in ("batch_size", "top_k", "d_model", "n_layers", "n_heads",
                     "d_ff", "hidden", "max_len", "max_span_len", "n_examples"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        if self.d_model % self.n_heads:
            raise UsageError(f"d_model {self.d_model} is not divisible by "
                             f"n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.lr < 0.0:
            raise UsageError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.multi_entity_fraction <= 1.0:
            raise UsageError(f"multi_entity_fraction must lie in [0, 1], "
                             f"got {self.multi_entity_fraction}")


# (ini key, config field, caster) per section; flags reuse the ini keys
_SCHEMA: dict[str, dict[str, tuple[str, type]]] = {
    "run": {
        "variant": ("variant", str),
        "seed": ("seed", int),
        "epochs": ("epochs", int),
        "batch_size": ("batch_size", int),
        "optimizer": ("optimizer", str),
        "lr": ("lr", float),
        "eps_switch": ("eps_switch", float),
        "top_k": ("top_k", int),
        "match_mode": ("match_mode", str),
        "max_span_len": ("max_span_len", int),
    },
    "model": {
        "d_model": ("d_model", int),
        "n_layers": ("n_layers", int),
        "n_heads": ("n_heads", int),
        "d_ff": ("d_ff", int),
        "dropout": ("dropout", float),
        "activation": ("activation", str),
        "cell": ("cell", str),
        "hidden": ("hidden", int),
        "max_len": ("max_len", int),
    },
    "data": {
        "train": ("train", str),
        "dev": ("dev", str),
        "checkpoint": ("checkpoint", str),
        "log": ("log_path", str),
    },
    "synth": {
        "n_examples": ("n_examples", int),
        "multi_entity_fraction": ("multi_entity_fraction", float),
        "min_distractors": ("min_distractors", int),
        "max_distractors": ("max_distractors", int),
    },
}

_KEY_TO_FIELD = {
    key: (field, caster)
    for section in _SCHEMA.values()
    for key, (field, caster) in section.items()
}


def _require_path(path, what: str) -> str:
    if not path:
        raise UsageError(f"{what} path is required")
    if not os.path.exists(path):
        raise UsageError(f"{what} path {path!r} does not exist")
    return path


def _parse_ini(path: str, cfg: RunConfig) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"config {path!r}: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise UsageError(f"config {path!r}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise UsageError(
                    f"config {path!r}: unknown key {key!r} in [{section}]"
                )
            field, caster = _SCHEMA[section][key]
            try:
                setattr(cfg, field, caster(raw))
            except ValueError as exc:
                raise UsageError(
                    f"config {path!r}: key {key!r} needs a {caster.__name__}, "
                    f"got {raw!r}"
                ) from exc
    return cfg


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        _require_path(config_path, "config")
        cfg = _parse_ini(config_path, cfg)
    for key, (field, _) in _KEY_TO_FIELD.items():
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, field, value)
    cfg.validate()
    return cfg


# --------------------------------------------------------------- helpers


def _strip_gold(ex: RawExample) -> RawExample:
    return dataclasses.replace(ex, entity=None, entities=None)


def _encode_for_training(examples, vocab, max_len):
    kept = []
    skipped = 0
    for ex in examples:
        try:
            kept.append(encode_example(ex, vocab, max_len))
        except GoldNotFoundError as exc:
            skipped += 1
            log.warning("skipping %s: %s", ex.id, exc)
    return kept, skipped


def _encode_for_inference(examples, vocab, max_len):
    return [encode_example(_strip_gold(ex), vocab, max_len) for ex in examples]


def _batches(encoded, batch_size, order=None):
    idx = order if order is not None else range(len(encoded))
    chunk = []
    for j in idx:
        chunk.append(encoded[j])
        if len(chunk) == batch_size:
            yield batch(chunk)
            chunk = []
    if chunk:
        yield batch(chunk)


def _predictions(model: Model, encoded, cfg_k: int, max_span_len: int,
                 batch_size: int) -> dict[str, list]:
    recall = model.recall_config(k=cfg_k, max_span_len=max_span_len)
    out: dict[str, list] = {}
    for b in _batches(encoded, batch_size):
        for item, cands in zip(b.items, model.predict(b, recall)):
            out[item.example_id] = cands
    return out


def _phase(state) -> str | None:
    if isinstance(state, SwatsState):
        return state.phase
    if isinstance(state, AdamState):
        return "adam"
    if isinstance(state, SgdState):
        return "sgd"
    return None


def _load_model(args) -> Model:
    _require_path(args.checkpoint, "checkpoint")
    variant = None
    requested = getattr(args, "variant", None)
    if requested is not None:
        if requested not in _VARIANT_ALIASES:
            raise UsageError(
                f"variant must be one of {sorted(_VARIANT_ALIASES)}, "
                f"got {requested!r}"
            )
        variant = _VARIANT_ALIASES[requested]
    model, _ = Model.load(args.checkpoint, variant=variant)
    return model


def _open_out(path):
    if path:
        return open(path, "w", encoding="utf-8", newline="")
    return None


# -------------------------------------------------------------- commands


def cmd_train(args) -> None:
    cfg = _build_config(args)
    _require_path(cfg.train, "training data")
    raw = load_jsonl(cfg.train)
    flat = flatten_for_training(raw)
    if not flat:
        raise DataError("training data holds no examples with a gold entity")
    vocab = Vocabulary.from_corpus(flat)
    encoded, skipped = _encode_for_training(flat, vocab, cfg.max_len)
    if skipped:
        log.warning("%d example(s) skipped: gold not in (truncated) text", skipped)
    if not encoded:
        raise DataError("no trainable examples survived encoding")

    dev_raw = None
    dev_encoded = None
    if cfg.dev:
        _require_path(cfg.dev, "dev data")
        dev_raw = load_jsonl(cfg.dev)
        dev_encoded = _encode_for_inference(dev_raw, vocab, cfg.max_len)

    try:
        enc_cfg = EncoderConfig(
            vocab_size=vocab.size, d_model=cfg.d_model, n_layers=cfg.n_layers,
            n_heads=cfg.n_heads, d_ff=cfg.d_ff, max_len=cfg.max_len,
            dropout_rate=cfg.dropout, activation=cfg.activation)
        model = Model(ModelConfig(variant=cfg.variant, cell=cfg.cell,
                                  hidden_size=cfg.hidden),
                      enc_cfg, vocab, seed=cfg.seed)
    except ContractError as exc:
        raise UsageError(str(exc)) from exc
    state = make_state(cfg.optimizer, lr=cfg.lr, eps_switch=cfg.eps_switch)
    rng = np.random.default_rng(cfg.seed)

    log.info("training %s on %d examples (%d chars), %d epoch(s)",
             cfg.variant, len(encoded), vocab.size, cfg.epochs)
    with open(cfg.log_path, "w", encoding="utf-8") as lf:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(encoded))
            total = 0.0
            for b in _batches(encoded, cfg.batch_size, order):
                total += model.train_step(b, state, rng) * len(b)
            mean_loss = total / len(encoded)  # per-example, partition-invariant
            record = {"epoch": epoch, "loss": mean_loss,
                      "dev_f1": None, "phase": _phase(state)}
            if dev_encoded is not None:
                preds = _predictions(model, dev_encoded, cfg.top_k,
                                     cfg.max_span_len, cfg.batch_size)
                gold = {ex.id: list(ex.gold_entities) for ex in dev_raw}
                texts = {k: [c.entity_text for c in v] for k, v in preds.items()}
                rep = evaluate(texts, gold, k_max=cfg.top_k,
                               match_mode=cfg.match_mode)
                record["dev_f1"] = list(rep.f1)
            lf.write(json.dumps(record, ensure_ascii=False) + "\n")
            log.info("epoch %d: loss %.4f%s", epoch, mean_loss,
                     "" if record["dev_f1"] is None
                     else f", dev F1@1 {record['dev_f1'][0]:.3f}")
    model.save(cfg.checkpoint, state)
    log.info("checkpoint written to %s, log to %s", cfg.checkpoint, cfg.log_path)


def _read_prediction_file(path) -> dict[str, list[str]]:
    preds: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"bad JSON in predictions: {exc}", line=lineno)
            if not isinstance(obj, dict) or "id" not in obj or "entities" not in obj:
                raise DataError("prediction record needs 'id' and 'entities'",
                                line=lineno)
            preds[str(obj["id"])] = [str(e["text"]) for e in obj["entities"]]
    return preds


def cmd_eval(args) -> None:
    _require_path(args.data, "data")
    examples = load_jsonl(args.data)
    gold = {ex.id: list(ex.gold_entities) for ex in examples}
    if args.predictions:
        _require_path(args.predictions, "predictions")
        texts = _read_prediction_file(args.predictions)
    else:
        model = _load_model(args)
        encoded = _encode_for_inference(examples, model.vocab,
                                        model.enc_cfg.max_len)
        preds = _predictions(model, encoded, args.top_k, args.max_span_len,
                             args.batch_size)
        texts = {k: [c.entity_text for c in v] for k, v in preds.items()}
    rep = evaluate(texts, gold, k_max=args.top_k, match_mode=args.match_mode)
    if args.json:
        print(rep.to_json())
    else:
        print(rep.render_table())
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(rep.to_json() + "\n")


def cmd_predict(args) -> None:
    _require_path(args.data, "data")
    examples = load_jsonl(args.data)
    model = _load_model(args)
    encoded = _encode_for_inference(examples, model.vocab, model.enc_cfg.max_len)
    preds = _predictions(model, encoded, args.top_k, args.max_span_len,
                         args.batch_size)
    sink = _open_out(args.out)
    try:
        out = sink if sink is not None else sys.stdout
        for ex in examples:
            cands = preds[ex.id]
            line = {
                "id": ex.id,
                "entities": [
                    {"text": c.entity_text, "score": c.score,
                     "start": c.start, "end": c.end}
                    for c in cands
                ],
            }
            out.write(json.dumps(line, ensure_ascii=False) + "\n")
    finally:
        if sink is not None:
            sink.close()


def cmd_inspect(args) -> None:
    _require_path(args.data, "data")
    examples = load_jsonl(args.data)
    wanted = [ex for ex in examples if ex.id == args.example_id]
    if not wanted:
        raise DataError(f"example id {args.example_id!r} not found in {args.data}")
    model = _load_model(args)
    encoded = _encode_for_inference(wanted[:1], model.vocab,
                                    model.enc_cfg.max_len)
    b = batch(encoded)
    _, attentions = model.forward(b)
    labels = [model.vocab.token_label(int(t)) for t in b.token_ids[0]]

    sink = _open_out(args.out)
    try:
        out = sink if sink is not None else sys.stdout
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["layer", "head", "query_token"] + labels)
        for layer_idx, att in enumerate(attentions):
            n_heads = att.shape[1]
            for head in range(n_heads):
                for q, q_label in enumerate(labels):
                    weights = [f"{w:.8f}" for w in att[0, head, q]]
                    writer.writerow([layer_idx, head, q_label] + weights)
    finally:
        if sink is not None:
            sink.close()


def cmd_synth(args) -> None:
    cfg = _build_config(args)
    if not args.out:
        raise UsageError("synth requires --out")
    try:
        synth_cfg = SynthConfig(
            n_examples=cfg.n_examples,
            multi_entity_fraction=cfg.multi_entity_fraction,
            min_distractors=cfg.min_distractors,
            max_distractors=cfg.max_distractors,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from exc
    examples = generate_synthetic(synth_cfg, seed=cfg.seed)
    write_jsonl(examples, args.out)
    log.info("wrote %d examples to %s", len(examples), args.out)


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_OVERRIDE_FLAGS: dict[str, tuple[type, str]] = {
    "variant": (str, "model variant: bert, sebertnets, or hsebertnets"),
    "seed": (int, "random seed"),
    "epochs": (int, "training epochs"),
    "batch_size": (int, "examples per step"),
    "optimizer": (str, "adam, sgd, or swats"),
    "lr": (float, "learning rate"),
    "eps_switch": (float, "swats switch threshold"),
    "top_k": (int, "candidates per example"),
    "match_mode": (str, "count a hit on any or all gold entities"),
    "max_span_len": (int, "longest decodable span"),
    "d_model": (int, "encoder width"),
    "n_layers": (int, "encoder layers"),
    "n_heads": (int, "attention heads"),
    "d_ff": (int, "feed-forward width"),
    "dropout": (float, "dropout rate"),
    "activation": (str, "relu or gelu"),
    "cell": (str, "recurrent cell: lstm or gru"),
    "hidden": (int, "recurrent hidden size"),
    "max_len": (int, "token budget per example"),
    "train": (str, "training data JSONL"),
    "dev": (str, "dev data JSONL"),
    "checkpoint": (str, "checkpoint output path"),
    "log": (str, "training log output path"),
    "n_examples": (int, "synthetic corpus size"),
    "multi_entity_fraction": (float, "share of multi-entity examples"),
    "min_distractors": (int, "fewest distractor cues"),
    "max_distractors": (int, "most distractor cues"),
}


def _add_flags(sp, names):
    for name in names:
        typ, help_text = _OVERRIDE_FLAGS[name]
        sp.add_argument(f"--{name.replace('_', '-')}", type=typ, default=None,
                        dest=name, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sebertnets",
                description="Event-entity extraction: train, evaluate, "
                            "predict, inspect attention, make synthetic data.")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="train a model and write a checkpoint")
    tr.add_argument("--config", default=None, help="INI config path")
    _add_flags(tr, ["variant", "seed", "epochs", "batch_size", "optimizer",
                    "lr", "eps_switch", "top_k", "match_mode", "max_span_len",
                    "d_model", "n_layers", "n_heads", "d_ff", "dropout",
                    "activation", "cell", "hidden", "max_len",
                    "train", "dev", "checkpoint", "log"])
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint or prediction file")
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--predictions", default=None,
                    help="score this prediction JSONL instead of a checkpoint")
    ev.add_argument("--data", required=True)
    ev.add_argument("--top-k", type=int, default=5, dest="top_k")
    ev.add_argument("--match-mode", default="any", dest="match_mode",
                    choices=["any", "all"])
    ev.add_argument("--max-span-len", type=int, default=30, dest="max_span_len")
    ev.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    ev.add_argument("--variant", default=None,
                    help="decode as this variant (recurrent family only)")
    ev.add_argument("--json", action="store_true",
                    help="print the report as JSON instead of a table")
    ev.add_argument("--json-out", default=None, dest="json_out",
                    help="also write the JSON report here")
    ev.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="emit ranked entities as JSONL")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--top-k", type=int, default=5, dest="top_k")
    pr.add_argument("--max-span-len", type=int, default=30, dest="max_span_len")
    pr.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    pr.add_argument("--variant", default=None)
    pr.add_argument("--out", default=None, help="output path (default stdout)")
    pr.set_defaults(func=cmd_predict)

    ins = sub.add_parser("inspect",
                         help="dump attention weights for one example as CSV")
    ins.add_argument("--checkpoint", required=True)
    ins.add_argument("--data", required=True)
    ins.add_argument("--example-id", required=True, dest="example_id")
    ins.add_argument("--out", default=None, help="output path (default stdout)")
    ins.set_defaults(func=cmd_inspect)

    sy = sub.add_parser("synth", help="write a synthetic corpus as JSONL")
    sy.add_argument("--config", default=None, help="INI config path")
    sy.add_argument("--out", required=True)
    _add_flags(sy, ["seed", "n_examples", "multi_entity_fraction",
                    "min_distractors", "max_distractors"])
    sy.set_defaults(func=cmd_synth)
    return p


def console_main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SebertNetsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(console_main())
