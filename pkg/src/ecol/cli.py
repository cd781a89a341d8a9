"""Command-line entry point: ``ecol <command> [options]``.

Exit codes: 0 success, 2 usage or data error, 1 internal error. Network use
(unshortening, checkpoint download) needs ``--online``; everything else runs
from local files and caches. ``ECOL_CACHE_DIR`` sets the default cache root.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

logger = logging.getLogger("ecol")

DEFAULTS = {
    "variant": "C_PK_S",
    "seeds": "42,0,36",
    "epochs": 3,
    "batch_size": 1,
    "lr": 2e-5,
    "freeze_encoder": False,
    "cached_fn": False,
    "offline": True,
    "missing_description": "zero",
    "vocab_size": 8000,
    "encoder_kind": "mini-bert",
    "seed": 0,
}


class UsageError(Exception):
    pass


def cache_root() -> Path:
    return Path(os.environ.get("ECOL_CACHE_DIR", Path.home() / ".cache" / "ecol"))


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _resolve(args: argparse.Namespace) -> dict:
    """Merge flags, config file and defaults; the config file wins on conflict."""
    cfg = _load_config(args.config)
    merged = dict(DEFAULTS)
    for key, value in vars(args).items():
        if value is not None:
            merged[key] = value
    for key, value in cfg.items():
        flag = getattr(args, key, None)
        if flag is not None and flag != value:
            warnings.warn(f"config file overrides --{key.replace('_', '-')}={flag!r} with {value!r}")
            logger.warning("config file overrides --%s=%r with %r", key, flag, value)
        merged[key] = value
    if merged.get("online"):
        merged["offline"] = False
    return merged


def _require(opts: dict, *keys: str) -> None:
    for key in keys:
        if not opts.get(key):
            raise UsageError(f"missing required option --{key.replace('_', '-')}")


def _exists(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"{what} not found: {path}")
    return path


def _seeds(value) -> list[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    try:
        return [int(s) for s in str(value).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad seed list {value!r}") from None


# ----------------------------------------------------------------- commands


def cmd_preprocess(opts: dict) -> int:
    from .evaluation import load_constraint
    from .preprocess import preprocess_post

    split = load_constraint(_exists(opts["input"], "input file"))
    with open(opts["output"], "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "tweet", "label", "normalized_text", "urls"])
        for post in split.posts:
            pp = preprocess_post(post)
            writer.writerow([post.id, post.raw_text, post.label, pp.normalized_text, json.dumps(list(pp.urls))])
    print(f"preprocessed {len(split)} posts -> {opts['output']}")
    return 0


def cmd_build_index(opts: dict) -> int:
    from .evaluation import load_fact_check_corpus
    from .retrieval import build_index

    corpus = load_fact_check_corpus(_exists(opts["corpus"], "corpus"))
    index = build_index(corpus, path=opts["index"])
    digest = hashlib.sha256((Path(opts["index"]) / "manifest.json").read_bytes()).hexdigest()
    print(f"indexed {len(index)} documents")
    if corpus.skipped:
        print(f"skipped {corpus.skipped} malformed record(s)")
    print(f"manifest sha256 {digest}")
    return 0


def cmd_init_encoder(opts: dict) -> int:
    from .encoder import BagOfTokensEncoder, BertEncoder, Tokenizer
    from .evaluation import load_constraint
    from .preprocess import normalize_text

    out = Path(opts["output"])
    if opts.get("pretrained"):
        encoder = BertEncoder.from_pretrained(opts["pretrained"], offline=opts["offline"])
    else:
        split = load_constraint(_exists(opts["texts"], "text file"))
        tokenizer = Tokenizer.train([normalize_text(p.raw_text) for p in split.posts], out / "_vocab",
                                    vocab_size=int(opts["vocab_size"]))
        if opts["encoder_kind"] == "bag":
            encoder = BagOfTokensEncoder(tokenizer, seed=int(opts["seed"]))
        else:
            encoder = BertEncoder.miniature(tokenizer, seed=int(opts["seed"]))
    encoder.save_checkpoint(out)
    print(f"encoder {encoder.name} written to {out}")
    return 0


def _assets(opts: dict, variant: str, encoder, manifest_assets: dict | None = None):
    from .model import VARIANTS
    from .pipeline import FeaturePipeline
    from .retrieval import load_index
    from .sources import ReliabilityMap, SourceFeaturizer, Unshortener, build_description_map

    assets = dict(manifest_assets or {})
    for key in ("index", "reliability", "descriptions", "unshorten_cache"):
        if opts.get(key):
            assets[key] = str(opts[key])
    comps = VARIANTS[variant]
    index = featurizer = None
    if "R" in comps:
        if not assets.get("index"):
            raise UsageError(f"variant {variant} needs --index")
        index = load_index(_exists(assets["index"], "index directory"))
    if "S" in comps:
        for key in ("reliability", "descriptions"):
            if not assets.get(key):
                raise UsageError(f"variant {variant} needs --{key}")
        cache = assets.get("unshorten_cache") or str(cache_root() / "unshorten.jsonl")
        assets["unshorten_cache"] = cache
        featurizer = SourceFeaturizer(
            ReliabilityMap.from_csv(_exists(assets["reliability"], "reliability map")),
            build_description_map(_exists(assets["descriptions"], "description source")),
            encoder,
            Unshortener(cache, offline=opts["offline"]),
            missing_description=opts["missing_description"],
        )
    return FeaturePipeline(encoder, index, featurizer), assets


def cmd_train(opts: dict) -> int:
    from .encoder import load_encoder
    from .evaluation import load_constraint
    from .model import TrainConfig, dataset_digest, save_model, train, variant_dim

    _require(opts, "train", "encoder", "output")
    variant = opts["variant"]
    variant_dim(variant)
    split = load_constraint(_exists(opts["train"], "training split"), "train")
    encoder = load_encoder(_exists(opts["encoder"], "encoder checkpoint"))
    pipeline, assets = _assets(opts, variant, encoder)
    inputs = pipeline.prepare(split.posts, variant)
    out = Path(opts["output"])
    for seed in _seeds(opts["seeds"]):
        config = TrainConfig(
            variant=variant, seed=seed, epochs=int(opts["epochs"]), batch_size=int(opts["batch_size"]),
            lr=float(opts["lr"]), head_lr=float(opts["head_lr"]) if opts.get("head_lr") else None,
            freeze_encoder=bool(opts["freeze_encoder"]),
            recompute_fn=not bool(opts["cached_fn"]),
        )
        result = train(inputs, encoder, config)
        target = save_model(result, out / f"{variant}_seed{seed}", extra={
            "dataset": {"path": str(opts["train"]), "sha256": dataset_digest(inputs), "size": len(inputs)},
            "assets": assets,
        })
        print(f"trained {variant} seed {seed} (dim {variant_dim(variant)}) -> {target}")
    return 0


def _load_models(opts: dict):
    from .model import load_model

    dirs = opts.get("models") or []
    if not dirs:
        raise UsageError("missing required option --models")
    models = [load_model(_exists(d, "model directory")) for d in dirs]
    variants = {m.variant for m in models}
    if len(variants) > 1:
        raise UsageError(f"models mix variants {sorted(variants)}")
    return models


def _predict(opts: dict):
    from .evaluation import load_constraint
    from .model import ensemble_predict

    models = _load_models(opts)
    split = load_constraint(_exists(opts["split"], "split file"))
    pipeline, _ = _assets(opts, models[0].variant, models[0].encoder, models[0].manifest.get("assets"))
    # each member re-encodes with its own fine-tuned encoder
    per_model_inputs = []
    for m in models:
        pipeline.encoder = m.encoder
        if pipeline.featurizer is not None:
            pipeline.featurizer.encoder = m.encoder
            pipeline.featurizer._desc_cache.clear()
        per_model_inputs.append(pipeline.prepare(split.posts, m.variant))
    if len(models) == 1:
        results = models[0].predict(per_model_inputs[0])
    else:
        results = _ensemble(models, per_model_inputs)
    return models, split, results


def _ensemble(models, per_model_inputs):
    from .model import Prediction, average_probabilities

    probs = average_probabilities([m.predict_proba(x) for m, x in zip(models, per_model_inputs)])
    return [Prediction.from_probs(x.post_id, pf, pr) for x, (pf, pr) in zip(per_model_inputs[0], probs)]


def cmd_predict(opts: dict) -> int:
    from .model import write_predictions

    _require(opts, "split", "output")
    _, _, preds = _predict(opts)
    write_predictions(preds, opts["output"])
    print(f"wrote {len(preds)} predictions -> {opts['output']}")
    return 0


def cmd_evaluate(opts: dict) -> int:
    from .evaluation import compute_metrics, link_breakdown, write_report
    from .model import write_predictions

    _require(opts, "split", "report")
    models, split, preds = _predict(opts)
    report = compute_metrics(preds, split.golds)
    breakdown = link_breakdown(preds, split.golds, split.posts)
    extra = {
        "models": [str(d) for d in opts["models"]],
        "variant": models[0].variant,
        "ensemble": len(models) > 1,
        "seeds": [m.seed for m in models],
    }
    write_report(opts["report"], report, breakdown, extra)
    if opts.get("predictions"):
        write_predictions(preds, opts["predictions"])
    r = report.rounded()
    print(f"accuracy {r['accuracy']:.2f}  weighted F1 {r['weighted']['f1']:.2f}  -> {opts['report']}")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "build-index": cmd_build_index,
    "init-encoder": cmd_init_encoder,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file; its values win over flags")
    common.add_argument("--offline", action="store_true", default=None, help="no network (default)")
    common.add_argument("--online", action="store_true", default=None, help="allow network access")
    common.add_argument("--variant", choices=["C", "PK", "C_PK", "C_S", "C_PK_S"])
    common.add_argument("--seeds", help="comma-separated seeds, e.g. 42,0,36")
    common.add_argument("--seed", type=int, help="single seed (init-encoder)")
    common.add_argument("-v", "--verbose", action="store_true", default=None)

    assets = argparse.ArgumentParser(add_help=False)
    assets.add_argument("--index", help="index directory from build-index")
    assets.add_argument("--reliability", help="CSV with columns domain,tag")
    assets.add_argument("--descriptions", help="JSON lines with title,text")
    assets.add_argument("--unshorten-cache", dest="unshorten_cache", help="JSON-lines redirect cache")
    assets.add_argument("--missing-description", dest="missing_description", choices=["zero", "empty"])

    parser = argparse.ArgumentParser(prog="ecol", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="normalize a CONSTRAINT split")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("build-index", parents=[common], help="index a fact-check corpus")
    p.add_argument("corpus")
    p.add_argument("index")

    p = sub.add_parser("init-encoder", parents=[common], help="write an encoder checkpoint")
    p.add_argument("output")
    p.add_argument("--texts", help="CONSTRAINT split used to learn the vocabulary")
    p.add_argument("--pretrained", help="BERT-family checkpoint name or path")
    p.add_argument("--kind", dest="encoder_kind", choices=["mini-bert", "bag"])
    p.add_argument("--vocab-size", dest="vocab_size", type=int)

    p = sub.add_parser("train", parents=[common, assets], help="train one model per seed")
    p.add_argument("--train", required=True)
    p.add_argument("--encoder", required=True, help="encoder checkpoint directory")
    p.add_argument("--output", required=True, help="parent directory for model dirs")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--head-lr", dest="head_lr", type=float, help="classifier-layer learning rate")
    p.add_argument("--freeze-encoder", dest="freeze_encoder", action="store_true", default=None)
    p.add_argument("--cached-fn", dest="cached_fn", action="store_true", default=None,
                   help="no gradients through retrieved-document encodings")

    for name, helptext in (("predict", "write predictions CSV"), ("evaluate", "write a metrics report")):
        p = sub.add_parser(name, parents=[common, assets], help=helptext)
        p.add_argument("--models", nargs="+", required=True)
        p.add_argument("--split", required=True)
        if name == "predict":
            p.add_argument("--output", required=True)
        else:
            p.add_argument("--report", required=True)
            p.add_argument("--predictions", help="also write the predictions CSV")
    return parser


def main(argv=None) -> int:
    from .encoder import CheckpointError
    from .evaluation import DataError
    from .model import ModelError, TrainingError
    from .retrieval import RetrievalIndexError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
    except (UsageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[opts["command"]](opts)
    except (UsageError, DataError, ModelError, RetrievalIndexError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
