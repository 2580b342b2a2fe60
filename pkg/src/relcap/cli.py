"""Command-line entry point: ``relcap <subcommand> ...``.

Exit status is 0 on success, 1 for invalid input or configuration, and 2
when training or a gradient check hits a numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .bleu import bleu
from .config import ConfigError, load as load_config
from .corpus import CorpusError, SyntheticSpec, Vocabulary, build_vocab, corpus_captions, generate_synthetic, load_corpus, save_corpus
from .decoding import caption_records
from .experiments import contextual_spec
from .geometry import GeometryError
from .gradcheck import check_gradients
from .optim import NumericalError
from .relations import RelClsConfig, RelationClassifier, accuracy, pair_examples, train_relation_classifier

log = logging.getLogger("relcap")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _config(args):
    return load_config(args.config, seed=args.seed, level=getattr(args, "level", None), beam=getattr(args, "beam", None))


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def cmd_gen_synthetic(args) -> int:
    spec = contextual_spec() if args.contextual else SyntheticSpec()
    spec.feature_dim = args.feature_dim
    records = generate_synthetic(args.n, args.seed or 0, spec)
    save_corpus(records, _out(args, "corpus.jsonl"))
    return EXIT_OK


def cmd_build_vocab(args) -> int:
    cfg = _config(args)
    vocab = build_vocab(corpus_captions(load_corpus(args.corpus, cfg.k_max)), args.min_count or cfg.min_count)
    vocab.save(_out(args, "vocab.txt"))
    print(f"{len(vocab)} tokens")
    return EXIT_OK


def cmd_fit_gmm(args) -> int:
    from .model import fit_spatial_bins

    cfg = _config(args)
    gmm = fit_spatial_bins(load_corpus(args.corpus, cfg.k_max), cfg)
    arrays = gmm.to_arrays()
    checkpoint.save(_out(args, "gmm.ckpt"), arrays, {k: "gmm" for k in arrays}, {"m": gmm.m, "final_loglik": gmm.loglik_trace[-1]})
    print(f"m={gmm.m} iterations={len(gmm.loglik_trace)} mean_loglik={gmm.loglik_trace[-1]:.6f}")
    return EXIT_OK


def cmd_train_relcls(args) -> int:
    from .model import relation_vocab_of

    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.k_max)
    vocab = relation_vocab_of(records)
    x, y = pair_examples(records, vocab)
    rc = RelClsConfig(cfg.relcls_hidden, cfg.relcls_epochs, cfg.relcls_lr, cfg.relcls_batch, cfg.seed)
    clf, history = train_relation_classifier(x, y, vocab.n_classes, rc)
    arrays = clf.to_arrays()
    meta = {"relations": vocab.names, "feature_dim": x.shape[1] // 3, "hidden": cfg.relcls_hidden}
    checkpoint.save(_out(args, "relcls.ckpt"), arrays, {k: "relcls" for k in arrays}, meta)
    print(f"train_loss={history[-1]:.6f} train_accuracy={accuracy(clf, x, y):.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.k_max)
    if not records:
        raise CorpusError(f"{args.corpus}: no records to train on")
    val = load_corpus(args.val, cfg.k_max) if args.val else None
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    result = train(records, cfg, val_records=val, vocab=vocab, log_path=args.log)
    result.model.save(_out(args, "model.ckpt"))
    last = result.history[-1]
    print(f"epochs={len(result.history)} train_loss={last.train_loss:.6f} val_loss={last.val_loss:.6f}")
    return EXIT_OK


def cmd_caption(args) -> int:
    from .model import CaptionModel

    model = CaptionModel.load(args.checkpoint)
    records = load_corpus(args.corpus, model.cfg.k_max)
    beam = args.beam or model.cfg.beam
    caps = caption_records(model, records, beam=beam, max_len=args.max_len)
    lines = "".join(f"{r.image_id}\t{' '.join(c)}\n" for r, c in zip(records, caps))
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def read_captions(path: str | Path) -> dict[str, list[list[str]]]:
    """``image_id<TAB>tokens`` lines (repeated ids allowed) or a corpus file."""
    path = Path(path)
    if path.suffix == ".jsonl":
        return {r.image_id: [list(c) for c in r.captions] for r in load_corpus(path)}
    out: dict[str, list[list[str]]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise CorpusError(f"{path}:{lineno}: expected image_id<TAB>caption")
        image_id, text = line.split("\t", 1)
        out.setdefault(image_id, []).append(text.lower().split())
    return out


def cmd_evaluate(args) -> int:
    cands = read_captions(args.candidates)
    refs = read_captions(args.references)
    missing = [k for k in cands if k not in refs]
    if missing:
        raise CorpusError(f"no references for {len(missing)} image(s), e.g. {missing[0]!r}")
    ids = list(cands)
    scores = bleu([cands[k][0] for k in ids], [refs[k] for k in ids])
    for n, s in enumerate(scores, start=1):
        print(f"BLEU@{n}\t{s:.10f}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .train import build_model

    cfg = load_config(args.config, seed=args.seed, level=args.level).replace(
        d_model=8, n_heads=2, gcn_layers=2, n_layers=1, d_ff=16, d_rel=4, gmm_m=2, min_count=1, relcls_hidden=8, relcls_epochs=2
    )
    spec = SyntheticSpec(feature_dim=6, distractors=(0, 1))
    records = generate_synthetic(12, cfg.seed, spec)
    model = build_model(records, cfg)
    units = model.build_units(records)
    batch = model.make_batch(units[:3], records)
    params = list(model.params().values())
    rng = np.random.default_rng(cfg.seed)
    # the zero-initialised output layer would leave every upstream gradient at 0
    for p in params:
        p.data += rng.normal(0.0, 0.1, p.shape)
    report = check_gradients(lambda: model.batch_loss(batch)[0], params, max_entries=args.entries, rng=rng, floor=1e-5, zero_tol=1e-9)
    worst = max(report.values())
    for name, err in sorted(report.items()):
        print(f"{name}\t{err:.3e}")
    print(f"max_relative_error\t{worst:.3e}")
    if not worst < args.tol:
        raise NumericalError(f"gradient check failed: {worst:.3e} >= {args.tol:g}")
    return EXIT_OK


def cmd_dump_graph(args) -> int:
    from .corpus import group_contexts
    from .graph import build_object_graph, build_hierarchical_graph, build_image_graph

    cfg = _config(args)
    records = load_corpus(args.corpus, cfg.k_max)
    if not 0 <= args.index < len(records):
        raise CorpusError(f"index {args.index} out of range for {len(records)} records")
    if cfg.level == "object":
        graph = build_object_graph(records[args.index], None, cfg.k_max)
    else:
        members = next(m for m in group_contexts(records, cfg.context_size) if args.index in m)
        recs = [records[i] for i in members]
        if cfg.level == "image":
            graph = build_image_graph(recs, cfg.k_max)
        else:
            graph = build_hierarchical_graph(recs, None, cfg.hierarchy_mode, cfg.scene_nodes, cfg.k_max)
    text = graph.dump()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--level", choices=("object", "image", "hierarchical"))
    common.add_argument("--beam", type=int)
    common.add_argument("--out", help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="relcap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic scene corpus")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--contextual", action="store_true", help="superclass-dependent predicate words")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", parents=[common], help="build a vocabulary from corpus captions")
    p.add_argument("corpus")
    p.add_argument("--min-count", type=int)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("fit-gmm", parents=[common], help="fit spatial-feature bins")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("train-relcls", parents=[common], help="train the pairwise relation classifier")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_train_relcls)

    p = sub.add_parser("train", parents=[common], help="train the captioner")
    p.add_argument("corpus")
    p.add_argument("--val", help="validation corpus (default: split off val_fraction)")
    p.add_argument("--vocab", help="vocabulary file (default: built from corpus)")
    p.add_argument("--log", help="metrics log path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", parents=[common], help="decode captions for a corpus")
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--max-len", type=int)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", parents=[common], help="corpus BLEU@1..4")
    p.add_argument("candidates", help="image_id<TAB>caption file")
    p.add_argument("references", help="image_id<TAB>caption file or corpus .jsonl")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grad-check", parents=[common], help="finite-difference check of the end-to-end loss")
    p.add_argument("--entries", type=int, default=6, help="probed entries per parameter")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("dump-graph", parents=[common], help="print the encoder graph around one record")
    p.add_argument("corpus")
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_dump_graph)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, CorpusError, GeometryError, checkpoint.CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
