"""Command-line entry point: ``hyperdense <command> [options]``.

Data goes to stdout, logs to stderr.  Exit status: 0 success, 1 usage
error, 2 data error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpus as corpus_io
from . import diagnostics, retrieval, training, verify
from .encoder import (
    CheckpointError,
    EncoderConfig,
    encode_batch,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .manifold import GeometryError
from .vocab import Vocabulary, pad_batch

log = logging.getLogger("hyperdense")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class CliConfig:
    """Settings shared by all commands; flags override the JSON config file."""

    kappa: float = 1.0
    pool: str = "oem"
    p: float = 2.0
    k: int = 5
    tau: float = training.DEFAULT_TAU
    seed: int = 0
    json: bool = False
    # model shape used by `train` when no initial checkpoint is given
    dim: int = 64
    layers: int = 2
    heads: int = 4
    head_dim: int = 16
    ffn: int = 256
    max_len: int = 128
    vocab_size: int = 8192
    # optimization
    stage: str = "supervised"
    steps: int = 200
    lr: float = 0.05
    batch_size: int = 16
    momentum: float = 0.9
    similarity: str = "geodesic"
    # diagnostics
    neighbors: int = diagnostics.DEFAULT_GRAPH_K
    alpha: float = diagnostics.DEFAULT_ALPHA

    def validate(self) -> "CliConfig":
        if self.pool not in ("oem", "einstein", "mean", "cls"):
            raise UsageError(f"--pool must be oem, einstein, mean or cls, got {self.pool!r}")
        if not self.kappa > 0:
            raise UsageError("--kappa must be positive")
        if self.p < 0:
            raise UsageError("--p must be nonnegative")
        if self.k <= 0:
            raise UsageError("--k must be a positive integer")
        if not self.tau > 0:
            raise UsageError("--tau must be positive")
        if self.stage not in training.STAGES:
            raise UsageError(f"--stage must be one of {training.STAGES}")
        if self.similarity not in training.SIMILARITY_MODES:
            raise UsageError(f"--similarity must be one of {training.SIMILARITY_MODES}")
        if self.neighbors <= 0:
            raise UsageError("--neighbors must be positive")
        if not 0 <= self.alpha < 1:
            raise UsageError("--alpha must lie in [0, 1)")
        for name in ("dim", "layers", "heads", "head_dim", "ffn", "max_len", "vocab_size",
                     "steps", "batch_size"):
            if getattr(self, name) < (0 if name in ("layers", "steps") else 1):
                raise UsageError(f"--{name.replace('_', '-')} is out of range")
        return self


_CONFIG_FIELDS = {f.name: f for f in fields(CliConfig)}
_POOL_NAMES = {"oem": "oem", "einstein": "einstein", "mean": "mean", "cls": "cls"}


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = sorted(set(raw) - set(_CONFIG_FIELDS))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    out = {}
    for key, value in raw.items():
        kind = _CONFIG_FIELDS[key].type
        kind = {"float": float, "int": int, "bool": bool, "str": str}[kind]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise UsageError(f"config key {key!r} must be {kind.__name__}")
        out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> CliConfig:
    """Defaults, then the config file, then explicit flags."""
    cfg = CliConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **load_config_file(args.config))
    flags = {name: getattr(args, name) for name in _CONFIG_FIELDS
             if getattr(args, name, None) is not None}
    return replace(cfg, **flags).validate()


# -- argument parsing -----------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("shared settings")
    g.add_argument("--config", help="JSON file of settings (flags take precedence)")
    g.add_argument("--kappa", type=float, help="curvature magnitude (default 1.0)")
    g.add_argument("--pool", choices=sorted(_POOL_NAMES), help="pooling operator (default oem)")
    g.add_argument("--p", type=float, help="OEM radial exponent (default 2.0)")
    g.add_argument("--k", type=int, help="number of results (default 5)")
    g.add_argument("--tau", type=float, help="contrastive temperature (default 0.05)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--json", action="store_true", default=None, help="machine-readable output")
    g.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")


def _model_inputs(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--checkpoint", required=required, help="model checkpoint (.ckpt)")
    p.add_argument("--vocab", required=required, help="vocabulary file, one token per line")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hyperdense", description="Hyperbolic dense retrieval toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", help="run the randomized bound-certification suites")
    _common(p)
    p.add_argument("--cases", type=int, default=verify.DEFAULT_CASES, help="random cases per suite")
    p.add_argument("--inject-fault", choices=verify.FAULTS, help=argparse.SUPPRESS)

    p = sub.add_parser("embed", help="embed a JSON-lines corpus into an .hvec file")
    _common(p)
    _model_inputs(p)
    p.add_argument("--corpus", required=True, help='JSON-lines {"id", "text"}')
    p.add_argument("--out", required=True, help="output .hvec file")
    p.add_argument("--batch", type=int, default=64, help="sequences per forward pass")

    p = sub.add_parser("index", help="build a search index from an .hvec file")
    _common(p)
    p.add_argument("--embeddings", required=True, help="input .hvec file")
    p.add_argument("--out", required=True, help="output .hidx file")

    p = sub.add_parser("search", help="top-k geodesic search")
    _common(p)
    _model_inputs(p, required=False)
    p.add_argument("--index", required=True, help=".hidx file")
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--query", help="query text (needs --checkpoint and --vocab)")
    q.add_argument("--vector", help="query point as comma-separated coordinates, time first")

    p = sub.add_parser("rag-prompt", help="retrieve and assemble a RAG prompt")
    _common(p)
    _model_inputs(p)
    p.add_argument("--index", required=True, help=".hidx file")
    p.add_argument("--corpus", required=True, help='JSON-lines {"id", "text"} holding document texts')
    p.add_argument("--query", required=True, help="question text")

    p = sub.add_parser("train", help="train an encoder on one stage's data")
    _common(p)
    p.add_argument("--stage", choices=training.STAGES, help="objective (default supervised)")
    p.add_argument("--data", required=True, help="JSON-lines training data for the stage")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--vocab", required=True,
                   help="vocabulary file; built from the training data if it does not exist")
    p.add_argument("--init", help="checkpoint to continue from")
    p.add_argument("--trace", help="write the loss trace CSV here")
    for flag, kind in (("--steps", int), ("--lr", float), ("--batch-size", int),
                       ("--momentum", float), ("--dim", int), ("--layers", int), ("--heads", int),
                       ("--head-dim", int), ("--ffn", int), ("--max-len", int),
                       ("--vocab-size", int)):
        p.add_argument(flag, type=kind)
    p.add_argument("--similarity", choices=training.SIMILARITY_MODES)

    p = sub.add_parser("analyze", help="geometry diagnostics")
    asub = p.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    h = asub.add_parser("hierarchy", help="per-level radial depth profile")
    _common(h)
    h.add_argument("--embeddings", required=True, help=".hvec file")
    h.add_argument("--levels", required=True, help='JSON-lines {"id", "level"}')
    h.add_argument("--csv", help="write the per-level table here")
    c = asub.add_parser("curvature", help="Ollivier-Ricci curvature of the kNN graph")
    _common(c)
    c.add_argument("--embeddings", required=True, help=".hvec file")
    c.add_argument("--neighbors", type=int, help="k of the kNN graph (default 10)")
    c.add_argument("--alpha", type=float, help="lazy-walk holding mass (default 0.5)")
    c.add_argument("--metric", choices=diagnostics.GRAPH_METRICS, help="kNN metric")
    c.add_argument("--csv", help="write per-edge curvatures here")
    return parser


# -- helpers --------------------------------------------------------------

def _emit(obj, cfg: CliConfig, text: str):
    if cfg.json:
        sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_model(args, cfg: CliConfig):
    params, model_cfg = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if len(vocab) > model_cfg.vocab_size:
        raise corpus_io.DataError(
            f"vocabulary has {len(vocab)} tokens but the model only {model_cfg.vocab_size}")
    model_cfg = replace(model_cfg, pooling=cfg.pool, p=cfg.p)
    return params, model_cfg, vocab


def _embed_texts(texts: Sequence[str], params, model_cfg: EncoderConfig, vocab: Vocabulary,
                 batch: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(texts), batch):
        seqs = [vocab.encode(t, model_cfg.max_seq_len) for t in texts[start:start + batch]]
        ids, mask = pad_batch(seqs)
        out.append(encode_batch(ids, mask, params, model_cfg))
    return np.concatenate(out, axis=0)


def _query_point(args, cfg: CliConfig, index: retrieval.RetrievalIndex) -> np.ndarray:
    if args.vector is not None:
        try:
            q = np.array([float(t) for t in args.vector.split(",")])
        except ValueError as exc:
            raise UsageError(f"--vector must be comma-separated numbers: {exc}") from exc
        return q
    if not (args.checkpoint and args.vocab):
        raise UsageError("--query needs --checkpoint and --vocab")
    params, model_cfg, vocab = _load_model(args, cfg)
    if model_cfg.kappa != index.kappa:
        raise corpus_io.DataError("model and index curvatures differ")
    return _embed_texts([args.query], params, model_cfg, vocab)[0]


# -- commands -------------------------------------------------------------

def cmd_verify(args, cfg: CliConfig) -> int:
    if args.cases <= 0:
        raise UsageError("--cases must be positive")
    results = verify.run_all(seed=cfg.seed, cases=args.cases, fault=args.inject_fault)
    ok = verify.all_passed(results)
    gating = [r for r in results if r.gating]
    lines = [f"{'suite':<34} {'cases':>7} {'violations':>10} {'max violation':>14}  result"]
    for r in results:
        status = ("PASS" if r.passed else "FAIL") if r.gating else "INFO"
        lines.append(f"{r.name:<34} {r.cases:>7} {r.violations:>10} {r.max_violation:>14.6g}  {status}")
        for note in r.notes:
            lines.append(f"    {note}")
    passed = sum(r.passed for r in gating)
    lines.append(f"{passed}/{len(gating)} suites passed")
    for r in results:
        if r.gating and not r.passed and r.counterexample is not None:
            lines.append(f"counterexample for {r.name}: {json.dumps(r.counterexample)}")
    _emit({"passed": ok, "suites": [r.to_dict() for r in results],
           "summary": {"passed": passed, "total": len(gating)}}, cfg, "\n".join(lines))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_embed(args, cfg: CliConfig) -> int:
    params, model_cfg, vocab = _load_model(args, cfg)
    records = corpus_io.read_corpus(args.corpus)
    points = _embed_texts([t for _, t in records], params, model_cfg, vocab, args.batch)
    emb = retrieval.EmbeddingSet([i for i, _ in records], points, model_cfg.kappa)
    retrieval.save_embeddings(emb, args.out)
    log.info("embedded %d documents into %s", len(emb), args.out)
    _emit({"count": len(emb), "dim": emb.dim, "kappa": emb.kappa, "out": args.out}, cfg,
          f"embedded {len(emb)} documents (dim {emb.dim}) -> {args.out}")
    return EXIT_OK


def cmd_index(args, cfg: CliConfig) -> int:
    emb = retrieval.load_embeddings(args.embeddings)
    index = retrieval.build_index(emb)
    retrieval.save_index(index, args.out)
    _emit({"count": len(index), "dim": index.dim, "kappa": index.kappa, "checksum": index.checksum()},
          cfg, f"indexed {len(index)} records (dim {index.dim}) -> {args.out}")
    return EXIT_OK


def cmd_search(args, cfg: CliConfig) -> int:
    index = retrieval.load_index(args.index)
    q = _query_point(args, cfg, index)
    res = retrieval.search(index, q, cfg.k)
    rows = res.rows()
    text = "rank,id,distance\n" + "".join(f"{r},{i},{d!r}\n" for r, i, d in rows)
    _emit({"results": [{"rank": r, "id": i, "distance": d} for r, i, d in rows]}, cfg, text)
    return EXIT_OK


def cmd_rag_prompt(args, cfg: CliConfig) -> int:
    index = retrieval.load_index(args.index)
    texts = dict(corpus_io.read_corpus(args.corpus))
    args.vector = None
    q = _query_point(args, cfg, index)
    res = retrieval.search(index, q, cfg.k)
    try:
        prompt = retrieval.assemble_rag_prompt(args.query, res, texts)
    except KeyError as exc:
        raise corpus_io.DataError(str(exc)) from exc
    _emit({"prompt": prompt, "ids": list(res.ids)}, cfg, prompt + "\n")
    return EXIT_OK


def _training_data(stage: str, path, vocab: Vocabulary | None, cfg: CliConfig, max_len: int):
    if stage == "mlm":
        texts = [t for _, t in corpus_io.read_corpus(path)]
    elif stage == "contrastive":
        recs = corpus_io.read_pairs(path)
        texts = [t for pair in recs for t in pair]
    else:
        recs = corpus_io.read_supervised(path)
        texts = [t for q, p, n in recs for t in [q, *p, *n]]
    if vocab is None:
        vocab = Vocabulary.build(texts, cfg.vocab_size)
    if stage == "mlm":
        data = corpus_io.mlm_from_texts(texts, vocab, max_len)
    elif stage == "contrastive":
        data = corpus_io.pairs_from_texts(recs, vocab, max_len)
    else:
        data = corpus_io.supervised_from_texts(recs, vocab, max_len)
    return data, vocab


def cmd_train(args, cfg: CliConfig) -> int:
    vocab = Vocabulary.load(args.vocab) if Path(args.vocab).exists() else None
    if args.init:
        params, model_cfg = load_checkpoint(args.init)
        model_cfg = replace(model_cfg, pooling=cfg.pool, p=cfg.p)
        max_len = model_cfg.max_seq_len
    else:
        params = None
        max_len = cfg.max_len
    data, vocab = _training_data(cfg.stage, args.data, vocab, cfg, max_len)
    if params is None:
        model_cfg = EncoderConfig(model_dim=cfg.dim, num_layers=cfg.layers, num_heads=cfg.heads,
                                  head_dim=cfg.head_dim, ffn_dim=cfg.ffn, vocab_size=max(len(vocab), 4),
                                  max_seq_len=cfg.max_len, kappa=cfg.kappa, pooling=cfg.pool, p=cfg.p)
        params = init_params(model_cfg, cfg.seed)
    elif len(vocab) > model_cfg.vocab_size:
        raise corpus_io.DataError("vocabulary is larger than the model's embedding table")
    tc = training.TrainConfig(stage=cfg.stage, learning_rate=cfg.lr, steps=cfg.steps,
                              batch_size=cfg.batch_size, seed=cfg.seed, tau=cfg.tau,
                              momentum=cfg.momentum, similarity=cfg.similarity)
    result = training.train(tc, data, params, model_cfg)
    save_checkpoint(result.params, model_cfg, args.out)
    if not Path(args.vocab).exists():
        vocab.save(args.vocab)
    if args.trace:
        training.write_loss_trace(result.trace, args.trace)
    first, last = result.losses[0], result.losses[-1]
    _emit({"stage": cfg.stage, "steps": cfg.steps, "initial_loss": first, "final_loss": last,
           "out": args.out}, cfg, f"{cfg.stage}: loss {first:.6f} -> {last:.6f} after {cfg.steps} steps; "
                                  f"saved {args.out}")
    return EXIT_OK


def cmd_analyze_hierarchy(args, cfg: CliConfig) -> int:
    emb = retrieval.load_embeddings(args.embeddings)
    if emb.euclidean:
        raise corpus_io.DataError("hierarchy analysis needs hyperbolic embeddings")
    levels = corpus_io.read_levels(args.levels)
    missing = [i for i in emb.ids if i not in levels]
    if missing:
        raise corpus_io.DataError(f"no level for id(s): {', '.join(missing[:5])}")
    prof = diagnostics.hierarchy_radius_profile(emb.points, [levels[i] for i in emb.ids], emb.kappa)
    if args.csv:
        diagnostics.write_profile_csv(prof, args.csv)
    lines = ["level,count,mean_depth,mean_poincare,change_pct"]
    for i, l in enumerate(prof.levels):
        change = "" if i == 0 else f"{prof.step_change_pct[i - 1]:.3f}"
        lines.append(f"{l},{prof.counts[i]},{prof.mean_depth[i]:.6f},{prof.mean_poincare[i]:.6f},{change}")
    lines.append(f"total change {prof.total_change_pct:+.2f}%, spearman {prof.spearman:.3f}, "
                 f"verdict {prof.verdict}")
    _emit(prof.to_dict(), cfg, "\n".join(lines))
    return EXIT_OK


def cmd_analyze_curvature(args, cfg: CliConfig) -> int:
    emb = retrieval.load_embeddings(args.embeddings)
    g = diagnostics.build_knn_graph(emb, cfg.neighbors, args.metric)
    report = diagnostics.ollivier_ricci(g, cfg.alpha)
    if args.csv:
        diagnostics.write_curvature_csv(report, g, args.csv)
    summary = report.summary()
    lines = [f"edges {summary['num_edges']}, fraction negative {report.fraction_negative:.4f}, "
             f"mean curvature {summary['mean_curvature']:.4f} (k={g.k}, alpha={cfg.alpha}, {g.metric})",
             "bin_lo,bin_hi,count"]
    for lo, hi, c in zip(report.bin_edges[:-1], report.bin_edges[1:], report.counts):
        lines.append(f"{lo:.2f},{hi:.2f},{c}")
    _emit(summary, cfg, "\n".join(lines))
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify, "embed": cmd_embed, "index": cmd_index, "search": cmd_search,
    "rag-prompt": cmd_rag_prompt, "train": cmd_train,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = resolve_config(args)
        np.random.seed(cfg.seed)
        if args.command == "analyze":
            fn = cmd_analyze_hierarchy if args.analysis == "hierarchy" else cmd_analyze_curvature
        else:
            fn = COMMANDS[args.command]
        return fn(args, cfg)
    except UsageError as exc:
        sys.stderr.write(f"hyperdense: usage error: {exc}\n")
        return EXIT_USAGE
    except (corpus_io.DataError, retrieval.IndexFormatError, CheckpointError, GeometryError,
            training.TrainingError, OSError, ValueError, KeyError, TypeError) as exc:
        sys.stderr.write(f"hyperdense: data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
