"""Pipeline orchestration as composable subcommands.

Stages hand off through files in a run directory so any stage can be
replaced (notably: external document embeddings can stand in for the
trained encoder via --from-file). Every subcommand serializes the resolved
configuration to config.json; rerunning with the same config and seed
reproduces every artifact byte for byte. Exit codes: 0 success, 2
input/config error, 3 numerical abort.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from topicmine import corpus as corpusmod
from topicmine import encoder as encodermod
from topicmine import evalmetrics, lda, projection
from topicmine.errors import ConfigError, InputError, NumericalError
from topicmine.fileio import atomic_write_text, read_utf8, sha256_file

log = logging.getLogger(__name__)

ARTIFACTS = [
    "config.json",
    "corpus.json",
    "vocab.tsv",
    "encoder.params",
    "mlm_loss.csv",
    "doc_vectors.txt",
    "token_vectors.txt",
    "perplexity.csv",
    "selection.json",
    "corpus_senses.json",
    "fit_info.json",
    "model.txt",
    "topics.json",
    "coherence.json",
    "points.csv",
    "points.svg",
]


@dataclass
class RunConfig:
    input: str | None = None
    stopwords: str | None = None  # None -> bundled list; "none" -> disabled
    min_count: int = 2
    seed: int = 0
    out: str = "run"
    # encoder
    mask_rate: float = 0.15
    strategy: str = "pure-mask"
    steps: int = 200
    batch_size: int = 16
    learning_rate: float = 0.05
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    from_file: str | None = None
    # lda
    k: int | None = None  # None -> use the sweep's K*
    kmin: int = 1
    kmax: int = 14
    alpha: float | None = None  # None -> 50/K
    beta: float = 0.01
    iters: int = 200
    burn_in: int = 100
    average: bool = False
    fold_in_iters: int = 50
    split_ratio: float = 0.8
    senses: int | None = None
    # evaluation
    top_t: int = 10
    window: str = "slide:10"  # c_v co-occurrence window
    umass_window: str = "doc"
    # projection
    lam: float = 1.0
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    tsne_learning_rate: float = 200.0
    svg: bool = False
    jobs: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ConfigError(f"mask_rate must be in [0,1], got {self.mask_rate}")
        if self.strategy not in encodermod.STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.min_count < 1:
            raise ConfigError(f"min_count must be >= 1, got {self.min_count}")
        if not 1 <= self.kmin <= self.kmax:
            raise ConfigError(f"need 1 <= kmin <= kmax, got {self.kmin}..{self.kmax}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must be in (0,1), got {self.split_ratio}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        evalmetrics.parse_window_mode(self.window)
        evalmetrics.parse_window_mode(self.umass_window)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by --config file values, overridden by flags."""
    cfg = RunConfig()
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(read_utf8(args.config))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: bad config JSON: {exc.msg}") from exc
        unknown = set(loaded) - valid
        if unknown:
            raise ConfigError(f"{args.config}: unknown config keys {sorted(unknown)}")
        for key, value in loaded.items():
            setattr(cfg, key, value)
    for name in valid:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    return cfg


def _write_config(cfg: RunConfig) -> None:
    payload = dataclasses.asdict(cfg)
    atomic_write_text(
        os.path.join(cfg.out, "config.json"),
        json.dumps(payload, sort_keys=True, indent=2) + "\n",
    )


def _path(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.out, name)


def _load_corpus_for(cfg: RunConfig, prefer_senses: bool = False):
    if prefer_senses:
        info_path = _path(cfg, "fit_info.json")
        if os.path.exists(info_path):
            info = json.loads(read_utf8(info_path))
            return corpusmod.load_corpus(_path(cfg, info["corpus"]))
    path = _path(cfg, "corpus.json")
    if not os.path.exists(path):
        raise InputError(f"{path} not found; run the preprocess stage first")
    return corpusmod.load_corpus(path)


def _resolve_stopwords(cfg: RunConfig) -> set[str]:
    if cfg.stopwords is None:
        return corpusmod.load_stopwords(corpusmod.default_stopwords_path())
    if cfg.stopwords.lower() == "none":
        return set()
    return corpusmod.load_stopwords(cfg.stopwords)


def cmd_preprocess(cfg: RunConfig) -> None:
    if not cfg.input:
        raise ConfigError("preprocess requires --input")
    pairs = corpusmod.read_documents(cfg.input)
    corpus = corpusmod.preprocess_documents(
        pairs, stopwords=_resolve_stopwords(cfg), min_count=cfg.min_count
    )
    corpusmod.save_corpus(corpus, _path(cfg, "corpus.json"))
    corpusmod.write_vocabulary_tsv(corpus.vocab, _path(cfg, "vocab.tsv"))
    _write_config(cfg)
    log.info(
        "preprocessed %d documents, vocabulary %d", corpus.M, corpus.vocab.size
    )


def cmd_train_mlm(cfg: RunConfig) -> None:
    corpus = _load_corpus_for(cfg)
    train_cfg = encodermod.TrainConfig(
        mask_rate=cfg.mask_rate,
        strategy=cfg.strategy,
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed,
    )
    enc_cfg = encodermod.EncoderConfig(
        dim=cfg.dim, n_layers=cfg.n_layers, n_heads=cfg.n_heads, max_len=cfg.max_len
    )
    result = encodermod.train(corpus, train_cfg, enc_cfg)
    encodermod.save_params(result.params, _path(cfg, "encoder.params"))
    lines = ["step,loss"]
    lines += [f"{i},{v:.6f}" for i, v in enumerate(result.loss_history)]
    atomic_write_text(_path(cfg, "mlm_loss.csv"), "\n".join(lines) + "\n")
    _write_config(cfg)
    if len(result.loss_history):
        log.info(
            "trained %d steps, loss %.4f -> %.4f",
            cfg.steps, result.loss_history[0], result.loss_history[-1],
        )


def cmd_embed(cfg: RunConfig) -> None:
    corpus = _load_corpus_for(cfg)
    if cfg.from_file:
        embeddings = encodermod.import_embeddings(cfg.from_file, corpus=corpus)
        encodermod.export_embeddings(embeddings, _path(cfg, "doc_vectors.txt"))
        log.info("ingested %d external document vectors", embeddings.M)
    else:
        params_path = _path(cfg, "encoder.params")
        if not os.path.exists(params_path):
            raise InputError(f"{params_path} not found; run train-mlm first")
        params = encodermod.load_params(params_path)
        embeddings = encodermod.embed_corpus(params, corpus)
        encodermod.export_embeddings(
            embeddings, _path(cfg, "doc_vectors.txt"), _path(cfg, "token_vectors.txt")
        )
        log.info("embedded %d documents (dim %d)", embeddings.M, embeddings.dim)
    _write_config(cfg)


def _lda_config(cfg: RunConfig, k: int) -> lda.LdaConfig:
    return lda.LdaConfig(
        K=k,
        alpha=cfg.alpha,
        beta=cfg.beta,
        iterations=cfg.iters,
        burn_in=cfg.burn_in,
        seed=cfg.seed,
        average_after_burn_in=cfg.average,
    )


def _chosen_k(cfg: RunConfig) -> int:
    if cfg.k is not None:
        return cfg.k
    selection_path = _path(cfg, "selection.json")
    if os.path.exists(selection_path):
        return int(json.loads(read_utf8(selection_path))["k_star"])
    raise ConfigError("no --k given and no selection.json found; run sweep-k first")


def cmd_fit(cfg: RunConfig) -> None:
    corpus = _load_corpus_for(cfg)
    fit_corpus = corpus
    corpus_name = "corpus.json"
    if cfg.senses:
        token_path = _path(cfg, "token_vectors.txt")
        if not os.path.exists(token_path):
            raise InputError(
                f"{token_path} not found; sense refinement needs trained token vectors"
            )
        embeddings = encodermod.import_embeddings(
            _path(cfg, "doc_vectors.txt"), token_path, corpus=corpus
        )
        clustering = encodermod.cluster_tokens(embeddings, cfg.senses, seed=cfg.seed)
        fit_corpus = encodermod.sense_corpus(corpus, clustering)
        corpus_name = "corpus_senses.json"
        corpusmod.save_corpus(fit_corpus, _path(cfg, corpus_name))
        log.info("refined %d tokens into %d senses", corpus.vocab.size, cfg.senses)
    k = _chosen_k(cfg)
    model = lda.fit(fit_corpus, _lda_config(cfg, k))
    lda.save_model(model, _path(cfg, "model.txt"))
    atomic_write_text(
        _path(cfg, "fit_info.json"),
        json.dumps({"corpus": corpus_name, "k": k}, sort_keys=True) + "\n",
    )
    report = lda.topic_report(model, top_t=cfg.top_t)
    atomic_write_text(
        _path(cfg, "topics.json"), json.dumps(report, sort_keys=True, indent=2) + "\n"
    )
    _write_config(cfg)
    log.info("fitted K=%d on %d documents", k, fit_corpus.M)


def cmd_sweep_k(cfg: RunConfig) -> None:
    corpus = _load_corpus_for(cfg)
    template = _lda_config(cfg, max(cfg.kmin, 1))
    result = lda.select_topic_count(
        corpus,
        cfg.kmin,
        cfg.kmax,
        template,
        split_ratio=cfg.split_ratio,
        fold_in_iterations=cfg.fold_in_iters,
        jobs=cfg.jobs,
    )
    evalmetrics.write_sweep_csv(result.rows(), _path(cfg, "perplexity.csv"))
    atomic_write_text(
        _path(cfg, "selection.json"),
        json.dumps(
            {
                "k_star": result.k_star,
                "ks": result.ks,
                "perplexities": result.perplexities,
            },
            sort_keys=True,
        )
        + "\n",
    )
    _write_config(cfg)
    log.info("sweep K=%d..%d selected K*=%d", cfg.kmin, cfg.kmax, result.k_star)


def _load_model_for(cfg: RunConfig):
    corpus = _load_corpus_for(cfg, prefer_senses=True)
    model_path = _path(cfg, "model.txt")
    if not os.path.exists(model_path):
        raise InputError(f"{model_path} not found; run fit first")
    model = lda.load_model(model_path, vocab=corpus.vocab)
    if model.M != corpus.M:
        raise InputError(
            f"model was fitted on {model.M} documents but corpus has {corpus.M}"
        )
    return corpus, model


def cmd_coherence(cfg: RunConfig) -> None:
    corpus, model = _load_model_for(cfg)
    report = evalmetrics.coherence_report(
        model,
        corpus,
        top_t=cfg.top_t,
        umass_window=cfg.umass_window,
        cv_window=cfg.window,
    )
    atomic_write_text(
        _path(cfg, "coherence.json"),
        json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n",
    )
    _write_config(cfg)
    log.info(
        "coherence over %d topics: c_v_mean %.4f, u_mass_mean %.4f",
        len(report.topics),
        report.aggregate["c_v_mean"],
        report.aggregate["u_mass_mean"],
    )


def cmd_tsne(cfg: RunConfig) -> None:
    corpus, model = _load_model_for(cfg)
    doc_path = _path(cfg, "doc_vectors.txt")
    if not os.path.exists(doc_path):
        raise InputError(f"{doc_path} not found; run embed first")
    embeddings = encodermod.import_embeddings(doc_path, corpus=corpus)
    theta = lda.estimate_theta(model)
    fused = projection.fuse_vectors(embeddings, theta, lam=cfg.lam)
    settings = projection.TsneSettings(
        perplexity=cfg.tsne_perplexity,
        iterations=cfg.tsne_iters,
        learning_rate=cfg.tsne_learning_rate,
        seed=cfg.seed,
    )
    proj = projection.tsne(
        projection.fusion_matrix(fused), settings, theta=theta,
        doc_ids=list(corpus.doc_ids),
    )
    projection.write_points_csv(proj, _path(cfg, "points.csv"))
    if cfg.svg:
        projection.render_svg(proj, _path(cfg, "points.svg"))
    _write_config(cfg)
    labels = proj.dominant_topic
    if len(np.unique(labels)) >= 2:
        score = projection.silhouette(proj.points, labels)
        log.info("projected %d documents; silhouette %.3f", corpus.M, score)
    else:
        log.info("projected %d documents (single dominant topic)", corpus.M)


def cmd_pipeline(cfg: RunConfig) -> None:
    cmd_preprocess(cfg)
    cmd_train_mlm(cfg)
    cmd_embed(cfg)
    cmd_sweep_k(cfg)
    cmd_fit(cfg)
    cmd_coherence(cfg)
    cmd_tsne(cfg)
    manifest = {
        "artifacts": {
            name: sha256_file(_path(cfg, name))
            for name in ARTIFACTS
            if os.path.exists(_path(cfg, name))
        }
    }
    atomic_write_text(
        _path(cfg, "manifest.json"), json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    log.info("pipeline complete; %d artifacts in %s", len(manifest["artifacts"]), cfg.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicmine",
        description="Topic mining: preprocess, MLM embeddings, LDA, coherence, t-SNE.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", help="run directory (default: run)")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        return p

    p = add("preprocess", cmd_preprocess, "tokenize, filter, and encode a corpus")
    p.add_argument("--input", help="JSONL ({'id','text'} per line) or plain text")
    p.add_argument("--stopwords", help="stopword file; 'none' disables removal")
    p.add_argument("--min-count", dest="min_count", type=int)

    p = add("train-mlm", cmd_train_mlm, "train the masked-token encoder")
    p.add_argument("--mask-rate", dest="mask_rate", type=float)
    p.add_argument("--strategy", choices=list(encodermod.STRATEGIES))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)

    p = add("embed", cmd_embed, "write contextual token/document vectors")
    p.add_argument("--from-file", dest="from_file",
                   help="ingest external document vectors instead of encoding")

    p = add("fit", cmd_fit, "fit LDA at a fixed K (or the sweep's K*)")
    p.add_argument("--k", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--top-t", dest="top_t", type=int)
    p.add_argument("--senses", type=int,
                   help="cluster token vectors into this many senses before LDA")

    p = add("sweep-k", cmd_sweep_k, "pick the topic count by held-out perplexity")
    p.add_argument("--kmin", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--fold-in-iters", dest="fold_in_iters", type=int)

    p = add("coherence", cmd_coherence, "score fitted topics with u_mass and c_v")
    p.add_argument("--top-t", dest="top_t", type=int)
    p.add_argument("--window", help="c_v window: 'doc' or 'slide:N'")
    p.add_argument("--umass-window", dest="umass_window", help="u_mass window")

    p = add("tsne", cmd_tsne, "project fused document vectors to 2D")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="weight of the topic block in fused vectors")
    p.add_argument("--tsne-perplexity", dest="tsne_perplexity", type=float)
    p.add_argument("--tsne-iters", dest="tsne_iters", type=int)
    p.add_argument("--svg", action="store_const", const=True, default=None)

    p = add("pipeline", cmd_pipeline, "run every stage and write a manifest")
    for flag, kw in [
        ("--input", {}),
        ("--stopwords", {}),
        ("--min-count", {"dest": "min_count", "type": int}),
        ("--mask-rate", {"dest": "mask_rate", "type": float}),
        ("--strategy", {"choices": list(encodermod.STRATEGIES)}),
        ("--steps", {"type": int}),
        ("--from-file", {"dest": "from_file"}),
        ("--k", {"type": int}),
        ("--kmin", {"type": int}),
        ("--kmax", {"type": int}),
        ("--alpha", {"type": float}),
        ("--beta", {"type": float}),
        ("--iters", {"type": int}),
        ("--burn-in", {"dest": "burn_in", "type": int}),
        ("--top-t", {"dest": "top_t", "type": int}),
        ("--window", {}),
        ("--lambda", {"dest": "lam", "type": float}),
        ("--tsne-perplexity", {"dest": "tsne_perplexity", "type": float}),
        ("--tsne-iters", {"dest": "tsne_iters", "type": int}),
        ("--svg", {"action": "store_const", "const": True, "default": None}),
    ]:
        p.add_argument(flag, **kw)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg.out, exist_ok=True)
        args.func(cfg)
    except (InputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
