"""Command-line experiment driver: ``dhmm {synth,train,label,eval,sweep,replay}``.

Every run writes a JSON manifest next to its primary output recording the
argument vector, working directory, training config, dataset digest, seeds,
output digests, wall-clock time and library version. ``dhmm replay
MANIFEST`` re-executes the recorded command.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import fields, replace

import numpy as np

from . import __version__
from .datasets import (Corpus, CorpusFormatError, ModelFormatError, ToyConfig,
                       generate_toy_dataset, load_corpus, load_model, load_tag_merge_map,
                       read_ocr_dataset, read_pos_corpus, save_corpus, save_model, write_atomic)
from .evaluation import (accuracy, effective_state_count, one_to_one_accuracy, state_histogram)
from .experiments import (alpha_sweep, cross_validate_supervised, decode_all,
                          fit_unsupervised_run, variance_sweep)
from .hmm import NumericalUnderflowError, ObservationSequence
from .kernel import mean_pairwise_diversity
from .learning import EmissionSpec, TrainConfig, TrainingError, fit_supervised

logger = logging.getLogger("dhmm")

FAMILIES = ("gaussian", "categorical", "bernoulli")

# flag name -> TrainConfig field
_TRAIN_FLAGS = {
    "alpha": "alpha",
    "alpha_a": "alpha_a",
    "seed": "seed",
    "max_iter": "max_em_iters",
    "tol": "em_tol",
    "inner_max_iter": "inner_max_iters",
    "inner_tol": "inner_tol",
    "init_step": "init_step",
    "eta": "dirichlet_eta",
    "rho": "rho",
    "pseudocount": "pseudocount",
}


class CLIError(Exception):
    """A user-facing failure; reported as ``error: <message>`` with exit code 1."""


# --------------------------------------------------------------------------
# helpers


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _write(path, text):
    try:
        write_atomic(path, text)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc}") from None


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _sibling(path, suffix):
    """``model.json`` -> ``model<suffix>``; other names get ``suffix`` appended."""
    root, ext = os.path.splitext(path)
    return (root if ext in (".json", ".csv", ".labels") else path) + suffix


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise CLIError(f"{path}: config must be a JSON object")
    return doc


def _train_config(args, doc):
    """Defaults, then the config file's ``train`` section, then explicit flags."""
    section = doc.get("train", {})
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(section) - names
    if unknown:
        raise CLIError(f"unknown train config fields: {sorted(unknown)}")
    values = dict(section)
    for flag, name in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    try:
        return TrainConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid training config: {exc}") from None


def _toy_config(args, doc):
    section = doc.get("toy", doc if "train" not in doc else {})
    try:
        toy = ToyConfig.from_dict(section)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid toy config: {exc}") from None
    overrides = {}
    if getattr(args, "seed", None) is not None and args.command == "synth":
        overrides["seed"] = args.seed
    if getattr(args, "sigma", None) is not None:
        overrides["sigma_true"] = args.sigma
    return replace(toy, **overrides)


def _load_corpus(path, fmt, tag_map=None):
    try:
        if fmt == "json":
            return load_corpus(path)
        if fmt == "pos":
            return read_pos_corpus(path, merge=load_tag_merge_map(tag_map))
        return read_ocr_dataset(path)
    except OSError as exc:
        raise CLIError(f"cannot read corpus {path}: {exc}") from None
    except (CorpusFormatError, ValueError) as exc:
        raise CLIError(str(exc)) from None


def _load_model(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CLIError(f"cannot read model {path}: {exc}") from None
    except ModelFormatError as exc:
        raise CLIError(str(exc)) from None


def _check_family(args, corpus):
    if args.family is not None and args.family != corpus.family:
        raise CLIError(f"--family {args.family} does not match the {corpus.family} corpus")


def _check_compatible(params, corpus):
    b = params.b
    if b.family != corpus.family:
        raise CLIError(f"model has {b.family} emissions but the corpus is {corpus.family}")
    if corpus.family == "categorical":
        v = b.probs.shape[1]
        top = max((int(s.obs.max()) for s in corpus if len(s)), default=-1)
        if corpus.n_symbols not in (None, v) or top >= v:
            raise CLIError(f"model vocabulary size {v} does not match corpus "
                           f"({corpus.n_symbols} symbols)")
    if corpus.family == "bernoulli":
        d = b.probs.shape[1]
        dims = {s.obs.shape[1] for s in corpus}
        if dims - {d}:
            raise CLIError(f"model expects {d} features, corpus has {sorted(dims)}")


def read_labels(path):
    """One sequence per line, space-separated integer states."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CLIError(f"cannot read labels {path}: {exc}") from None
    out = []
    for n, line in enumerate(lines, 1):
        try:
            out.append(np.array([int(t) for t in line.split()], dtype=np.intp))
        except ValueError:
            raise CLIError(f"{path}:{n}: labels must be integers") from None
    return out


def format_labels(paths):
    return "".join(" ".join(str(int(x)) for x in p) + "\n" for p in paths)


def _write_manifest(path, args, argv, started, outputs, config=None, digest=None, extra=None):
    doc = {
        "format": "dhmm-manifest",
        "subcommand": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "config": None if config is None else config.to_dict(),
        "dataset_digest": digest,
        "seed": getattr(args, "seed", None),
        "outputs": {p: _sha256(p) for p in outputs},
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
        "version": __version__,
    }
    doc.update(extra or {})
    _write(path, json.dumps(doc, indent=1, default=_json_default) + "\n")
    return path


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer, np.floating)):
        return x.item()
    raise TypeError(f"not serializable: {type(x).__name__}")


def _out_dir_exists(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise CLIError(f"output directory does not exist: {directory}")


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args, argv, started):
    if not os.path.isdir(args.out):
        raise CLIError(f"output directory does not exist: {args.out}")
    toy = _toy_config(args, _read_config(args.config))
    corpus, truth = generate_toy_dataset(toy)
    paths = [os.path.join(args.out, name) for name in ("corpus.json", "truth.model.json", "gold.labels")]
    save_corpus(corpus, paths[0])
    save_model(truth, paths[1])
    _write(paths[2], format_labels(corpus.labels()))
    _write_manifest(os.path.join(args.out, "manifest.json"), args, argv, started, paths,
                    digest=corpus.digest(), extra={"toy": toy.to_dict()})
    print(f"wrote {len(corpus)} sequences of length {toy.seq_len} to {args.out}")
    return 0


def cmd_train(args, argv, started):
    _out_dir_exists(args.out)
    config = _train_config(args, _read_config(args.config))
    corpus = _load_corpus(args.corpus, args.corpus_format, args.tag_map)
    _check_family(args, corpus)
    if len(corpus) == 0:
        raise CLIError(f"corpus {args.corpus} is empty")
    seqs = list(corpus)
    spec = EmissionSpec.from_sequences(corpus.family, seqs, n_symbols=corpus.n_symbols)
    try:
        if args.mode == "sup":
            if not corpus.labelled:
                raise CLIError("supervised training needs a labelled corpus")
            if max(int(s.labels.max()) for s in seqs if len(s)) >= args.k:
                raise CLIError(f"corpus labels exceed --k {args.k}")
            model = fit_supervised(seqs, args.k, spec, config)
        else:
            model = fit_unsupervised_run(seqs, args.k, spec, config)
    except (TrainingError, NumericalUnderflowError) as exc:
        raise CLIError(f"training aborted: {exc}") from None
    for note in model.trace.notes:
        logger.info(note)
    trace_path = _sibling(args.out, ".trace.csv")
    save_model(model.params, args.out)
    _write(trace_path, _csv_text(("iter", "loglik_bound", "logdet_term", "objective"), model.trace.em))
    _write_manifest(_sibling(args.out, ".manifest.json"), args, argv, started,
                    [args.out, trace_path], config, corpus.digest(),
                    {"mode": args.mode, "k": args.k, "converged": model.converged,
                     "notes": model.trace.notes})
    final = model.trace.em[-1]
    print(f"objective {final[3]!r} after {len(model.trace.em)} rows; model written to {args.out}")
    return 0


def cmd_label(args, argv, started):
    _out_dir_exists(args.out)
    params = _load_model(args.model)
    corpus = _load_corpus(args.corpus, args.corpus_format, args.tag_map)
    _check_compatible(params, corpus)
    paths = decode_all(params, list(corpus))
    _write(args.out, format_labels(paths))
    _write_manifest(_sibling(args.out, ".manifest.json"), args, argv, started, [args.out],
                    digest=corpus.digest(), extra={"model_digest": _sha256(args.model)})
    print(f"labelled {len(paths)} sequences into {args.out}")
    return 0


def _gold_labels(args):
    if args.gold_format == "labels":
        return read_labels(args.gold)
    corpus = _load_corpus(args.gold, args.gold_format, args.tag_map)
    if not corpus.labelled:
        raise CLIError(f"{args.gold} carries no gold labels")
    return corpus.labels()


def cmd_eval(args, argv, started):
    _out_dir_exists(args.out)
    pred = read_labels(args.pred)
    gold = _gold_labels(args)
    k = args.k
    try:
        acc = accuracy(pred, gold, k) if args.no_align else one_to_one_accuracy(pred, gold, k)
        hist = state_histogram(pred, k)
        n_eff = effective_state_count(hist, args.sigma_f)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    diversity, infinite = "", ""
    if args.model is not None:
        params = _load_model(args.model)
        if params.k != k:
            raise CLIError(f"model has {params.k} states but --k is {k}")
        value, flag = mean_pairwise_diversity(params.a)
        diversity, infinite = float(value), int(flag)
    hist_path = _sibling(args.out, ".hist.csv")
    header = ("accuracy", "aligned", "effective_states", "sigma_f", "n_positions",
              "diversity", "diversity_infinite")
    row = (float(acc), int(not args.no_align), n_eff, float(args.sigma_f), hist.total,
           diversity, infinite)
    _write(args.out, _csv_text(header, [row]))
    _write(hist_path, _csv_text(("state", "count"), enumerate(hist.counts.tolist())))
    _write_manifest(_sibling(args.out, ".manifest.json"), args, argv, started,
                    [args.out, hist_path])
    print(f"accuracy {acc:.4f}, effective states {n_eff} (sigma_f={args.sigma_f})")
    return 0


def _workers():
    raw = os.environ.get("DHMM_THREADS", "1") or "1"
    try:
        return max(1, int(raw))
    except ValueError:
        raise CLIError(f"DHMM_THREADS must be an integer, got {raw!r}") from None


def cmd_sweep(args, argv, started):
    _out_dir_exists(args.out)
    doc = _read_config(args.config)
    config = _train_config(args, doc)
    seeds = [config.seed + i for i in range(args.seeds)]
    workers = _workers()
    extra = {"sweep": args.sweep, "seeds": seeds}
    digest = None
    if args.sweep == "variance":
        toy = _toy_config(args, doc)
        alpha = 1.0 if args.alpha is None and "alpha" not in doc.get("train", {}) else config.alpha
        rows = variance_sweep(toy, alpha, seeds, args.points, config, args.sigma_f, workers)
        extra.update(toy=toy.to_dict(), alpha=alpha, points=args.points)
    else:
        if args.corpus is None:
            raise CLIError("--corpus is required for an alpha sweep")
        corpus = _load_corpus(args.corpus, args.corpus_format, args.tag_map)
        _check_family(args, corpus)
        digest = corpus.digest()
        if args.mode == "sup":
            if not corpus.labelled:
                raise CLIError("supervised sweeps need a labelled corpus")
            rows = cross_validate_supervised(corpus, args.k, args.alphas, args.folds,
                                             config.seed, config, workers)
            extra.update(folds=args.folds, seeds=None, seed_column="fold")
        else:
            rows = alpha_sweep(corpus, args.k, args.alphas, seeds, config, args.sigma_f, workers)
        extra.update(alphas=args.alphas, mode=args.mode, k=args.k)
    _write(args.out, _csv_text(("sweep_var", "value", "seed", "metric", "score", "status"), rows))
    failed = [r for r in rows if r[5] != "ok"]
    _write_manifest(_sibling(args.out, ".manifest.json"), args, argv, started, [args.out],
                    config, digest, extra)
    for r in failed:
        print(f"{r[0]}={r[1]!r} seed={r[2]}: {r[5]}", file=sys.stderr)
    print(f"wrote {len(rows)} rows to {args.out} ({len(failed)} failed)")
    return 1 if failed else 0


def cmd_replay(args, argv, started):
    try:
        with open(args.manifest, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"cannot read manifest {args.manifest}: {exc}") from None
    if doc.get("format") != "dhmm-manifest":
        raise CLIError(f"{args.manifest} is not a dhmm manifest")
    if doc.get("version") != __version__:
        logger.warning("manifest written by version %s, running %s", doc.get("version"), __version__)
    cwd = os.getcwd()
    os.chdir(doc["cwd"])
    try:
        return main(doc["argv"])
    finally:
        os.chdir(cwd)


# --------------------------------------------------------------------------
# parser


def _add_corpus_args(p, required=True):
    p.add_argument("--corpus", required=required, help="corpus file")
    p.add_argument("--corpus-format", choices=("json", "pos", "ocr"), default="json",
                   help="json (dhmm-corpus), pos (word/TAG lines) or ocr (letter records)")
    p.add_argument("--tag-map", help="tag merge map for pos corpora (default: bundled 46->15 map)")


def _add_train_args(p):
    p.add_argument("--alpha", type=float, help="diversity weight (0 = plain HMM)")
    p.add_argument("--alpha-a", type=float, help="anchor weight of supervised refinement")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--max-iter", type=int, help="EM iteration cap")
    p.add_argument("--tol", type=float, help="EM stopping threshold on the objective change")
    p.add_argument("--inner-max-iter", type=int, help="projected-gradient iteration cap")
    p.add_argument("--inner-tol", type=float, help="projected-gradient stopping threshold")
    p.add_argument("--init-step", type=float, help="initial gradient step size")
    p.add_argument("--eta", type=float, help="Dirichlet concentration of the initialisation")
    p.add_argument("--rho", type=float, help="product-kernel exponent")
    p.add_argument("--pseudocount", type=float, help="emission smoothing (discrete families)")
    p.add_argument("--config", help="JSON config with optional 'train' and 'toy' sections")


def build_parser():
    parser = argparse.ArgumentParser(prog="dhmm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training notes")
    parser.add_argument("--version", action="version", version=f"dhmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic Gaussian toy dataset")
    p.add_argument("--out", required=True, help="existing output directory")
    p.add_argument("--config", help="JSON toy config (flat or under 'toy')")
    p.add_argument("--seed", type=int, help="sampling seed")
    p.add_argument("--sigma", type=float, help="emission standard deviation")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model and write it with its objective trace")
    p.add_argument("--mode", choices=("unsup", "sup"), default="unsup")
    _add_corpus_args(p)
    p.add_argument("--k", type=int, required=True, help="number of hidden states")
    p.add_argument("--family", choices=FAMILIES, help="expected emission family")
    _add_train_args(p)
    p.add_argument("--out", required=True, help="model file (.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("label", help="Viterbi-decode a corpus")
    p.add_argument("--model", required=True)
    _add_corpus_args(p)
    p.add_argument("--out", required=True, help="labels file, one sequence per line")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("eval", help="accuracy, state histogram and effective state count")
    p.add_argument("--pred", required=True, help="predicted labels file")
    p.add_argument("--gold", required=True, help="gold labels file or labelled corpus")
    p.add_argument("--gold-format", choices=("labels", "json", "pos", "ocr"), default="labels")
    p.add_argument("--tag-map", help="tag merge map when --gold is a pos corpus")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma-f", type=float, default=50.0, help="effective-state threshold")
    p.add_argument("--model", help="model whose transition diversity is reported")
    p.add_argument("--no-align", action="store_true",
                   help="plain accuracy instead of one-to-one aligned accuracy")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="alpha or variance sweep to a long-format CSV")
    p.add_argument("--sweep", choices=("alpha", "variance"), required=True)
    p.add_argument("--mode", choices=("unsup", "sup"), default="unsup",
                   help="alpha sweeps: unsupervised EM or supervised cross-validation")
    _add_corpus_args(p, required=False)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.0, 1.0, 10.0, 100.0, 1000.0])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--seeds", type=int, default=3, help="runs per setting (seeds seed+i)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--points", type=int, default=50, help="variance grid size")
    p.add_argument("--sigma", type=float, help=argparse.SUPPRESS)
    p.add_argument("--sigma-f", type=float, default=50.0)
    _add_train_args(p)
    p.add_argument("--out", required=True, help="sweep CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        return args.func(args, argv, started)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
