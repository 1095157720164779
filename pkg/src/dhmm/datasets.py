"""Toy data generation, corpus readers, fold splitting and model files."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import numpy as np

from .emissions import GaussianEmission
from .hmm import HmmParams, ObservationSequence, sample_sequence

__all__ = [
    "ToyConfig",
    "Corpus",
    "TagMergeMap",
    "Vocabulary",
    "CorpusFormatError",
    "ModelFormatError",
    "TOY_TRANSITIONS",
    "TOY_INITIAL",
    "generate_toy_dataset",
    "variance_sweep_configs",
    "load_tag_merge_map",
    "read_pos_corpus",
    "read_ocr_dataset",
    "k_fold_split",
    "save_model",
    "load_model",
    "save_corpus",
    "load_corpus",
    "write_atomic",
]

logger = logging.getLogger(__name__)

TOY_INITIAL = (0.0101, 0.0912, 0.2421, 0.0652, 0.5914)

# Rows drawn once from Dir(0.5) with numpy default_rng(42); frozen here.
TOY_TRANSITIONS = (
    (0.2807175565174809, 0.4467379095973975, 0.0030948268781713236, 0.2637226152758325, 0.005727091731117517),
    (0.05077433585517924, 0.16560149118362238, 0.11490194328597263, 0.39367477711217147, 0.2750474525630542),
    (0.6902630858259396, 0.1542244562863779, 0.004464515591458887, 0.13113793551450312, 0.019910006781720686),
    (0.20973012058212673, 0.0160564101993887, 0.04897688352114426, 0.1817821120788303, 0.54345447361851),
    (0.34034882743935024, 0.04669562868474539, 0.1644066820080343, 0.2669646915410901, 0.18158417032677976),
)

OCR_PIXELS = 128
OCR_LETTERS = "abcdefghijklmnopqrstuvwxyz"


class CorpusFormatError(ValueError):
    """A corpus file does not follow its declared format."""


class ModelFormatError(ValueError):
    """A model file is malformed or violates a parameter invariant."""


@dataclass(frozen=True)
class ToyConfig:
    """Ground truth and sampling setup of the synthetic 5-state Gaussian experiment."""

    pi_true: tuple = TOY_INITIAL
    a_true: tuple = TOY_TRANSITIONS
    mu_true: tuple = (1.0, 2.0, 3.0, 4.0, 5.0)
    sigma_true: float = 0.025
    n_sequences: int = 300
    seq_len: int = 6
    seed: int = 0

    @property
    def k(self):
        return len(self.pi_true)

    def params(self):
        k = self.k
        b = GaussianEmission(np.asarray(self.mu_true, dtype=float), np.full(k, float(self.sigma_true)))
        return HmmParams(np.asarray(self.pi_true), np.asarray(self.a_true), b)

    def to_dict(self):
        return {"pi_true": list(self.pi_true), "a_true": [list(r) for r in self.a_true],
                "mu_true": list(self.mu_true), "sigma_true": self.sigma_true,
                "n_sequences": self.n_sequences, "seq_len": self.seq_len, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "a_true" in d:
            d["a_true"] = tuple(tuple(float(x) for x in row) for row in d["a_true"])
        for key in ("pi_true", "mu_true"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        unknown = set(d) - {"pi_true", "a_true", "mu_true", "sigma_true", "n_sequences", "seq_len", "seed"}
        if unknown:
            raise ValueError(f"unknown toy config fields: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.params()  # validates
        return cfg


@dataclass(frozen=True, eq=False)
class Corpus:
    """A list of observation sequences plus metadata.

    ``family`` names the emission family the observations belong to;
    ``n_symbols`` / ``n_features`` give the observation dimension. ``folds``
    optionally assigns each sequence a cross-validation fold.
    """

    sequences: tuple
    family: str
    n_symbols: Optional[int] = None
    n_features: Optional[int] = None
    folds: Optional[np.ndarray] = None
    label_names: tuple = ()
    vocabulary: Optional["Vocabulary"] = None

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        if self.folds is not None:
            folds = np.asarray(self.folds, dtype=np.intp)
            if folds.shape != (len(self.sequences),) or (folds.size and folds.min() < 0):
                raise ValueError("fold ids must be one non-negative integer per sequence")
            object.__setattr__(self, "folds", folds)

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    @property
    def labelled(self):
        return len(self.sequences) > 0 and all(s.labels is not None for s in self.sequences)

    @property
    def n_positions(self):
        return sum(len(s) for s in self.sequences)

    def labels(self):
        return [s.labels for s in self.sequences]

    def subset(self, index):
        index = list(index)
        folds = None if self.folds is None else self.folds[index]
        return replace(self, sequences=tuple(self.sequences[i] for i in index), folds=folds)

    def digest(self):
        import hashlib
        h = hashlib.sha256(self.family.encode())
        for s in self.sequences:
            h.update(np.ascontiguousarray(s.obs).tobytes())
            if s.labels is not None:
                h.update(np.ascontiguousarray(s.labels).tobytes())
        return h.hexdigest()


def generate_toy_dataset(cfg=ToyConfig()):
    """Sample ``cfg.n_sequences`` labelled sequences from the ground-truth model.

    Returns ``(corpus, params)``; a pure function of ``cfg``.
    """
    params = cfg.params()
    rng = np.random.default_rng(cfg.seed)
    seqs = [sample_sequence(params, cfg.seq_len, rng) for _ in range(cfg.n_sequences)]
    return Corpus(seqs, "gaussian"), params


def variance_sweep_configs(base=ToyConfig(), n_points=50, start=0.025, step=0.1):
    """Configs with emission stddev ``start + step * (t - 1)`` for ``t = 1..n_points``."""
    return [replace(base, sigma_true=round(start + step * t, 12)) for t in range(n_points)]


# --------------------------------------------------------------------------
# part-of-speech corpora


@dataclass(frozen=True)
class TagMergeMap:
    """Raw tag -> merged state index (0-based)."""

    mapping: dict
    n_tags: int

    @classmethod
    def from_file(cls, path):
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                try:
                    tag, idx = line.split("\t")
                    mapping[tag] = int(idx) - 1
                except ValueError:
                    raise CorpusFormatError(f"{path}:{lineno}: expected 'TAG<TAB>index'") from None
        return cls.from_mapping(mapping)

    @classmethod
    def from_mapping(cls, mapping):
        values = sorted(set(mapping.values()))
        if not values or values[0] < 0 or values != list(range(len(values))):
            raise CorpusFormatError("merged tag indices must cover 1..n without gaps")
        return cls(dict(mapping), len(values))

    def __getitem__(self, tag):
        return self.mapping[tag]

    def __contains__(self, tag):
        return tag in self.mapping


def load_tag_merge_map(path=None):
    """The 46 -> 15 WSJ merge shipped with the package, or a user file.

    Files list one ``RAW_TAG<TAB>index`` per line with 1-based merged indices.
    """
    if path is not None:
        return TagMergeMap.from_file(path)
    with resources.as_file(resources.files("dhmm.data") / "wsj_tag_merge.tsv") as p:
        return TagMergeMap.from_file(p)


@dataclass
class Vocabulary:
    """Word -> index map. Index ``len(words)`` is reserved for unknown words."""

    words: list
    index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {w: i for i, w in enumerate(self.words)}

    @property
    def unk(self):
        return len(self.words)

    @property
    def size(self):
        return len(self.words) + 1

    def encode(self, word):
        return self.index.get(word, self.unk)

    @classmethod
    def build(cls, sentences):
        counts = Counter()
        first = {}
        for sent in sentences:
            for w in sent:
                counts[w] += 1
                first.setdefault(w, len(first))
        words = sorted(counts, key=lambda w: (-counts[w], first[w]))
        return cls(words)


def _split_token(token):
    word, sep, tag = token.rpartition("/")
    if not sep or not word:
        return None
    return word, tag


def read_pos_corpus(path, merge=None, vocabulary=None):
    """Read ``word/TAG`` sentences, one per line.

    Tags go through ``merge`` (the shipped WSJ map by default). Without a
    ``vocabulary`` one is built from this file, most frequent word first;
    words missing from a supplied vocabulary map to its UNK index.
    """
    merge = merge or load_tag_merge_map()
    words, tags = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                logger.warning("%s:%d: empty sentence skipped", path, lineno)
                continue
            sent_w, sent_t = [], []
            for token in tokens:
                parts = _split_token(token)
                if parts is None:
                    raise CorpusFormatError(f"{path}:{lineno}: token {token!r} is not 'word/TAG'")
                word, tag = parts
                if tag not in merge:
                    raise CorpusFormatError(f"{path}:{lineno}: unknown tag {tag!r}")
                sent_w.append(word)
                sent_t.append(merge[tag])
            words.append(sent_w)
            tags.append(sent_t)
    vocab = vocabulary if vocabulary is not None else Vocabulary.build(words)
    seqs = [ObservationSequence(np.array([vocab.encode(w) for w in ws], dtype=np.intp),
                                np.array(ts, dtype=np.intp))
            for ws, ts in zip(words, tags)]
    return Corpus(seqs, "categorical", n_symbols=vocab.size, vocabulary=vocab,
                  label_names=tuple(str(i + 1) for i in range(merge.n_tags)))


# --------------------------------------------------------------------------
# OCR letters


def read_ocr_dataset(path):
    """Read tab-separated handwritten-letter records into word sequences.

    Record layout: ``id, letter, next_id, word_id, position, fold`` followed
    by 128 binary pixels. Words are recovered by following ``next_id`` links
    (``-1`` ends a word); each word becomes one sequence of 128-bit vectors
    labelled with letter indices 0..25.
    """
    records = {}
    order = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.rstrip("\n").rstrip("\t").split("\t")
            if not line.strip():
                continue
            if len(fields) != 6 + OCR_PIXELS:
                raise CorpusFormatError(f"{path}:{lineno}: expected {6 + OCR_PIXELS} fields, got {len(fields)}")
            try:
                rid, next_id, word_id, pos, fold = (int(fields[i]) for i in (0, 2, 3, 4, 5))
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-integer id field") from None
            letter = fields[1]
            if len(letter) != 1 or letter not in OCR_LETTERS:
                raise CorpusFormatError(f"record {rid}: letter {letter!r} outside a-z")
            if any(p not in ("0", "1") for p in fields[6:]):
                raise CorpusFormatError(f"record {rid}: pixel values must be 0 or 1")
            if rid in records:
                raise CorpusFormatError(f"record {rid}: duplicate id")
            pixels = np.array(fields[6:], dtype=np.uint8)
            records[rid] = (OCR_LETTERS.index(letter), next_id, word_id, pos, fold, pixels)
            order.append(rid)

    targets = {rec[1] for rec in records.values() if rec[1] != -1}
    for rid in targets:
        if rid not in records:
            raise CorpusFormatError(f"broken chain: next id {rid} does not exist")
    seqs, folds = [], []
    seen = set()
    for rid in order:
        if rid in targets:
            continue
        chain = []
        cur = rid
        while cur != -1:
            if cur in seen:
                raise CorpusFormatError(f"record {cur}: broken chain (cycle or shared successor)")
            seen.add(cur)
            chain.append(cur)
            cur = records[cur][1]
        recs = [records[c] for c in chain]
        if len({r[2] for r in recs}) != 1:
            raise CorpusFormatError(f"record {rid}: chained letters span several word ids")
        seqs.append(ObservationSequence(np.vstack([r[5] for r in recs]),
                                        np.array([r[0] for r in recs], dtype=np.intp)))
        folds.append(recs[0][4])
    if len(seen) != len(records):
        orphan = next(r for r in order if r not in seen)
        raise CorpusFormatError(f"record {orphan}: broken chain (not reachable from a word start)")
    return Corpus(seqs, "bernoulli", n_features=OCR_PIXELS, folds=np.array(folds, dtype=np.intp),
                  label_names=tuple(OCR_LETTERS))


def k_fold_split(corpus, n_folds, seed=0):
    """``n_folds`` (train, test) corpus pairs whose test parts partition the corpus.

    Embedded fold ids are used when the corpus has them (ids must lie in
    ``[0, n_folds)``); otherwise sequences are shuffled with ``seed`` and dealt
    into near-equal folds.
    """
    n = len(corpus)
    if n_folds < 2:
        raise ValueError("need at least two folds")
    if n == 0:
        raise ValueError("corpus is empty")
    if n_folds > n:
        raise ValueError(f"{n_folds} folds requested for {n} sequences")
    if corpus.folds is not None:
        if corpus.folds.max() >= n_folds:
            raise ValueError(f"corpus fold ids reach {corpus.folds.max()}, beyond {n_folds} folds")
        assign = corpus.folds
    else:
        perm = np.random.default_rng(seed).permutation(n)
        assign = np.empty(n, dtype=np.intp)
        for f, part in enumerate(np.array_split(perm, n_folds)):
            assign[part] = f
    splits = []
    for f in range(n_folds):
        test = np.flatnonzero(assign == f)
        train = np.flatnonzero(assign != f)
        splits.append((corpus.subset(train), corpus.subset(test)))
    return splits


# --------------------------------------------------------------------------
# files


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"output directory does not exist: {directory}")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(params, path):
    """Write parameters as JSON. Floats use Python's shortest round-trip repr."""
    doc = {"format": "dhmm-model", "version": 1, **params.to_dict()}
    write_atomic(path, json.dumps(doc, indent=1) + "\n")


def load_model(path):
    """Read and validate a model file; raises :class:`ModelFormatError`."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != "dhmm-model":
        raise ModelFormatError(f"{path}: not a dhmm model file")
    try:
        return HmmParams.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{path}: missing or malformed field {exc}") from None
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None


def save_corpus(corpus, path):
    """Write a corpus as JSON (``family``, dimensions, per-sequence obs/labels)."""
    doc = {"format": "dhmm-corpus", "version": 1, "family": corpus.family,
           "n_symbols": corpus.n_symbols, "n_features": corpus.n_features,
           "folds": None if corpus.folds is None else corpus.folds.tolist(),
           "sequences": [{"obs": s.obs.tolist(),
                          "labels": None if s.labels is None else s.labels.tolist()}
                         for s in corpus.sequences]}
    write_atomic(path, json.dumps(doc, separators=(",", ":")) + "\n")


def load_corpus(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"{path}: not valid JSON ({exc})") from None
    if doc.get("format") != "dhmm-corpus":
        raise CorpusFormatError(f"{path}: not a dhmm corpus file")
    family = doc["family"]
    dtype = {"gaussian": float, "categorical": np.intp, "bernoulli": np.uint8}[family]
    seqs = []
    for n, s in enumerate(doc["sequences"]):
        obs = np.asarray(s["obs"], dtype=dtype)
        if family == "bernoulli" and (obs.ndim != 2 or obs.shape[1] != doc["n_features"]):
            raise CorpusFormatError(f"{path}: sequence {n} has wrong feature dimension")
        if family == "categorical" and obs.size and (obs.min() < 0 or obs.max() >= doc["n_symbols"]):
            raise CorpusFormatError(f"{path}: sequence {n} has symbols outside the vocabulary")
        if family == "gaussian" and (obs.ndim != 1 or not np.all(np.isfinite(obs))):
            raise CorpusFormatError(f"{path}: sequence {n} must be a finite 1-D array")
        labels = None if s.get("labels") is None else np.asarray(s["labels"], dtype=np.intp)
        try:
            seqs.append(ObservationSequence(obs, labels))
        except ValueError as exc:
            raise CorpusFormatError(f"{path}: sequence {n}: {exc}") from None
    return Corpus(seqs, family, doc.get("n_symbols"), doc.get("n_features"), folds=doc.get("folds"))
