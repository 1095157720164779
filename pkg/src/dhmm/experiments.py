"""Experiment drivers shared by the CLI and the acceptance suite.

Every driver returns long-format rows ``(sweep_var, value, seed, metric,
score, status)``. Grid points are independent tasks; with ``n_workers > 1``
they run in a process pool, and results are always merged in grid order.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from .datasets import ToyConfig, generate_toy_dataset, k_fold_split, variance_sweep_configs
from .evaluation import accuracy, effective_state_count, one_to_one_accuracy, state_histogram
from .hmm import viterbi
from .kernel import mean_pairwise_diversity
from .learning import EmissionSpec, TrainConfig, em_fit_unsupervised, fit_supervised, init_params

__all__ = [
    "decode_all",
    "fit_unsupervised_run",
    "toy_comparison",
    "variance_sweep",
    "alpha_sweep",
    "cross_validate_supervised",
    "run_tasks",
]

logger = logging.getLogger(__name__)


def decode_all(params, sequences):
    return [viterbi(params, s)[0] for s in sequences]


def fit_unsupervised_run(sequences, k, spec, config):
    """One EM run from ``init_params`` seeded by ``config.seed``."""
    init = init_params(k, spec, config, np.random.default_rng(config.seed))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return em_fit_unsupervised(sequences, k, spec, config, init=init)


def _unsup_metrics(model, sequences, k, sigma_f):
    pred = decode_all(model.params, sequences)
    out = {}
    if all(s.labels is not None for s in sequences):
        out["accuracy"] = one_to_one_accuracy(pred, [s.labels for s in sequences], k)
    out["diversity"] = mean_pairwise_diversity(model.params.a)[0]
    out["effective_states"] = float(effective_state_count(state_histogram(pred, k), sigma_f))
    out["objective"] = model.trace.em[-1][3]
    out["iterations"] = float(len(model.trace.em))
    return out


def toy_comparison(toy, seed, alpha, base_config=TrainConfig(), sigma_f=50):
    """HMM (alpha=0) and dHMM fits from the same initialisation on one toy dataset.

    Returns a dict of metrics prefixed ``hmm_``/``dhmm_`` plus ``truth_`` values
    computed from the generating parameters.
    """
    corpus, truth = generate_toy_dataset(toy)
    seqs = list(corpus)
    spec = EmissionSpec.from_sequences("gaussian", seqs)
    out = {"truth_diversity": mean_pairwise_diversity(truth.a)[0]}
    truth_pred = decode_all(truth, seqs)
    out["truth_states"] = float(effective_state_count(state_histogram(truth_pred, toy.k), sigma_f))
    for name, a in (("hmm", 0.0), ("dhmm", alpha)):
        cfg = replace(base_config, alpha=a, seed=seed)
        model = fit_unsupervised_run(seqs, toy.k, spec, cfg)
        for metric, value in _unsup_metrics(model, seqs, toy.k, sigma_f).items():
            out[f"{name}_{metric}"] = value
    return out


def _rows(sweep_var, value, seed, metrics, status="ok"):
    return [(sweep_var, value, seed, metric, float(score), status)
            for metric, score in metrics.items()]


def _variance_task(args):
    toy, seed, alpha, base, sigma_f = args
    try:
        return _rows("sigma", toy.sigma_true, seed, toy_comparison(toy, seed, alpha, base, sigma_f))
    except Exception as exc:  # recorded per row, sweep continues
        return [("sigma", toy.sigma_true, seed, "all", float("nan"), f"error: {exc}")]


def _alpha_task(args):
    corpus, k, alpha, seed, base, sigma_f = args
    try:
        seqs = list(corpus)
        spec = EmissionSpec.from_sequences(corpus.family, seqs, n_symbols=corpus.n_symbols)
        model = fit_unsupervised_run(seqs, k, spec, replace(base, alpha=alpha, seed=seed))
        return _rows("alpha", alpha, seed, _unsup_metrics(model, seqs, k, sigma_f))
    except Exception as exc:
        return [("alpha", alpha, seed, "all", float("nan"), f"error: {exc}")]


def _cv_task(args):
    train, test, k, alpha, fold, base = args
    try:
        return _rows("alpha", alpha, fold, _supervised_fold(train, test, k, alpha, base))
    except Exception as exc:
        return [("alpha", alpha, fold, "all", float("nan"), f"error: {exc}")]


def _supervised_fold(train, test, k, alpha, base):
    spec = EmissionSpec.from_sequences(train.family, list(train), n_symbols=train.n_symbols)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model = fit_supervised(list(train), k, spec, replace(base, alpha=alpha))
    pred = decode_all(model.params, list(test))
    gold = [s.labels for s in test]
    return {"accuracy": accuracy(pred, gold, k),
            "diversity": mean_pairwise_diversity(model.params.a)[0],
            "counted_diversity": mean_pairwise_diversity(model.counted.a)[0]}


def run_tasks(fn, tasks, n_workers=1):
    if n_workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(fn, tasks))
    else:
        results = [fn(t) for t in tasks]
    return [row for rows in results for row in rows]


def variance_sweep(base_toy=ToyConfig(), alpha=1.0, seeds=(0, 1, 2), n_points=50,
                   base_config=TrainConfig(), sigma_f=50, n_workers=1):
    """HMM vs dHMM over the emission-stddev grid ``0.025 + 0.1 (t - 1)``."""
    base_config = replace(base_config, n_threads=1)
    tasks = [(toy, seed, alpha, base_config, sigma_f)
             for toy in variance_sweep_configs(base_toy, n_points) for seed in seeds]
    return run_tasks(_variance_task, tasks, n_workers)


def alpha_sweep(corpus, k, alphas, seeds=(0,), base_config=TrainConfig(), sigma_f=50, n_workers=1):
    """Unsupervised fits of ``corpus`` for each ``alpha`` and seed; ``alpha=0`` is plain HMM."""
    base_config = replace(base_config, n_threads=1)
    tasks = [(corpus, k, float(a), seed, base_config, sigma_f) for a in alphas for seed in seeds]
    return run_tasks(_alpha_task, tasks, n_workers)


def cross_validate_supervised(corpus, k, alphas, n_folds=10, seed=0, base_config=TrainConfig(),
                              n_workers=1):
    """Supervised fits per fold and ``alpha``; the ``seed`` column holds the fold index."""
    base_config = replace(base_config, n_threads=1)
    splits = k_fold_split(corpus, n_folds, seed)
    tasks = [(train, test, k, float(a), f, base_config)
             for a in alphas for f, (train, test) in enumerate(splits)]
    return run_tasks(_cv_task, tasks, n_workers)
