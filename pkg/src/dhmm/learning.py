"""Parameter estimation for diversified HMMs.

Unsupervised training is MAP-EM: an ordinary E-step followed by closed-form
updates of the initial distribution and emissions, and a projected-gradient
update of the transition matrix that trades expected transition counts
against ``alpha * log det K(A)``. Supervised training counts ``(pi, A0, B)``
from labels and then refines ``A`` by projected gradient ascent on
``sum C log A + alpha log det K(A) - alpha_a ||A - A0||^2``.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .emissions import FAMILIES, EmissionStats, check_observations
from .hmm import (HmmParams, NumericalUnderflowError, ObservationSequence,
                  _forward_backward_batch, _safe_log)
from .kernel import DEFAULT_RHO, check_gradient, log_det_gradient, log_det_kernel

__all__ = [
    "TrainConfig",
    "EmissionSpec",
    "ObjectiveTrace",
    "SufficientStats",
    "TrainedModel",
    "TrainingError",
    "project_to_simplex",
    "init_params",
    "e_step",
    "m_step_pi",
    "m_step_emissions",
    "update_transitions_closed_form",
    "update_transitions_diversified",
    "transition_objective",
    "transition_terms",
    "em_fit_unsupervised",
    "count_statistics",
    "fit_supervised",
]

GRADIENT_CHECK_TOL = 1e-5


class TrainingError(RuntimeError):
    """Training aborted (non-finite objective, failed gradient self-check, ...)."""


@dataclass(frozen=True)
class TrainConfig:
    """Learning hyperparameters.

    ``alpha`` weighs the diversity prior, ``alpha_a`` the supervised pull
    towards the counted transition matrix. ``init_step``, ``backtrack_factor``
    and ``max_backtracks`` drive the line search of the transition update;
    ``inner_tol`` is its stopping threshold on the change of the objective.
    """

    alpha: float = 0.0
    alpha_a: float = 0.0
    max_em_iters: int = 200
    em_tol: float = 1e-6
    inner_max_iters: int = 50
    inner_tol: float = 1e-6
    init_step: float = 1.0
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    dirichlet_eta: float = 3.0
    seed: int = 0
    rho: float = DEFAULT_RHO
    interior_floor: float = 1e-12
    pseudocount: float = 0.0
    n_threads: Optional[int] = None

    def __post_init__(self):
        for name in ("alpha", "alpha_a", "pseudocount"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("em_tol", "inner_tol", "init_step", "dirichlet_eta", "rho"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("max_em_iters", "inner_max_iters", "max_backtracks"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0 <= self.interior_floor < 1e-3:
            raise ValueError("interior_floor must lie in [0, 1e-3)")

    def to_dict(self):
        return asdict(self)

    def threads(self):
        if self.n_threads is not None:
            return max(1, int(self.n_threads))
        return max(1, int(os.environ.get("DHMM_THREADS", "1") or 1))


@dataclass(frozen=True)
class EmissionSpec:
    """What an emission model looks like before it is initialised.

    ``data_mean``/``data_var`` are the pooled observation moments used to
    draw Gaussian initial means and variances.
    """

    family: str
    n_symbols: Optional[int] = None
    n_features: Optional[int] = None
    data_mean: float = 0.0
    data_var: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown emission family {self.family!r}")
        if self.family == "categorical" and not self.n_symbols:
            raise ValueError("categorical emissions need n_symbols")
        if self.family == "bernoulli" and not self.n_features:
            raise ValueError("Bernoulli emissions need n_features")

    @classmethod
    def from_sequences(cls, family, sequences, n_symbols=None):
        obs = [np.asarray(s.obs if isinstance(s, ObservationSequence) else s) for s in sequences]
        if family == "gaussian":
            y = np.concatenate([o.reshape(-1) for o in obs]).astype(float)
            return cls(family, data_mean=float(y.mean()), data_var=float(max(y.var(), 1e-12)))
        if family == "categorical":
            if n_symbols is None:
                n_symbols = int(max(int(o.max()) for o in obs)) + 1
            return cls(family, n_symbols=int(n_symbols))
        return cls(family, n_features=int(obs[0].shape[1]))

    def template(self, k):
        """A placeholder emission model with the right shapes."""
        if self.family == "gaussian":
            return FAMILIES["gaussian"](np.full(k, self.data_mean), np.full(k, np.sqrt(self.data_var)))
        if self.family == "categorical":
            return FAMILIES["categorical"](np.full((k, self.n_symbols), 1.0 / self.n_symbols))
        return FAMILIES["bernoulli"](np.full((k, self.n_features), 0.5))


@dataclass
class ObjectiveTrace:
    """Per-iteration objective values of a training run.

    ``em`` holds ``(iteration, loglik_bound, logdet_term, objective)`` rows;
    ``inner`` holds, per outer iteration, the values of the transition
    sub-objective along accepted steps.
    """

    em: list = field(default_factory=list)
    inner: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def record(self, loglik, logdet_term):
        self.em.append((len(self.em), float(loglik), float(logdet_term), float(loglik + logdet_term)))

    @property
    def objective(self):
        return np.array([row[3] for row in self.em])

    def note(self, iteration, messages):
        for msg in messages:
            self.notes.append(f"iter {iteration}: {msg}")


@dataclass
class SufficientStats:
    initial_counts: np.ndarray
    pair_counts: np.ndarray
    emission: EmissionStats
    n_sequences: int
    log_likelihood: float = 0.0


@dataclass(frozen=True, eq=False)
class TrainedModel:
    params: HmmParams
    trace: ObjectiveTrace
    config: TrainConfig
    converged: bool
    counted: Optional[HmmParams] = None


# --------------------------------------------------------------------------
# simplex projection


def project_to_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex.

    Works row-wise on 2-D input. Sort-based: with ``u`` sorted descending,
    find the largest ``r`` with ``u_r + (1 - sum_{i<=r} u_i) / r > 0`` and
    shift every entry by ``(1 - sum_{i<=r} u_i) / r`` before clipping at 0.
    """
    v = np.asarray(v, dtype=float)
    flat = v.reshape(-1, v.shape[-1])
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1)
    ranks = np.arange(1, flat.shape[1] + 1)
    cond = u + (1.0 - css) / ranks > 0
    r = flat.shape[1] - np.argmax(cond[:, ::-1], axis=1)
    shift = (1.0 - css[np.arange(flat.shape[0]), r - 1]) / r
    out = np.maximum(flat + shift[:, None], 0.0)
    out /= out.sum(axis=1, keepdims=True)
    return out.reshape(v.shape)


def _interior(a, floor):
    if floor <= 0:
        return a
    a = np.maximum(a, floor)
    return a / a.sum(axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# initialisation


def init_params(k, emission_spec, config, rng=None):
    """Random starting parameters.

    ``pi`` and each row of ``A`` are drawn from a symmetric Dirichlet with
    concentration ``config.dirichlet_eta``. Gaussian means are drawn from a
    normal with the pooled data mean and stddev, variances from a Gamma with
    shape 2 and scale ``data_var / 2``. Categorical rows are Dirichlet draws;
    Bernoulli parameters are Beta(eta, eta) draws.
    """
    if k < 2:
        raise ValueError("need at least two states")
    rng = np.random.default_rng(config.seed if rng is None else rng)
    eta = config.dirichlet_eta
    pi = rng.dirichlet(np.full(k, eta))
    a = rng.dirichlet(np.full(k, eta), size=k)
    spec = emission_spec
    if spec.family == "gaussian":
        means = rng.normal(spec.data_mean, np.sqrt(spec.data_var), size=k)
        var = rng.gamma(2.0, spec.data_var / 2.0, size=k)
        b = FAMILIES["gaussian"](means, np.sqrt(np.maximum(var, 1e-8)))
    elif spec.family == "categorical":
        b = FAMILIES["categorical"](rng.dirichlet(np.full(spec.n_symbols, eta), size=k))
    else:
        b = FAMILIES["bernoulli"](rng.beta(eta, eta, size=(k, spec.n_features)))
    return HmmParams(pi, a, b)


# --------------------------------------------------------------------------
# E-step


def _group_by_length(sequences):
    groups = {}
    for n, seq in enumerate(sequences):
        groups.setdefault(len(seq), []).append(n)
    return [groups[t] for t in sorted(groups)]


def _group_stats(params, log_pi, obs_list, index):
    t_len = obs_list[0].shape[0]
    flat = np.concatenate(obs_list, axis=0)
    log_e = params.b.log_prob(flat).reshape(len(obs_list), t_len, params.k)
    try:
        unary, pair_sum, ll = _forward_backward_batch(log_pi, params.a, log_e, want_pairwise="sum")
    except NumericalUnderflowError as exc:
        raise NumericalUnderflowError(exc.t, index[exc.sequence]) from None
    em = EmissionStats.zeros(params.b)
    em.accumulate(flat, unary.reshape(-1, params.k))
    return unary[:, 0].sum(axis=0), pair_sum.sum(axis=0), em, float(ll.sum())


def e_step(params, sequences, n_threads=1):
    """Accumulate posterior sufficient statistics over a dataset.

    Sequences are grouped by length and each group runs as one batch; group
    results are always merged in ascending-length order, so the sums do not
    depend on ``n_threads``.

    Returns
    -------
    SufficientStats
        Including the total log-likelihood of the dataset.
    """
    if len(sequences) == 0:
        raise ValueError("dataset is empty")
    obs = [check_observations(s.obs if isinstance(s, ObservationSequence) else s, params.b)
           for s in sequences]
    log_pi = _safe_log(params.pi)
    groups = _group_by_length(obs)
    jobs = [([obs[n] for n in g], g) for g in groups]

    def run(job):
        return _group_stats(params, log_pi, *job)

    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]

    k = params.k
    stats = SufficientStats(np.zeros(k), np.zeros((k, k)), EmissionStats.zeros(params.b), len(obs))
    for init, pair, em, ll in parts:
        stats.initial_counts += init
        stats.pair_counts += pair
        stats.emission.merge(em)
        stats.log_likelihood += ll
    return stats


# --------------------------------------------------------------------------
# M-step


def m_step_pi(stats):
    if stats.n_sequences < 1:
        raise ValueError("need at least one sequence")
    pi = stats.initial_counts / stats.n_sequences
    return pi / pi.sum()


def m_step_emissions(stats, previous, pseudocount=0.0):
    """Weighted MLE of the emission model; returns ``(model, notes)``."""
    em = stats.emission if isinstance(stats, SufficientStats) else stats
    return type(previous).from_stats(em, previous, pseudocount=pseudocount)


def update_transitions_closed_form(pair_counts):
    """Row-normalised expected transition counts; returns ``(A, notes)``.

    Rows with no mass become uniform.
    """
    c = np.asarray(pair_counts, dtype=float)
    totals = c.sum(axis=1)
    a = np.full_like(c, 1.0 / c.shape[1])
    live = totals > 0
    a[live] = c[live] / totals[live, None]
    notes = [f"transition row {i} has no counts; set uniform" for i in np.flatnonzero(~live)]
    return a, notes


def transition_terms(a, pair_counts, alpha=0.0, rho=DEFAULT_RHO, anchor=None, alpha_a=0.0):
    """``(sum C log A, alpha log det K(A), -alpha_a ||A - anchor||^2)``.

    Entries with zero count contribute nothing, whatever ``A_ij``.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(pair_counts, dtype=float)
    mask = c > 0
    with np.errstate(divide="ignore"):
        counts = float(np.sum(c[mask] * np.log(a[mask])))
    logdet = alpha * log_det_kernel(a, rho) if alpha > 0 else 0.0
    penalty = 0.0
    if anchor is not None and alpha_a > 0:
        penalty = -alpha_a * float(np.sum((a - anchor) ** 2))
    return counts, logdet, penalty


def transition_objective(a, pair_counts, alpha=0.0, rho=DEFAULT_RHO, anchor=None, alpha_a=0.0):
    """``sum_ij C_ij log A_ij + alpha log det K(A) - alpha_a ||A - anchor||^2``."""
    return float(sum(transition_terms(a, pair_counts, alpha, rho, anchor, alpha_a)))


def _transition_gradient(a, pair_counts, alpha, rho, anchor, alpha_a):
    grad = np.asarray(pair_counts, dtype=float) / a
    if alpha > 0:
        grad = grad + alpha * log_det_gradient(a, rho)
    if anchor is not None and alpha_a > 0:
        grad = grad - 2.0 * alpha_a * (a - anchor)
    return grad


@dataclass
class InnerResult:
    values: list
    terms: list
    converged: bool
    n_iter: int


def update_transitions_diversified(pair_counts, a_old, config, anchor=None):
    """Projected gradient ascent on the transition sub-objective.

    Each iteration steps along the gradient, projects every row onto the
    simplex, lifts entries to at least ``config.interior_floor`` and keeps the
    candidate only if the objective strictly increases; otherwise the step is
    shrunk by ``backtrack_factor``. Successive searches start from twice the
    last accepted step (capped at ``init_step``). Iteration stops once an
    accepted step gains less than ``inner_tol``.

    Returns
    -------
    a : ndarray
        Updated row-stochastic matrix.
    result : InnerResult
        Accepted objective values (non-decreasing) and convergence flag.
    """
    cfg = config
    a = _interior(np.asarray(a_old, dtype=float), cfg.interior_floor)

    def objective(m):
        parts = transition_terms(m, pair_counts, cfg.alpha, cfg.rho, anchor, cfg.alpha_a)
        return float(sum(parts)), parts

    value, parts = objective(a)
    values = [value]
    terms = [parts]
    step = cfg.init_step
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.inner_max_iters + 1):
        grad = _transition_gradient(a, pair_counts, cfg.alpha, cfg.rho, anchor, cfg.alpha_a)
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            cand = _interior(project_to_simplex(a + step * grad), cfg.interior_floor)
            cand_value, cand_parts = objective(cand)
            if cand_value > value:
                accepted = True
                break
            step *= cfg.backtrack_factor
        if not accepted:
            break
        gain = cand_value - value
        a, value = cand, cand_value
        values.append(value)
        terms.append(cand_parts)
        step = min(cfg.init_step, 2.0 * step)
        if gain < cfg.inner_tol:
            converged = True
            break
    return a, InnerResult(values, terms, converged, n_iter)


def _verify_gradient(k, rho, seed=2024, probes=3):
    rng = np.random.default_rng(seed)
    for _ in range(probes):
        a = 0.5 * np.eye(k) + 0.5 * rng.dirichlet(np.full(k, 2.0), size=k)
        err = check_gradient(a, rho)
        if not err <= GRADIENT_CHECK_TOL:
            raise TrainingError(
                f"log-det gradient self-check failed (max rel. error {err:.3g} > {GRADIENT_CHECK_TOL:g})")


# --------------------------------------------------------------------------
# unsupervised MAP-EM


def em_fit_unsupervised(sequences, k, emission_spec, config, rng=None, init=None):
    """MAP-EM for ``log P(Y) + alpha log det K(A)``.

    Parameters
    ----------
    sequences : list of ObservationSequence or arrays
    k : int
        Number of hidden states.
    emission_spec : EmissionSpec
    config : TrainConfig
    rng : Generator or int, optional
        Source of the random initialisation; defaults to ``config.seed``.
    init : HmmParams, optional
        Starting parameters; skips random initialisation.

    Returns
    -------
    TrainedModel
        Stops when the objective changes by less than ``em_tol`` or after
        ``max_em_iters`` iterations. ``alpha == 0`` is plain Baum-Welch.
    """
    if len(sequences) == 0:
        raise ValueError("dataset is empty")
    params = init if init is not None else init_params(k, emission_spec, config, rng)
    if params.k != k:
        raise ValueError(f"initial parameters have k={params.k}, expected {k}")
    alpha = config.alpha
    if alpha > 0:
        _verify_gradient(k, config.rho)
    threads = config.threads()
    trace = ObjectiveTrace()
    converged = False
    previous = None
    for it in range(config.max_em_iters):
        stats = e_step(params, sequences, n_threads=threads)
        logdet_term = alpha * log_det_kernel(params.a, config.rho) if alpha > 0 else 0.0
        objective = stats.log_likelihood + logdet_term
        if not np.isfinite(objective):
            raise TrainingError(
                f"non-finite objective at iteration {it}: loglik={stats.log_likelihood}, "
                f"logdet term={logdet_term}")
        trace.record(stats.log_likelihood, logdet_term)
        if previous is not None and abs(objective - previous) < config.em_tol:
            converged = True
            break
        previous = objective

        pi = m_step_pi(stats)
        b, notes = m_step_emissions(stats, params.b, config.pseudocount)
        trace.note(it, notes)
        if alpha > 0:
            a, inner = update_transitions_diversified(stats.pair_counts, params.a, config)
            trace.inner.append(inner.values)
        else:
            a, notes = update_transitions_closed_form(stats.pair_counts)
            trace.note(it, notes)
        params = HmmParams(pi, a, b)
    for msg in trace.notes:
        if "variance floored" in msg:
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
            break
    return TrainedModel(params, trace, config, converged)


# --------------------------------------------------------------------------
# supervised


def count_statistics(sequences, k, emission_spec, pseudocount=0.0):
    """Count-based MLE ``(pi0, A0, B0)`` from fully labelled sequences.

    Returns ``(params, pair_counts, notes)``. States never seen as a source of
    a transition get a uniform row; states never observed keep template
    emissions (pooled moments, uniform, or 0.5).
    """
    if len(sequences) == 0:
        raise ValueError("dataset is empty")
    template = emission_spec.template(k)
    start = np.zeros(k)
    pairs = np.zeros((k, k))
    em = EmissionStats.zeros(template)
    for n, seq in enumerate(sequences):
        if seq.labels is None:
            raise ValueError(f"sequence {n} is not labelled")
        x = seq.labels
        if np.any((x < 0) | (x >= k)):
            raise ValueError(f"sequence {n} has labels outside [0, {k})")
        obs = check_observations(seq.obs, template)
        start[x[0]] += 1
        np.add.at(pairs, (x[:-1], x[1:]), 1.0)
        em.accumulate(obs, np.eye(k)[x])
    pi0 = start / start.sum()
    a0, notes = update_transitions_closed_form(pairs)
    b0, em_notes = type(template).from_stats(em, template, pseudocount=pseudocount)
    notes = notes + em_notes
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return HmmParams(pi0, a0, b0), pairs, notes


def fit_supervised(sequences, k, emission_spec, config):
    """Counted ``pi`` and ``B``; ``A`` refined from ``A0`` by projected gradient ascent.

    The trace has one row per accepted step. ``loglik_bound`` holds the
    complete-data log-likelihood minus the anchor penalty, ``logdet_term`` the
    weighted prior term.
    """
    base, pairs, notes = count_statistics(sequences, k, emission_spec, config.pseudocount)
    a0 = base.a
    if config.alpha > 0:
        _verify_gradient(k, config.rho)
    trace = ObjectiveTrace(notes=list(notes))
    if config.alpha == 0 and config.alpha_a == 0:
        # the counted MLE already maximises the objective
        parts = transition_terms(a0, pairs)
        a, inner = a0, InnerResult([sum(parts)], [parts], True, 0)
    else:
        a, inner = update_transitions_diversified(pairs, a0, config, anchor=a0)
    trace.inner.append(inner.values)
    fixed = _complete_data_constant(sequences, base)
    for counts, logdet, penalty in inner.terms:
        trace.record(fixed + counts + penalty, logdet)
    return TrainedModel(base.replace(a=a), trace, config, inner.converged, counted=base)


def _complete_data_constant(sequences, params):
    """Terms of the complete-data log-likelihood that do not involve ``A``."""
    log_pi = _safe_log(params.pi)
    total = 0.0
    for seq in sequences:
        log_e = params.b.log_prob(seq.obs)
        total += log_pi[seq.labels[0]] + log_e[np.arange(len(seq)), seq.labels].sum()
    return float(total)
