"""HMM parameters, exact inference, decoding and sampling.

Forward-backward runs on per-timestep rescaled messages: emission rows are
shifted by their max in log space before exponentiation and the forward
mass is renormalised at every step, so the log-likelihood is the sum of the
log scales plus the log shifts. Sequences of equal length are processed as
one batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .emissions import FAMILIES, check_observations

__all__ = [
    "HmmParams",
    "ObservationSequence",
    "PosteriorMarginals",
    "NumericalUnderflowError",
    "forward_backward",
    "sequence_log_likelihood",
    "joint_log_likelihood",
    "viterbi",
    "sample_sequence",
]

_SIMPLEX_ATOL = 1e-12


class NumericalUnderflowError(ArithmeticError):
    """Every state has zero probability at some timestep."""

    def __init__(self, t, sequence=None):
        self.t = t
        self.sequence = sequence
        where = f"timestep {t}" if sequence is None else f"sequence {sequence}, timestep {t}"
        super().__init__(f"total forward probability is zero at {where}")


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _check_distribution(vec, name):
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(vec.sum() - 1.0) > _SIMPLEX_ATOL * max(1, vec.shape[-1]):
        raise ValueError(f"{name} does not sum to 1 (sum={vec.sum()!r})")


@dataclass(frozen=True, eq=False)
class HmmParams:
    """Initial distribution ``pi``, row-stochastic transitions ``a`` and emissions ``b``."""

    pi: np.ndarray
    a: np.ndarray
    b: object

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        a = np.array(self.a, dtype=float)
        k = pi.shape[0]
        if pi.ndim != 1 or a.shape != (k, k) or self.b.n_states != k:
            raise ValueError(
                f"inconsistent dimensions: |pi|={pi.shape}, A={a.shape}, B has {self.b.n_states} states")
        _check_distribution(pi, "initial distribution")
        for i, row in enumerate(a):
            _check_distribution(row, f"transition row {i}")
        pi.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "a", a)

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    @property
    def family(self) -> str:
        return self.b.family

    def replace(self, **changes):
        fields = {"pi": self.pi, "a": self.a, "b": self.b}
        fields.update(changes)
        return HmmParams(**fields)

    def to_dict(self):
        return {"k": self.k, "family": self.family, "pi": self.pi.tolist(),
                "a": self.a.tolist(), **self.b.to_dict()}

    @classmethod
    def from_dict(cls, d):
        family = d["family"]
        if family not in FAMILIES:
            raise ValueError(f"unknown emission family {family!r}")
        if family == "gaussian":
            b = FAMILIES[family](d["means"], d["stds"])
        elif family == "categorical":
            b = FAMILIES[family](d["b"])
        else:
            b = FAMILIES[family](d["p"])
        params = cls(d["pi"], d["a"], b)
        if "k" in d and d["k"] != params.k:
            raise ValueError(f"declared k={d['k']} but arrays have k={params.k}")
        return params


@dataclass(frozen=True, eq=False)
class ObservationSequence:
    """One observation sequence, optionally with gold state labels."""

    obs: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        obs = np.asarray(self.obs)
        if obs.shape[0] < 1:
            raise ValueError("observation sequence must be non-empty")
        obs.setflags(write=False)
        object.__setattr__(self, "obs", obs)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.intp)
            if labels.shape != (obs.shape[0],):
                raise ValueError("labels must have one entry per observation")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.obs.shape[0]


@dataclass(frozen=True, eq=False)
class PosteriorMarginals:
    """``unary[t, i] = q(X_t=i)``, ``pairwise[t, i, j] = q(X_t=i, X_{t+1}=j)``."""

    unary: np.ndarray
    pairwise: np.ndarray
    log_likelihood: float


def _as_obs(seq):
    return seq.obs if isinstance(seq, ObservationSequence) else np.asarray(seq)


def _forward_backward_batch(log_pi, a, log_e, want_pairwise=True):
    """Scaled forward-backward over a batch of equal-length sequences.

    ``log_e`` has shape ``(N, T, k)``. Returns unary ``(N, T, k)``, pairwise
    ``(N, T-1, k, k)`` (or the sum over t, ``(N, k, k)``, when
    ``want_pairwise`` is ``"sum"``) and per-sequence log-likelihoods.
    """
    n, t_len, k = log_e.shape
    shift = log_e.max(axis=2)
    bad = np.isneginf(shift)
    if bad.any():
        seq, t = np.argwhere(bad)[0]
        raise NumericalUnderflowError(int(t), int(seq))
    e = np.exp(log_e - shift[:, :, None])
    pi = np.exp(log_pi)

    alpha = np.empty((n, t_len, k))
    scale = np.empty((n, t_len))
    f = pi * e[:, 0]
    for t in range(t_len):
        if t > 0:
            f = (alpha[:, t - 1] @ a) * e[:, t]
        c = f.sum(axis=1)
        if np.any(c <= 0):
            raise NumericalUnderflowError(t, int(np.flatnonzero(c <= 0)[0]))
        scale[:, t] = c
        alpha[:, t] = f / c[:, None]

    beta = np.empty((n, t_len, k))
    beta[:, -1] = 1.0
    for t in range(t_len - 2, -1, -1):
        beta[:, t] = ((e[:, t + 1] * beta[:, t + 1]) @ a.T) / scale[:, t + 1, None]

    unary = alpha * beta
    unary /= unary.sum(axis=2, keepdims=True)

    if t_len > 1:
        nxt = e[:, 1:] * beta[:, 1:] / scale[:, 1:, None]
        if want_pairwise == "sum":
            pair = np.einsum("nti,ij,ntj->nij", alpha[:, :-1], a, nxt)
        else:
            pair = alpha[:, :-1, :, None] * a[None, None] * nxt[:, :, None, :]
            pair /= pair.sum(axis=(2, 3), keepdims=True)
    else:
        pair = np.zeros((n, k, k)) if want_pairwise == "sum" else np.zeros((n, 0, k, k))

    loglik = np.log(scale).sum(axis=1) + shift.sum(axis=1)
    return unary, pair, loglik


def _log_emissions(params, obs):
    return params.b.log_prob(obs)


def forward_backward(params, seq):
    """Exact posterior marginals of one sequence.

    Returns
    -------
    PosteriorMarginals
        Unary ``(T, k)`` and pairwise ``(T-1, k, k)`` marginals plus
        ``log P(Y | params)``.

    Raises
    ------
    NumericalUnderflowError
        If the forward mass vanishes at some timestep.
    """
    obs = check_observations(_as_obs(seq), params.b)
    log_e = _log_emissions(params, obs)[None]
    unary, pair, ll = _forward_backward_batch(_safe_log(params.pi), params.a, log_e)
    return PosteriorMarginals(unary[0], pair[0], float(ll[0]))


def sequence_log_likelihood(params, seq):
    """``log P(Y | params)``, the normaliser computed by :func:`forward_backward`."""
    return forward_backward(params, seq).log_likelihood


def joint_log_likelihood(params, seq, labels=None):
    """``log P(X, Y | params)`` for a labelled path; ``-inf`` for impossible paths."""
    obs = check_observations(_as_obs(seq), params.b)
    if labels is None:
        labels = seq.labels
    if labels is None:
        raise ValueError("joint likelihood needs state labels")
    x = np.asarray(labels, dtype=np.intp)
    if x.shape != (obs.shape[0],) or np.any((x < 0) | (x >= params.k)):
        raise ValueError("labels must be state indices with one entry per observation")
    log_a = _safe_log(params.a)
    log_e = _log_emissions(params, obs)
    total = _safe_log(params.pi[x[0]])
    total += log_a[x[:-1], x[1:]].sum()
    total += log_e[np.arange(len(x)), x].sum()
    return float(total)


def viterbi(params, seq):
    """Most probable state path and its joint log probability.

    Among equally probable paths the lexicographically smallest is returned:
    best suffix scores are computed backwards, then states are chosen
    forwards, each time taking the smallest index that still attains the
    optimum.
    """
    obs = check_observations(_as_obs(seq), params.b)
    log_e = _log_emissions(params, obs)
    log_a = _safe_log(params.a)
    t_len, k = log_e.shape
    # suffix[t, i]: best log score of y_{t+1..T} given x_t = i
    suffix = np.zeros((t_len, k))
    for t in range(t_len - 2, -1, -1):
        suffix[t] = np.max(log_a + (log_e[t + 1] + suffix[t + 1])[None, :], axis=1)
    path = np.empty(t_len, dtype=np.intp)
    cand = _safe_log(params.pi) + log_e[0] + suffix[0]
    for t in range(t_len):
        if t > 0:
            cand = log_a[path[t - 1]] + log_e[t] + suffix[t]
        if np.all(np.isneginf(cand)):
            raise NumericalUnderflowError(t)
        path[t] = int(np.argmax(cand))
    score = float(_safe_log(params.pi[path[0]]) + log_e[np.arange(t_len), path].sum()
                  + log_a[path[:-1], path[1:]].sum())
    return path, score


def sample_sequence(params, t_len, rng):
    """Draw a labelled sequence of length ``t_len`` from the generative model.

    ``rng`` is a :class:`numpy.random.Generator` or an integer seed.
    """
    if t_len < 1:
        raise ValueError("t_len must be >= 1")
    rng = np.random.default_rng(rng)
    k = params.k
    labels = np.empty(t_len, dtype=np.intp)
    labels[0] = rng.choice(k, p=params.pi)
    for t in range(1, t_len):
        labels[t] = rng.choice(k, p=params.a[labels[t - 1]])
    obs = [params.b.sample(s, rng) for s in labels]
    if params.family == "gaussian":
        obs = np.asarray(obs, dtype=float)
    elif params.family == "categorical":
        obs = np.asarray(obs, dtype=np.intp)
    else:
        obs = np.vstack(obs).astype(np.uint8)
    return ObservationSequence(obs, labels)
