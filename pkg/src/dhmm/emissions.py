"""Emission families: 1-D Gaussian, categorical and independent Bernoulli.

Each family is an immutable container exposing the same small protocol:

* ``log_prob(obs)`` returns a ``(T, k)`` matrix of per-state log densities,
* ``from_stats(stats, previous)`` builds the weighted MLE from accumulated
  sufficient statistics, keeping ``previous`` parameters for states that
  received no posterior mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np

__all__ = [
    "GaussianEmission",
    "CategoricalEmission",
    "BernoulliEmission",
    "EmissionModel",
    "EmissionStats",
    "VARIANCE_FLOOR",
    "emission_log_prob",
    "check_observations",
]

VARIANCE_FLOOR = 1e-8
_LOG_2PI = np.log(2.0 * np.pi)


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


@dataclass(frozen=True, eq=False)
class GaussianEmission:
    """Per-state normal densities with means ``means`` and stddevs ``stds``."""

    means: np.ndarray
    stds: np.ndarray
    family: ClassVar[str] = "gaussian"

    def __post_init__(self):
        means = _frozen(self.means)
        stds = _frozen(self.stds)
        if means.ndim != 1 or means.shape != stds.shape:
            raise ValueError("means and stds must be 1-D arrays of equal length")
        if not np.all(np.isfinite(means)):
            raise ValueError("Gaussian means must be finite")
        if not np.all(stds > 0) or not np.all(np.isfinite(stds)):
            raise ValueError("Gaussian stddevs must be finite and > 0")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    def log_prob(self, obs):
        y = np.asarray(obs, dtype=float).reshape(-1, 1)
        z = (y - self.means) / self.stds
        return -0.5 * (z * z + _LOG_2PI) - np.log(self.stds)

    def sample(self, state, rng):
        return rng.normal(self.means[state], self.stds[state])

    def to_dict(self):
        return {"means": self.means.tolist(), "stds": self.stds.tolist()}

    @classmethod
    def from_stats(cls, stats, previous, pseudocount=0.0):
        w = stats.weight
        means = previous.means.copy()
        var = previous.stds.copy() ** 2
        live = w > 0
        floored = np.zeros(len(w), dtype=bool)
        if np.any(live):
            mu = stats.sum_y[live] / w[live]
            v = stats.sum_y2[live] / w[live] - mu * mu
            floored[live] = v < VARIANCE_FLOOR
            means[live] = mu
            var[live] = np.maximum(v, VARIANCE_FLOOR)
        return cls(means, np.sqrt(var)), _m_step_notes(live, floored)


@dataclass(frozen=True, eq=False)
class CategoricalEmission:
    """Per-state categorical distributions over ``V`` symbols (a ``k x V`` matrix)."""

    probs: np.ndarray
    family: ClassVar[str] = "categorical"

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ValueError("categorical emission matrix must be 2-D")
        if np.any(probs < 0) or not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("categorical emission rows must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.probs.shape[1]

    def log_prob(self, obs):
        idx = np.asarray(obs, dtype=np.intp).reshape(-1)
        return _safe_log(self.probs[:, idx].T)

    def sample(self, state, rng):
        return int(rng.choice(self.n_symbols, p=self.probs[state]))

    def to_dict(self):
        return {"b": self.probs.tolist()}

    @classmethod
    def from_stats(cls, stats, previous, pseudocount=0.0):
        counts = stats.counts + pseudocount
        total = counts.sum(axis=1)
        live = total > 0
        probs = previous.probs.copy()
        probs[live] = counts[live] / total[live, None]
        return cls(probs), _m_step_notes(live)


@dataclass(frozen=True, eq=False)
class BernoulliEmission:
    """Per-state products of independent Bernoulli features (a ``k x D`` matrix of P(pixel=1))."""

    probs: np.ndarray
    family: ClassVar[str] = "bernoulli"

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ValueError("Bernoulli emission matrix must be 2-D")
        if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
            raise ValueError("Bernoulli parameters must lie in [0, 1]")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_features(self) -> int:
        return self.probs.shape[1]

    def log_prob(self, obs):
        y = np.asarray(obs, dtype=float)
        if y.ndim == 1:
            y = y.reshape(1, -1)
        p = self.probs
        log_on = _safe_log(p)
        log_off = _safe_log(1.0 - p)
        # 0 * -inf would give nan; count impossible outcomes separately
        out = y @ np.where(np.isneginf(log_on), 0.0, log_on).T
        out += (1.0 - y) @ np.where(np.isneginf(log_off), 0.0, log_off).T
        impossible = (y @ (p == 0).T) + ((1.0 - y) @ (p == 1).T)
        out[impossible > 0] = -np.inf
        return out

    def sample(self, state, rng):
        return (rng.random(self.n_features) < self.probs[state]).astype(np.uint8)

    def to_dict(self):
        return {"p": self.probs.tolist()}

    @classmethod
    def from_stats(cls, stats, previous, pseudocount=0.0):
        w = stats.weight
        live = w > 0
        probs = previous.probs.copy()
        probs[live] = (stats.sum_y[live] + pseudocount) / (w[live, None] + 2.0 * pseudocount)
        return cls(np.clip(probs, 0.0, 1.0)), _m_step_notes(live)


EmissionModel = Union[GaussianEmission, CategoricalEmission, BernoulliEmission]

FAMILIES = {
    "gaussian": GaussianEmission,
    "categorical": CategoricalEmission,
    "bernoulli": BernoulliEmission,
}


def _m_step_notes(live, floored=None):
    notes = [f"state {i} received no posterior mass; emission parameters kept"
             for i in np.flatnonzero(~live)]
    if floored is not None:
        notes += [f"state {i} variance floored at {VARIANCE_FLOOR:g}"
                  for i in np.flatnonzero(floored)]
    return notes


@dataclass
class EmissionStats:
    """Posterior-weighted emission sufficient statistics.

    ``weight`` is the total posterior mass per state. Gaussian uses
    ``sum_y``/``sum_y2`` (length k), Bernoulli uses ``sum_y`` (k x D) and
    categorical uses ``counts`` (k x V).
    """

    family: str
    weight: np.ndarray
    sum_y: np.ndarray | None = None
    sum_y2: np.ndarray | None = None
    counts: np.ndarray | None = None
    notes: list = field(default_factory=list)

    @classmethod
    def zeros(cls, model):
        k = model.n_states
        if model.family == "gaussian":
            return cls("gaussian", np.zeros(k), np.zeros(k), np.zeros(k))
        if model.family == "categorical":
            return cls("categorical", np.zeros(k), counts=np.zeros((k, model.n_symbols)))
        return cls("bernoulli", np.zeros(k), sum_y=np.zeros((k, model.n_features)))

    def accumulate(self, obs, unary):
        """Add one sequence's observations weighted by its ``(T, k)`` posteriors."""
        self.weight += unary.sum(axis=0)
        if self.family == "gaussian":
            y = np.asarray(obs, dtype=float).reshape(-1)
            self.sum_y += y @ unary
            self.sum_y2 += (y * y) @ unary
        elif self.family == "categorical":
            idx = np.asarray(obs, dtype=np.intp).reshape(-1)
            np.add.at(self.counts.T, idx, unary)
        else:
            self.sum_y += unary.T @ np.asarray(obs, dtype=float)

    def merge(self, other):
        self.weight += other.weight
        for name in ("sum_y", "sum_y2", "counts"):
            mine = getattr(self, name)
            if mine is not None:
                mine += getattr(other, name)


def emission_log_prob(model, y, state):
    """Log density (Gaussian) or log mass (categorical, Bernoulli) of one observation.

    Raises
    ------
    ValueError
        If ``state`` is out of range or ``y`` does not fit the family.
    """
    if not 0 <= state < model.n_states:
        raise ValueError(f"state {state} out of range for k={model.n_states}")
    if model.family == "gaussian":
        if np.ndim(y) != 0:
            raise ValueError("Gaussian observation must be a scalar")
    elif model.family == "categorical":
        if np.ndim(y) != 0 or not 0 <= int(y) < model.n_symbols or int(y) != y:
            raise ValueError(f"categorical observation must be an index in [0, {model.n_symbols})")
    else:
        if np.shape(y) != (model.n_features,):
            raise ValueError(f"Bernoulli observation must have length {model.n_features}")
    return float(model.log_prob(np.asarray([y]))[0, state])


def check_observations(obs, model):
    """Validate an observation array against an emission model; returns a numpy array."""
    if model.family == "gaussian":
        arr = np.asarray(obs, dtype=float)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.ndim != 1 or not np.all(np.isfinite(arr)):
            raise ValueError("Gaussian observations must be a finite 1-D array")
    elif model.family == "categorical":
        arr = np.asarray(obs)
        if arr.ndim == 2 and arr.shape[1] == 1:
            arr = arr[:, 0]
        if arr.ndim != 1 or (arr.size and not np.issubdtype(arr.dtype, np.integer)):
            raise ValueError("categorical observations must be a 1-D integer array")
        if arr.size and (arr.min() < 0 or arr.max() >= model.n_symbols):
            raise ValueError(f"categorical observations must lie in [0, {model.n_symbols})")
        arr = arr.astype(np.intp)
    else:
        arr = np.asarray(obs)
        if arr.ndim != 2 or arr.shape[1] != model.n_features:
            raise ValueError(f"Bernoulli observations must have shape (T, {model.n_features})")
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError("Bernoulli observations must be binary")
        arr = arr.astype(np.uint8)
    if arr.shape[0] < 1:
        raise ValueError("observation sequence must be non-empty")
    return arr
