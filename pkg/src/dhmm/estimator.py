"""scikit-learn style estimators wrapping the functional training API."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_family, check_lengths, check_X, split_sequences
from .hmm import ObservationSequence, forward_backward, sample_sequence, viterbi
from .learning import (EmissionSpec, TrainConfig, em_fit_unsupervised, fit_supervised,
                       init_params)

__all__ = ["DiversifiedHMM", "SupervisedDiversifiedHMM"]


class _HMMBase(BaseEstimator):

    def _train_config(self, **overrides):
        random_state = getattr(self, "random_state", None)
        seed = random_state if isinstance(random_state, (int, np.integer)) else 0
        fields = dict(
            alpha=self.alpha,
            max_em_iters=getattr(self, "n_iter", 200),
            em_tol=getattr(self, "tol", 1e-6),
            inner_max_iters=self.inner_max_iter,
            inner_tol=self.inner_tol,
            init_step=self.init_step,
            backtrack_factor=self.backtrack_factor,
            dirichlet_eta=getattr(self, "dirichlet_eta", 3.0),
            rho=self.rho,
            pseudocount=self.pseudocount,
            seed=int(seed),
        )
        fields.update(overrides)
        return TrainConfig(**fields)

    def _sequences(self, X, lengths, y=None):
        check_family(self.emission)
        X = check_X(X, self.emission)
        lengths = check_lengths(lengths, X.shape[0])
        obs = split_sequences(X, lengths)
        if y is None:
            return [ObservationSequence(o) for o in obs]
        y = np.asarray(y, dtype=np.intp).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError("y must have one label per sample")
        return [ObservationSequence(o, lab) for o, lab in zip(obs, split_sequences(y, lengths))]

    def _spec(self, seqs):
        n_symbols = self.n_symbols if self.emission == "categorical" else None
        return EmissionSpec.from_sequences(self.emission, seqs, n_symbols=n_symbols)

    def _set_fitted(self, model):
        self.model_ = model
        self.params_ = model.params
        self.startprob_ = np.array(model.params.pi)
        self.transmat_ = np.array(model.params.a)
        self.emission_ = model.params.b
        self.trace_ = model.trace
        self.converged_ = model.converged
        self.n_iter_ = len(model.trace.em)
        return self

    def decode(self, X, lengths=None):
        """Viterbi paths; returns ``(total log probability, concatenated labels)``."""
        check_is_fitted(self, "params_")
        total = 0.0
        paths = []
        for seq in self._sequences(X, lengths):
            path, score = viterbi(self.params_, seq)
            paths.append(path)
            total += score
        return total, np.concatenate(paths)

    def predict(self, X, lengths=None):
        return self.decode(X, lengths)[1]

    def predict_proba(self, X, lengths=None):
        """Posterior state marginals, one row per sample."""
        check_is_fitted(self, "params_")
        return np.vstack([forward_backward(self.params_, s).unary for s in self._sequences(X, lengths)])

    def score(self, X, lengths=None):
        """Total log-likelihood ``sum_n log P(Y_n)``."""
        check_is_fitted(self, "params_")
        return float(sum(forward_backward(self.params_, s).log_likelihood
                         for s in self._sequences(X, lengths)))

    def sample(self, n_sequences=1, length=10, random_state=None):
        """Draw labelled sequences; returns ``(X, labels, lengths)``."""
        check_is_fitted(self, "params_")
        rng = np.random.default_rng(random_state)
        seqs = [sample_sequence(self.params_, length, rng) for _ in range(n_sequences)]
        X = np.concatenate([s.obs for s in seqs])
        return X, np.concatenate([s.labels for s in seqs]), np.full(n_sequences, length)


class DiversifiedHMM(_HMMBase):
    """HMM with a determinantal diversity prior on the transition rows, fit by MAP-EM.

    Parameters
    ----------
    n_states : int
        Number of hidden states.
    emission : {"gaussian", "categorical", "bernoulli"}
    alpha : float
        Weight of ``log det K(A)``; 0 gives plain Baum-Welch.
    n_iter, tol : int, float
        EM iteration cap and objective-change stopping threshold.
    inner_max_iter, inner_tol, init_step, backtrack_factor
        Projected-gradient settings of the transition update.
    dirichlet_eta : float
        Concentration of the Dirichlet used to initialise ``pi`` and ``A``.
    rho : float
        Exponent of the probability product kernel.
    pseudocount : float
        Additive smoothing for categorical/Bernoulli emission updates.
    n_symbols : int, optional
        Vocabulary size for categorical emissions (default: max symbol + 1).
    random_state : int, optional
        Seed of the random initialisation.

    Attributes
    ----------
    startprob_, transmat_ : ndarray
    emission_ : emission model
    params_ : HmmParams
    trace_ : ObjectiveTrace
    converged_ : bool
    """

    def __init__(self, n_states=5, emission="gaussian", alpha=1.0, n_iter=200, tol=1e-6,
                 inner_max_iter=50, inner_tol=1e-6, init_step=1.0, backtrack_factor=0.5,
                 dirichlet_eta=3.0, rho=0.5, pseudocount=0.0, n_symbols=None,
                 random_state=None):
        self.n_states = n_states
        self.emission = emission
        self.alpha = alpha
        self.n_iter = n_iter
        self.tol = tol
        self.inner_max_iter = inner_max_iter
        self.inner_tol = inner_tol
        self.init_step = init_step
        self.backtrack_factor = backtrack_factor
        self.dirichlet_eta = dirichlet_eta
        self.rho = rho
        self.pseudocount = pseudocount
        self.n_symbols = n_symbols
        self.random_state = random_state

    def fit(self, X, y=None, lengths=None):
        """Fit on unlabelled sequences. ``y`` is ignored (pipeline compatibility)."""
        seqs = self._sequences(X, lengths)
        spec = self._spec(seqs)
        config = self._train_config()
        init = init_params(self.n_states, spec, config, np.random.default_rng(self.random_state))
        return self._set_fitted(em_fit_unsupervised(seqs, self.n_states, spec, config, init=init))


class SupervisedDiversifiedHMM(_HMMBase):
    """Count-trained HMM whose transition matrix is refined under the diversity prior.

    ``alpha_a`` ties the refined matrix to the counted one through
    ``-alpha_a ||A - A0||^2``. ``counted_transmat_`` keeps ``A0``.
    """

    def __init__(self, n_states=26, emission="bernoulli", alpha=10.0, alpha_a=1e5,
                 inner_max_iter=500, inner_tol=1e-6, init_step=1.0, backtrack_factor=0.5,
                 rho=0.5, pseudocount=0.0, n_symbols=None):
        self.n_states = n_states
        self.emission = emission
        self.alpha = alpha
        self.alpha_a = alpha_a
        self.inner_max_iter = inner_max_iter
        self.inner_tol = inner_tol
        self.init_step = init_step
        self.backtrack_factor = backtrack_factor
        self.rho = rho
        self.pseudocount = pseudocount
        self.n_symbols = n_symbols

    def fit(self, X, y, lengths=None):
        seqs = self._sequences(X, lengths, y)
        if np.any(np.concatenate([s.labels for s in seqs]) >= self.n_states):
            raise ValueError(f"labels must lie in [0, {self.n_states})")
        spec = self._spec(seqs)
        model = fit_supervised(seqs, self.n_states, spec, self._train_config(alpha_a=self.alpha_a))
        self._set_fitted(model)
        self.counted_transmat_ = np.array(model.counted.a)
        return self
