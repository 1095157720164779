"""Brute-force reference implementations used as test oracles.

Everything here is deliberately naive: exhaustive path enumeration, active-set
enumeration for the simplex QP, permutation enumeration for alignment and
central finite differences.
"""

import itertools

import numpy as np
from scipy.special import logsumexp

from dhmm.emissions import BernoulliEmission, CategoricalEmission, GaussianEmission
from dhmm.hmm import HmmParams, ObservationSequence


def random_params(rng, k, family, n_symbols=4, n_features=3, dirichlet=1.0):
    pi = rng.dirichlet(np.full(k, dirichlet))
    a = rng.dirichlet(np.full(k, dirichlet), size=k)
    if family == "gaussian":
        b = GaussianEmission(rng.normal(0.0, 2.0, size=k), rng.uniform(0.5, 2.0, size=k))
    elif family == "categorical":
        b = CategoricalEmission(rng.dirichlet(np.ones(n_symbols), size=k))
    else:
        b = BernoulliEmission(rng.uniform(0.05, 0.95, size=(k, n_features)))
    return HmmParams(pi, a, b)


def random_observations(rng, params, t_len):
    b = params.b
    if b.family == "gaussian":
        obs = rng.normal(0.0, 2.5, size=t_len)
    elif b.family == "categorical":
        obs = rng.integers(0, b.probs.shape[1], size=t_len)
    else:
        obs = rng.integers(0, 2, size=(t_len, b.probs.shape[1])).astype(np.uint8)
    return ObservationSequence(obs)


def path_log_joint(params, log_e, path):
    with np.errstate(divide="ignore"):
        log_pi, log_a = np.log(params.pi), np.log(params.a)
    s = log_pi[path[0]] + log_e[0, path[0]]
    for t in range(1, len(path)):
        s += log_a[path[t - 1], path[t]] + log_e[t, path[t]]
    return s


def enumerate_posteriors(params, seq):
    """Exact marginals and log-likelihood by summing over all k**T paths."""
    k, t_len = params.k, len(seq)
    log_e = params.b.log_prob(seq.obs)
    paths = list(itertools.product(range(k), repeat=t_len))
    logs = np.array([path_log_joint(params, log_e, p) for p in paths])
    loglik = logsumexp(logs)
    w = np.exp(logs - loglik)
    unary = np.zeros((t_len, k))
    pairwise = np.zeros((max(t_len - 1, 0), k, k))
    for p, wp in zip(paths, w):
        for t in range(t_len):
            unary[t, p[t]] += wp
        for t in range(t_len - 1):
            pairwise[t, p[t], p[t + 1]] += wp
    return unary, pairwise, loglik


def enumerate_viterbi(params, seq):
    """Best path; ``itertools.product`` order makes the first maximum the lexicographically smallest."""
    log_e = params.b.log_prob(seq.obs)
    best, best_path = -np.inf, None
    for p in itertools.product(range(params.k), repeat=len(seq)):
        s = path_log_joint(params, log_e, p)
        if best_path is None or s > best:
            best, best_path = s, p
    return np.array(best_path), best


def simplex_qp_oracle(v):
    """Nearest simplex point by enumerating every support set.

    For a fixed support S the equality-constrained problem has the closed
    form ``x_S = v_S - (sum(v_S) - 1) / |S|``; the feasible candidate with the
    smallest distance is the projection.
    """
    v = np.asarray(v, dtype=float)
    k = v.size
    best, best_x = np.inf, None
    for r in range(1, k + 1):
        for support in itertools.combinations(range(k), r):
            idx = list(support)
            x = np.zeros(k)
            x[idx] = v[idx] - (v[idx].sum() - 1.0) / r
            if np.all(x >= -1e-15):
                d = np.sum((x - v) ** 2)
                if d < best:
                    best, best_x = d, np.maximum(x, 0.0)
    return best_x


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def brute_force_alignment(pred, gold, k):
    """Best matched count over all permutations, lexicographically smallest on ties."""
    pred, gold = np.concatenate(pred), np.concatenate(gold)
    best, best_perm = -1, None
    for perm in itertools.permutations(range(k)):
        matched = int(np.sum(np.asarray(perm)[pred] == gold))
        if matched > best:
            best, best_perm = matched, perm
    return np.array(best_perm), best
