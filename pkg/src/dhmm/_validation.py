"""Input validation for the estimator API (``X`` plus ``lengths``, hmmlearn style)."""

import numpy as np
from sklearn.utils import check_array

FAMILY_NAMES = ("gaussian", "categorical", "bernoulli")


def check_family(family):
    if family not in FAMILY_NAMES:
        raise ValueError(f"emission must be one of {FAMILY_NAMES}, got {family!r}")
    return family


def check_lengths(lengths, n_samples):
    if lengths is None:
        return np.array([n_samples], dtype=np.intp)
    lengths = np.asarray(lengths, dtype=np.intp).reshape(-1)
    if lengths.size == 0 or np.any(lengths < 1):
        raise ValueError("lengths must be positive integers")
    if lengths.sum() != n_samples:
        raise ValueError(f"lengths sum to {lengths.sum()} but X has {n_samples} samples")
    return lengths


def check_X(X, family):
    """Validate a concatenated observation array for ``family``.

    Gaussian and categorical data are ``(n_samples,)`` or ``(n_samples, 1)``;
    Bernoulli data are ``(n_samples, n_features)`` with 0/1 entries.
    """
    check_family(family)
    if family == "gaussian":
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("Gaussian emissions are 1-D; X must have one feature")
            X = X[:, 0]
        return X
    if family == "categorical":
        X = check_array(X, ensure_2d=False, dtype=None)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("categorical observations must be a single column of symbols")
            X = X[:, 0]
        if not np.issubdtype(X.dtype, np.integer):
            if not np.all(np.equal(np.mod(X, 1), 0)):
                raise ValueError("categorical observations must be integer symbol indices")
        X = X.astype(np.intp)
        if X.min() < 0:
            raise ValueError("categorical observations must be non-negative")
        return X
    X = check_array(X, dtype=None)
    if not np.all((X == 0) | (X == 1)):
        raise ValueError("Bernoulli observations must be binary")
    return X.astype(np.uint8)


def split_sequences(X, lengths):
    bounds = np.cumsum(lengths)[:-1]
    return np.split(X, bounds)
