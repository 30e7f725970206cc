"""Pure numpy versions of the compiled kernels; same signatures and results
up to summation order."""

import numpy as np

_CHUNK = 512


def kernel_sums(X, Y, coef, same, nthreads=1):
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    coef = np.asarray(coef, dtype=np.float64)
    total = np.zeros(coef.shape[0])
    for start in range(0, X.shape[0], _CHUNK):
        block = X[start:start + _CHUNK]
        d2 = np.sum((block[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
        for k, c in enumerate(coef):
            total[k] += np.exp(-c * d2).sum()
    if same:
        # diagonal distances are exactly zero, so each contributes exp(0) = 1
        total -= X.shape[0]
    return total


def mog_eval(X, means, log_w, var, want_hessian=True):
    X = np.asarray(X, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    n, d = X.shape
    U = (means[None, :, :] - X[:, None, :]) / var  # (n, K, d)
    comp = np.asarray(log_w)[None, :] - 0.5 * var * np.sum(U * U, axis=-1)
    mx = comp.max(axis=1, keepdims=True)
    w = np.exp(comp - mx)
    tot = w.sum(axis=1, keepdims=True)
    logp = (mx + np.log(tot))[:, 0] - 0.5 * d * np.log(2.0 * np.pi * var)
    r = w / tot
    score = np.einsum("nk,nkd->nd", r, U)
    if not want_hessian:
        return logp, score, np.zeros((0, d, d))
    C = U - score[:, None, :]
    hess = np.einsum("nk,nka,nkb->nab", r, C, C) - np.eye(d)[None] / var
    return logp, score, hess
