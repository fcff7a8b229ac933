"""Sequential inner loops compiled with numba.

Gibbs sweeps and the Gauss-Seidel variational sweeps carry a data
dependency from one site to the next, so they cannot be vectorized.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def potts_sweep(states, nbr, beta, K, uniforms):
    """One raster-scan Gibbs sweep, in place, for every chain (row of ``states``)."""
    C, N = states.shape
    logits = np.empty(K)
    for c in range(C):
        for i in range(N):
            for k in range(K):
                logits[k] = 0.0
            for m in range(4):
                j = nbr[i, m]
                if j >= 0:
                    logits[states[c, j]] += beta
            mx = logits.max()
            tot = 0.0
            for k in range(K):
                logits[k] = np.exp(logits[k] - mx)
                tot += logits[k]
            u = uniforms[c, i] * tot
            acc = 0.0
            pick = K - 1
            for k in range(K):
                acc += logits[k]
                if u < acc:
                    pick = k
                    break
            states[c, i] = pick


@njit(cache=True)
def field_mean_sweep(indptr, indices, data, s, s_bar, mu, var, q, mu_bar,
                     class_mean, class_prec, phi_nu):
    """Site-by-site update of the conditional field means.

    ``s_bar`` and ``mu_bar`` are kept consistent after every site.
    """
    N, K = mu.shape
    for i in range(N):
        g = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            g += data[p] * (s[indices[p]] - s_bar[indices[p]])
        m_old = mu_bar[i]
        m_new = 0.0
        for k in range(K):
            mu[i, k] = m_old + var[i, k] * ((class_mean[k] - m_old) * class_prec[k] + phi_nu * g)
            m_new += q[i, k] * mu[i, k]
        delta = m_new - m_old
        mu_bar[i] = m_new
        if delta != 0.0:
            for p in range(indptr[i], indptr[i + 1]):
                s_bar[indices[p]] += data[p] * delta


@njit(cache=True)
def label_sweep(indptr, indices, data, s, s_bar, mu, var, q, mu_bar, static,
                nbr, beta, phi_nu):
    """Site-by-site coordinate-ascent update of the label probabilities.

    ``static[i, k]`` holds the terms that do not depend on other sites;
    the data-fit term and the neighbor term are evaluated against the
    current state of every other site.
    """
    N, K = mu.shape
    logits = np.empty(K)
    for i in range(N):
        g = 0.0
        w2 = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            w = data[p]
            g += w * (s[indices[p]] - s_bar[indices[p]])
            w2 += w * w
        # sum_tau w * (residual with site i removed)
        r = g + w2 * mu_bar[i]
        for k in range(K):
            m = mu[i, k]
            lk = static[i, k] - 0.5 * phi_nu * (w2 * (var[i, k] + m * m) - 2.0 * m * r)
            for n in range(4):
                j = nbr[i, n]
                if j >= 0:
                    lk += beta * q[j, k]
            logits[k] = lk
        mx = logits.max()
        tot = 0.0
        for k in range(K):
            logits[k] = np.exp(logits[k] - mx)
            tot += logits[k]
        m_new = 0.0
        for k in range(K):
            q[i, k] = logits[k] / tot
            m_new += q[i, k] * mu[i, k]
        delta = m_new - mu_bar[i]
        mu_bar[i] = m_new
        if delta != 0.0:
            for p in range(indptr[i], indptr[i + 1]):
                s_bar[indices[p]] += data[p] * delta
