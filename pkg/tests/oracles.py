"""Independent brute-force oracles used by the test suite.

Everything here is written directly from the defining formulas with plain
numpy/scipy and deliberately avoids the package's own update machinery, so
it can serve as the reference the implementation is checked against.
"""

import itertools
from collections import defaultdict

import numpy as np
from scipy.stats import multivariate_normal


def all_subsets(items):
    items = list(items)
    for k in range(len(items) + 1):
        yield from itertools.combinations(items, k)


def one_to_one_maps(labels, n_meas):
    """Every map labels -> {0..n_meas} where positive values are distinct."""
    labels = list(labels)
    for values in itertools.product(range(n_meas + 1), repeat=len(labels)):
        positive = [v for v in values if v > 0]
        if len(positive) == len(set(positive)):
            yield dict(zip(labels, values))


def brute_force_joint(prior, births, Z, ps, pd, kappa, F, Q, H, R):
    """Exhaustive joint prediction-update for single-Gaussian tracks.

    Args:
        prior: list of (label, r, mean, cov) prior tracks.
        births: list of (label, r_birth, mean, cov) birth slots.
        Z: list of measurement vectors.
        ps, pd: survival and detection probabilities.
        kappa: clutter intensity (constant).
        F, Q, H, R: linear-Gaussian single-object model.

    Returns:
        dict keyed by (frozenset(labels), tuple(sorted theta items)) with
        normalized weights, aggregated over the prior's subset structure.
    """
    pred = {}
    for label, _, mean, cov in prior:
        pred[label] = (F @ mean, F @ cov @ F.T + Q)
    for label, _, mean, cov in births:
        pred[label] = (np.asarray(mean, dtype=float), np.asarray(cov, dtype=float))

    def psi_bar(label, j):
        if j == 0:
            return 1.0 - pd
        mean, cov = pred[label]
        q = multivariate_normal.pdf(Z[j - 1], H @ mean, H @ cov @ H.T + R)
        return pd * q / kappa

    prior_labels = [t[0] for t in prior]
    prior_r = {t[0]: t[1] for t in prior}
    birth_labels = [b[0] for b in births]
    birth_r = {b[0]: b[1] for b in births}

    raw = defaultdict(float)
    for I in all_subsets(prior_labels):
        w_prior = 1.0
        for label in prior_labels:
            w_prior *= prior_r[label] if label in I else 1.0 - prior_r[label]
        for survivors in all_subsets(I):
            w_surv = w_prior
            for label in I:
                w_surv *= ps if label in survivors else 1.0 - ps
            for born in all_subsets(birth_labels):
                w_birth = w_surv
                for label in birth_labels:
                    w_birth *= birth_r[label] if label in born else 1.0 - birth_r[label]
                i_plus = list(survivors) + list(born)
                for theta in one_to_one_maps(i_plus, len(Z)):
                    w = w_birth
                    for label, j in theta.items():
                        w *= psi_bar(label, j)
                    key = (frozenset(i_plus), tuple(sorted(theta.items())))
                    raw[key] += w
    total = sum(raw.values())
    return {key: w / total for key, w in raw.items()}


def brute_force_lmb_existence(hypotheses):
    """Existence probabilities summed straight over hypothesis weights.

    Args:
        hypotheses: mapping (frozenset(labels), theta key) -> weight.

    Returns:
        dict label -> sum of weights of hypotheses containing the label.
    """
    out = defaultdict(float)
    for (labels, _), w in hypotheses.items():
        for label in labels:
            out[label] += w
    return dict(out)


def ospa_brute_force(X, Y, c, p):
    """OSPA by direct minimization over all assignment permutations."""
    m, n = len(X), len(Y)
    if m == 0 and n == 0:
        return 0.0, 0.0, 0.0
    if m == 0 or n == 0:
        return c, 0.0, c
    if m > n:
        X, Y = Y, X
        m, n = n, m
    best = np.inf
    for perm in itertools.permutations(range(n), m):
        cost = sum(
            min(c, np.linalg.norm(np.asarray(X[i]) - np.asarray(Y[j]))) ** p
            for i, j in enumerate(perm)
        )
        best = min(best, cost)
    loc = (best / n) ** (1.0 / p)
    card = (c**p * (n - m) / n) ** (1.0 / p)
    total = ((best + c**p * (n - m)) / n) ** (1.0 / p)
    return total, loc, card
