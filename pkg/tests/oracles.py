"""Independent reference calculations used by the tests.

Nothing here imports the package: these are brute-force or textbook
versions of quantities the package computes in a smarter way.
"""

import itertools
import math


def enumerate_click_probs(q1, q2):
    """Exact (P00, P01, P02, Pc) by summing over every emitter outcome.

    Emitter i sends its photon to detector 1 with probability q1[i], to
    detector 2 with q2[i] and is lost otherwise.  Works with Fractions.
    """
    p = {"00": 0, "s1": 0, "s2": 0, "c": 0}
    for outcome in itertools.product((0, 1, 2), repeat=len(q1)):
        w = 1
        for i, o in enumerate(outcome):
            w *= (1 - q1[i] - q2[i], q1[i], q2[i])[o]
        hit1, hit2 = 1 in outcome, 2 in outcome
        key = "c" if hit1 and hit2 else "s1" if hit1 else "s2" if hit2 else "00"
        p[key] += w
    p00 = p["00"]
    return p00, p00 + p["s2"], p00 + p["s1"], p["c"]


def witness_from_parts(p00, p01, p02):
    return math.sqrt(p01 * p02) - math.sqrt(p00)


def classify_bins(records, n_bins, bin_of):
    """Dictionary-based bin classification: (n_s1, n_s2, n_c)."""
    seen = {}
    for ch, t in records:
        b = bin_of(t)
        if b is None or not 0 <= b < n_bins:
            continue
        seen.setdefault(b, set()).add(ch)
    s1 = sum(1 for v in seen.values() if v == {1})
    s2 = sum(1 for v in seen.values() if v == {2})
    c = sum(1 for v in seen.values() if v == {1, 2})
    return s1, s2, c


def thermal_probs_series(mu, T, terms=400):
    """Thermal click probabilities summed term by term over photon number."""
    pn = [mu**n / (1 + mu) ** (n + 1) for n in range(terms)]
    p01 = math.fsum(p * (1 - T) ** n for n, p in enumerate(pn))
    p02 = math.fsum(p * T**n for n, p in enumerate(pn))
    return pn[0], p01, p02
