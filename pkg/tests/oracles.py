"""Independent reference implementations used to freeze expected values.

Written in plain Python (loops, sets, ``math``) without calling into the
package's numerical code, so an agreement is evidence rather than a tautology.
"""

import itertools
import math


def pair_counts(visits):
    """Visit count, per-code counts and unordered pair counts by enumeration."""
    counts, pairs = {}, {}
    for v in visits:
        s = sorted(set(v))
        for c in s:
            counts[c] = counts.get(c, 0) + 1
        for a, b in itertools.combinations(s, 2):
            pairs[(a, b)] = pairs.get((a, b), 0) + 1
    return len(visits), counts, pairs


def pmi_edges(visits, zeta):
    """``{(i, j): pmi}`` for i < j with PMI strictly above ``zeta``."""
    n, counts, pairs = pair_counts(visits)
    out = {}
    for (a, b), c in pairs.items():
        value = math.log(c * n / (counts[a] * counts[b]))
        if value > zeta:
            out[(a, b)] = value
    return out


def set_metrics(truth, predicted):
    truth, predicted = set(truth), set(predicted)
    inter = len(truth & predicted)
    union = len(truth | predicted)
    jac = 1.0 if union == 0 else inter / union
    if predicted:
        p = inter / len(predicted)
    else:
        p = 1.0 if not truth else 0.0
    if truth:
        r = inter / len(truth)
    else:
        r = 1.0 if not predicted else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return jac, p, r, f


def average_precision(scores, labels):
    """Rank enumeration: walk items by decreasing score (ties by index), sum precision at hits."""
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    n_pos = sum(1 for x in labels if x)
    if n_pos == 0:
        return None
    hits, total = 0, 0.0
    for rank, k in enumerate(order, 1):
        if labels[k]:
            hits += 1
            total += hits / rank
    return total / n_pos


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def gru_scalar(w_ih, w_hh, b_ih, b_hh, inputs):
    """Step-by-step GRU with explicit index loops; gate blocks ordered reset, update, candidate.

    ``w_ih`` is in_dim x 3H, ``w_hh`` is H x 3H, biases have length 3H.
    Returns the list of hidden-state vectors.
    """
    hidden = len(w_hh)
    h = [0.0] * hidden
    states = []
    for x in inputs:
        gi = [sum(x[a] * w_ih[a][k] for a in range(len(x))) + b_ih[k] for k in range(3 * hidden)]
        gh = [sum(h[a] * w_hh[a][k] for a in range(hidden)) + b_hh[k] for k in range(3 * hidden)]
        new = []
        for u in range(hidden):
            r = _sig(gi[u] + gh[u])
            z = _sig(gi[hidden + u] + gh[hidden + u])
            n = math.tanh(gi[2 * hidden + u] + r * gh[2 * hidden + u])
            new.append((1 - z) * n + z * h[u])
        h = new
        states.append(h)
    return states


def gat_head(features, weight, a_center, a_neighbor, center, neighborhood, slope, act):
    """One attention head for one center, straight from the formula."""
    def project(v):
        return [sum(v[a] * weight[a][k] for a in range(len(v))) for k in range(len(weight[0]))]

    wc = project(features[center])
    scores = []
    for j in neighborhood:
        wj = project(features[j])
        e = sum(a_center[k] * wc[k] for k in range(len(wc))) + sum(a_neighbor[k] * wj[k] for k in range(len(wj)))
        scores.append(e if e > 0 else slope * e)
    top = max(scores)
    exps = [math.exp(s - top) for s in scores]
    alphas = [x / sum(exps) for x in exps]
    out = [0.0] * len(wc)
    for alpha, j in zip(alphas, neighborhood):
        wj = project(features[j])
        for k in range(len(out)):
            out[k] += alpha * wj[k]
    return [act(v) for v in out], alphas
