"""Independent reference computations written with plain Python loops.

These share no code with the package and are used as oracles for the
numerical routines: each mirrors a formula directly, term by term.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter


def soft_assign_row(d2, alpha):
    kern = [(1.0 + d / alpha) ** (-(alpha + 1.0) / 2.0) for d in d2]
    total = sum(kern)
    return [k / total for k in kern]


def restricted_entropy(row, subset):
    sub = [row[i] for i in subset]
    total = sum(sub)
    h = 0.0
    for p in sub:
        q = p / total
        if q > 0:
            h -= q * math.log(q)
    return h


def ctfidf_weight(cluster_tokens, term, cluster):
    """Weight of ``term`` in ``cluster``; ``cluster_tokens`` maps cluster -> token list."""
    tf = cluster_tokens[cluster].count(term)
    if tf == 0:
        return 0.0
    totals = [len(toks) for toks in cluster_tokens.values() if toks]
    avg = sum(totals) / len(totals)
    cf = sum(1 for toks in cluster_tokens.values() if term in toks)
    return tf / len(cluster_tokens[cluster]) * math.log(1.0 + avg / cf)


def coherence(topics, docs, eps=1e-12):
    n = len(docs)

    def p(*words):
        return sum(1 for d in docs if all(w in d for w in words)) / n + eps

    scores = []
    for words in topics:
        total = 0.0
        for a, b in itertools.combinations(words, 2):
            pab = p(a, b)
            npmi = 1.0 if pab >= 1.0 else math.log(pab / (p(a) * p(b))) / -math.log(pab)
            total += npmi * math.log(pab)
        scores.append(total / len(words) if len(words) > 1 else 0.0)
    return sum(scores) / len(scores)


def diversity(topics, k):
    unique = set()
    for t in topics:
        unique.update(t[:k])
    return len(unique) / (k * len(topics))


def _groups(points, labels):
    groups = {}
    for x, l in zip(points, labels):
        groups.setdefault(l, []).append(x)
    return groups


def _mean(vectors):
    dim = len(vectors[0])
    return [sum(v[i] for v in vectors) / len(vectors) for i in range(dim)]


def _sq(a, b):
    return sum((x - y) ** 2 for x, y in zip(a, b))


def chi(points, labels):
    groups = _groups(points, labels)
    n, k = len(points), len(groups)
    grand = _mean(points)
    between = sum(len(g) * _sq(_mean(g), grand) for g in groups.values())
    within = sum(_sq(x, _mean(g)) for g in groups.values() for x in g)
    return between / within * (n - k) / (k - 1)


def dbi(points, labels):
    groups = list(_groups(points, labels).values())
    cents = [_mean(g) for g in groups]
    spread = [sum(math.sqrt(_sq(x, c)) for x in g) / len(g) for g, c in zip(groups, cents)]
    k = len(groups)
    total = 0.0
    for i in range(k):
        total += max((spread[i] + spread[j]) / math.sqrt(_sq(cents[i], cents[j])) for j in range(k) if j != i)
    return total / k


def accuracy_brute_force(pred, gold):
    p_ids, g_ids = sorted(set(pred)), sorted(set(gold))
    best = 0
    # map each predicted cluster to a distinct gold label (pad with None when short)
    pad = g_ids + [None] * max(0, len(p_ids) - len(g_ids))
    for perm in itertools.permutations(pad, len(p_ids)):
        mapping = dict(zip(p_ids, perm))
        best = max(best, sum(1 for a, b in zip(pred, gold) if mapping[a] == b))
    return best / len(pred)


def nmi(pred, gold):
    n = len(pred)
    cp, cg, joint = Counter(pred), Counter(gold), Counter(zip(pred, gold))
    hp = -sum(c / n * math.log(c / n) for c in cp.values())
    hg = -sum(c / n * math.log(c / n) for c in cg.values())
    mi = sum(c / n * math.log((c / n) / ((cp[a] / n) * (cg[b] / n))) for (a, b), c in joint.items())
    if hp == 0 and hg == 0:
        return 1.0
    if hp == 0 or hg == 0:
        return 0.0
    return mi / math.sqrt(hp * hg)


def ari_pair_counting(pred, gold):
    """Adjusted Rand index by enumerating every item pair."""
    n = len(pred)
    both = same_p = same_g = 0
    for i, j in itertools.combinations(range(n), 2):
        sp, sg = pred[i] == pred[j], gold[i] == gold[j]
        same_p += sp
        same_g += sg
        both += sp and sg
    pairs = n * (n - 1) / 2
    expected = same_p * same_g / pairs
    top = (same_p + same_g) / 2
    if top == expected:
        return 1.0
    return (both - expected) / (top - expected)
