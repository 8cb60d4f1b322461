"""Prior relation graph over all codes from visit-level co-occurrence.

Diagnoses and medications share one node space: diagnosis ``i`` is node
``i`` and medication ``j`` is node ``n_diagnoses + j``. Pairs are counted
without regard to code kind or visit order.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DataError, ParseError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_ZETA = 0.07
ZETA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 11))


class SparsityWarning(UserWarning):
    """The sparsity threshold lies outside ``(0, PMI_max)``."""


@dataclass
class CooccurrenceStats:
    """Counts over visits: ``n_records`` = |R|, ``counts[i]`` = visits holding
    code ``i``, ``pair_counts[i, j]`` = visits holding both (zero diagonal)."""

    n_records: int
    counts: np.ndarray
    pair_counts: np.ndarray

    @property
    def n_codes(self):
        return len(self.counts)


def visit_node_sets(visits, n_diagnoses):
    """Joint node ids of each visit (diagnoses then offset medications)."""
    return [set(v.diagnoses) | {n_diagnoses + m for m in v.medications} for v in visits]


def count_cooccurrence(code_sets, n_codes):
    """Count occurrences and unordered co-occurring pairs per visit.

    ``code_sets`` is an iterable of collections of node ids; repeats within
    a visit count once.
    """
    sets = [sorted(set(s)) for s in code_sets]
    if not sets:
        raise ValidationError("no visits to count")
    incidence = np.zeros((len(sets), n_codes))
    for r, s in enumerate(sets):
        if s and (s[0] < 0 or s[-1] >= n_codes):
            raise ValidationError(f"visit {r} references a code outside 0..{n_codes - 1}")
        incidence[r, s] = 1.0
    co = incidence.T @ incidence
    counts = np.diag(co).astype(np.int64)
    pair = co.astype(np.int64)
    np.fill_diagonal(pair, 0)
    return CooccurrenceStats(len(sets), counts, pair)


def count_visits(visits, n_diagnoses, n_medications):
    return count_cooccurrence(visit_node_sets(visits, n_diagnoses), n_diagnoses + n_medications)


def pmi(stats, i, j):
    """``ln(p(i,j) * |R| / (p(i) * p(j)))``; ``-inf`` when the pair never co-occurs."""
    pi, pj = stats.counts[i], stats.counts[j]
    if pi <= 0 or pj <= 0:
        raise DataError(f"PMI undefined: code {i if pi <= 0 else j} never occurs")
    pij = stats.pair_counts[i, j]
    if pij == 0:
        return -math.inf
    return math.log(pij * stats.n_records / (pi * pj))


def pmi_matrix(stats):
    """All pairwise PMI values; ``-inf`` for pairs that never co-occur or on the diagonal."""
    counts = stats.counts.astype(np.float64)
    pair = stats.pair_counts.astype(np.float64)
    out = np.full(pair.shape, -np.inf)
    nz = pair > 0
    denom = np.outer(counts, counts)
    ratio = pair[nz] * stats.n_records / denom[nz]
    # math.log keeps the matrix bit-identical to the scalar pmi()
    out[nz] = np.fromiter((math.log(r) for r in ratio), dtype=np.float64, count=ratio.size)
    return out


@dataclass
class RelationGraph:
    """Symmetric PMI-weighted adjacency with zero diagonal."""

    adjacency: np.ndarray
    zeta: float
    n_diagnoses: int = 0

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def n_edges(self):
        return int(np.count_nonzero(np.triu(self.adjacency, 1)))

    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return [(int(a), int(b), float(self.adjacency[a, b])) for a, b in zip(i, j)]

    def binarized(self):
        return RelationGraph((self.adjacency > 0).astype(np.float64), self.zeta, self.n_diagnoses)


def build_adjacency(stats, zeta=DEFAULT_ZETA, n_diagnoses=0):
    """Keep PMI as the edge weight where it exceeds ``zeta``, else 0.

    A ``zeta`` outside ``(0, PMI_max)`` only triggers :class:`SparsityWarning`
    so threshold sweeps can probe the boundaries.
    """
    scores = pmi_matrix(stats)
    finite = scores[np.isfinite(scores)]
    pmi_max = float(finite.max()) if finite.size else 0.0
    if not 0.0 < zeta < pmi_max:
        warnings.warn(f"sparsity factor {zeta} outside (0, PMI_max={pmi_max:.4f})", SparsityWarning, stacklevel=2)
    adj = np.where(scores > zeta, scores, 0.0)
    np.fill_diagonal(adj, 0.0)
    logger.info("relation graph: %d nodes, %d edges at zeta=%g", adj.shape[0], int(np.count_nonzero(np.triu(adj, 1))), zeta)
    return RelationGraph(adj, float(zeta), n_diagnoses)


def normalized_adjacency(adjacency):
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise ContractError("adjacency must be non-negative")
    a_hat = a + np.eye(a.shape[0])
    d = a_hat.sum(axis=1)
    inv = 1.0 / np.sqrt(d)
    # outer product keeps the result exactly symmetric
    return a_hat * np.outer(inv, inv)


def format_edges(graph):
    return "".join(f"{i}\t{j}\t{w!r}\n" for i, j, w in graph.edges())


def parse_edges(lines, n_nodes, path="<edges>"):
    adj = np.zeros((n_nodes, n_nodes))
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except (ValueError, IndexError):
            raise ParseError("expected 'i<TAB>j<TAB>weight'", lineno, path) from None
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise ParseError(f"node index out of range 0..{n_nodes - 1}", lineno, path)
        adj[i, j] = adj[j, i] = w
    return adj
