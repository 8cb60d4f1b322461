"""Graph encoders: multi-head attention over ontology neighborhoods and the
degree-normalized weighted convolution used on the relation graph."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .exceptions import ConfigError, ContractError, DimensionError
from .relation_graph import normalized_adjacency


class EmbeddingSource(enum.IntEnum):
    INITIAL = 0
    ONTOLOGY_AUGMENTED = 1
    RELATION_AUGMENTED = 2
    SUPERVISED = 3


@dataclass
class NodeEmbeddings:
    """Per-node vectors aligned to a node indexing, tagged with their origin."""

    matrix: np.ndarray
    source: EmbeddingSource
    codes: tuple = ()

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.source = EmbeddingSource(self.source)
        if self.codes and len(self.codes) != self.matrix.shape[0]:
            raise DimensionError("NodeEmbeddings", self.matrix.shape, (len(self.codes),))
        if not np.all(np.isfinite(self.matrix)):
            raise ContractError("embedding matrix has non-finite entries")

    @property
    def shape(self):
        return self.matrix.shape


def glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def uniform_table(rng, rows, dim):
    """Embedding rows drawn from U(-1/sqrt(dim), 1/sqrt(dim))."""
    bound = 1.0 / np.sqrt(dim)
    return rng.uniform(-bound, bound, size=(rows, dim))


ACTIVATIONS = {
    "sigmoid": nx.sigmoid,
    "elu": nx.elu,
}


def _activation(name):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


class GatParams:
    """Per-head projections ``W^k`` (in_dim x head_dim) and attention vectors.

    The attention vector ``a`` of each head (length 2*head_dim) is stored
    as its center half and neighbor half, each head_dim x 1.
    """

    def __init__(self, in_dim, n_heads, head_dim, rng=None, leaky_slope=nx.DEFAULT_LEAKY_SLOPE, activation="sigmoid", prefix="gat"):
        if n_heads < 1 or head_dim < 1:
            raise ConfigError("head count and head width must be positive")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.leaky_slope = leaky_slope
        self.activation = activation
        _activation(activation)
        self.weights = []
        self.attn_center = []
        self.attn_neighbor = []
        for k in range(n_heads):
            self.weights.append(nx.parameter(glorot(rng, in_dim, head_dim), f"{prefix}.W{k}"))
            a = glorot(rng, 2 * head_dim, 1)
            self.attn_center.append(nx.parameter(a[:head_dim], f"{prefix}.a{k}.center"))
            self.attn_neighbor.append(nx.parameter(a[head_dim:], f"{prefix}.a{k}.neighbor"))

    @property
    def out_dim(self):
        return self.n_heads * self.head_dim

    def named_parameters(self):
        out = {}
        for k in range(self.n_heads):
            for p in (self.weights[k], self.attn_center[k], self.attn_neighbor[k]):
                out[p.name] = p
        return out


def _check_features(params, features, mask, centers):
    if features.shape[1] != params.in_dim:
        raise DimensionError("gat", features.shape, (features.shape[0], params.in_dim))
    if mask.shape != (len(centers), features.shape[0]):
        raise DimensionError("gat mask", mask.shape, (len(centers), features.shape[0]))
    if not mask.any(axis=1).all():
        raise ContractError("gat: empty attention neighborhood")


def gat_attention(params, features, centers, mask):
    """Attention weights, one ``len(centers) x N`` tensor per head.

    ``mask[r, j]`` marks node ``j`` as part of the neighborhood of
    ``centers[r]``. Scores ``LeakyReLU(a^T [W v_i || W v_j])`` are
    softmax-normalized over each neighborhood.
    """
    features = nx.constant(features)
    mask = np.asarray(mask, dtype=bool)
    centers = np.asarray(centers, dtype=np.intp)
    _check_features(params, features, mask, centers)
    alphas, projections = [], []
    for k in range(params.n_heads):
        proj = nx.matmul(features, params.weights[k])
        center_score = nx.matmul(nx.gather_rows(proj, centers), params.attn_center[k])
        neighbor_score = nx.transpose(nx.matmul(proj, params.attn_neighbor[k]))
        logits = nx.leaky_relu(nx.add(center_score, neighbor_score), params.leaky_slope)
        alphas.append(nx.masked_softmax(logits, mask))
        projections.append(proj)
    return alphas, projections


def gat_aggregate(params, features, centers, mask):
    """Concatenation over heads of ``act(sum_j alpha_ij W^k v_j)``."""
    act = _activation(params.activation)
    alphas, projections = gat_attention(params, features, centers, mask)
    heads = [act(nx.matmul(a, p)) for a, p in zip(alphas, projections)]
    return heads[0] if len(heads) == 1 else nx.concat(heads, axis=1)


class MeanParams:
    """Plain graph-convolution aggregator: equal weight over the neighborhood."""

    def __init__(self, in_dim, out_dim, rng=None, activation="sigmoid", prefix="gcn"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim = in_dim
        self._out_dim = out_dim
        self.activation = activation
        _activation(activation)
        self.weight = nx.parameter(glorot(rng, in_dim, out_dim), f"{prefix}.W")

    @property
    def out_dim(self):
        return self._out_dim

    def named_parameters(self):
        return {self.weight.name: self.weight}


def mean_aggregate(params, features, centers, mask):
    features = nx.constant(features)
    mask = np.asarray(mask, dtype=bool)
    _check_features(params, features, mask, centers)
    weights = mask / mask.sum(axis=1, keepdims=True)
    act = _activation(params.activation)
    return act(nx.matmul(nx.matmul(nx.constant(weights), features), params.weight))


def aggregate(params, features, centers, mask):
    if isinstance(params, GatParams):
        return gat_aggregate(params, features, centers, mask)
    return mean_aggregate(params, features, centers, mask)


def ontology_encode(graph, table, params, include_self=True, ancestors="all"):
    """Two-pass encoding of an ontology graph; returns leaf rows only.

    ``table`` holds one initial vector per graph node. Pass 1 walks the
    non-leaf nodes by increasing height, each attending over its direct
    children (and itself when ``include_self``) using the already-updated
    child vectors. Pass 2 lets every leaf attend over itself and its
    ancestors' pass-1 vectors.
    """
    table = nx.constant(table)
    if table.shape[0] != len(graph):
        raise DimensionError("ontology_encode", table.shape, (len(graph), params.in_dim))
    if params.out_dim != params.in_dim:
        raise ConfigError(f"ontology encoder needs out_dim == in_dim, got {params.out_dim} != {params.in_dim}")
    current = table
    for centers, mask in graph.bottom_up_levels(include_self=include_self):
        rows = aggregate(params, current, centers, mask)
        current = nx.scatter_rows(current, centers, rows)
    leaves = np.arange(graph.n_leaves)
    return aggregate(params, current, leaves, graph.top_down_mask(ancestors))


def wgcn_encode(adjacency, features, theta, normalizer=None):
    """Single weighted-GCN layer ``D^-1/2 (A+I) D^-1/2 X Theta``."""
    features = nx.constant(features)
    if normalizer is None:
        normalizer = normalized_adjacency(adjacency)
    if normalizer.shape[0] != features.shape[0]:
        raise DimensionError("wgcn_encode", normalizer.shape, features.shape)
    return nx.matmul(nx.matmul(nx.constant(normalizer), features), theta)


def relation_gat_encode(adjacency, features, params):
    """Attention encoder on the relation graph: neighbors are nonzero entries of A plus self."""
    a = np.asarray(adjacency)
    mask = (a > 0) | np.eye(a.shape[0], dtype=bool)
    return gat_aggregate(params, features, np.arange(a.shape[0]), mask)
