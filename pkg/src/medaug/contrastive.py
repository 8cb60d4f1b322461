"""Contrastive pretraining: node/summary agreement against row-shuffled negatives.

Both graph levels share one recipe. Each epoch draws a fresh row
permutation of the node features (the topology is untouched), encodes the
real and shuffled inputs with the same encoder, averages the real node
vectors into a summary vector and scores every node against it with a
bilinear discriminator. The objective
``mean log D(pos) + mean log(1 - D(neg))`` is maximized with Adam.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import numerics as nx
from .encoders import (
    EmbeddingSource,
    GatParams,
    MeanParams,
    glorot,
    ontology_encode,
    relation_gat_encode,
    uniform_table,
    wgcn_encode,
)
from .exceptions import ContractError, DimensionError, TrainingError
from .optim import DEFAULT_LEARNING_RATE, Adam
from .relation_graph import normalized_adjacency
from .validation import check_adjacency, check_choice, check_features, check_positive

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-12
DEFAULT_EPOCHS = 40


def corruption_plan(n, rng):
    """A random permutation of ``range(n)``; never the identity when ``n > 1``."""
    perm = rng.permutation(n)
    while n > 1 and np.array_equal(perm, np.arange(n)):
        perm = rng.permutation(n)
    return perm


def corrupt(features, plan):
    """Row ``i`` of the result is row ``plan[i]`` of ``features``."""
    plan = np.asarray(plan, dtype=np.intp)
    n = features.shape[0]
    if plan.shape != (n,):
        raise ContractError(f"corruption plan of length {plan.shape[0]} for {n} rows")
    if not np.array_equal(np.sort(plan), np.arange(n)):
        raise ContractError("corruption plan is not a permutation")
    if isinstance(features, nx.Tensor):
        return nx.gather_rows(features, plan)
    return np.asarray(features)[plan]


def readout(embeddings):
    """Mean over node rows, giving the summary vector (1 x d)."""
    if isinstance(embeddings, nx.Tensor):
        return nx.mean_rows(embeddings)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ContractError("readout needs at least one node row")
    return embeddings.mean(axis=0, keepdims=True)


def discriminate(weight, node, summary):
    """``sigmoid(summary^T W node)`` for a single node vector."""
    weight = np.asarray(weight, dtype=np.float64)
    node = np.asarray(node, dtype=np.float64).reshape(-1)
    summary = np.asarray(summary, dtype=np.float64).reshape(-1)
    d = weight.shape[0]
    if weight.shape != (d, d) or node.shape != (d,) or summary.shape != (d,):
        raise DimensionError("discriminate", weight.shape, node.shape, summary.shape)
    s = float(summary @ weight @ node)
    return 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))


def bilinear_scores(weight, nodes, summary):
    """Discriminator scores of every node row against ``summary`` (1 x n tensor)."""
    return nx.sigmoid(nx.matmul(nx.matmul(summary, weight), nx.transpose(nodes)))


def dgi_objective(pos_scores, neg_scores):
    """``mean log s+ + mean log(1 - s-)`` with scores clamped to [eps, 1-eps]."""
    pos = nx.clip(nx.constant(pos_scores), SCORE_EPS, 1.0 - SCORE_EPS)
    neg = nx.clip(nx.constant(neg_scores), SCORE_EPS, 1.0 - SCORE_EPS)
    if pos.value.size == 0 or neg.value.size == 0:
        raise ContractError("dgi objective needs nonempty score lists")
    return nx.add(nx.mean_all(nx.log(pos)), nx.mean_all(nx.log(nx.sub(1.0, neg))))


def dgi_loss(pos_scores, neg_scores):
    """Scalar objective value for plain score arrays (to be maximized)."""
    return dgi_objective(np.asarray(pos_scores, dtype=np.float64).reshape(1, -1), np.asarray(neg_scores, dtype=np.float64).reshape(1, -1)).item()


class _ContrastiveBase(BaseEstimator, TransformerMixin, auto_wrap_output_keys=None):
    """Shared training loop. Subclasses provide ``_encode`` and the features."""

    def _train(self, features, trainable, encode, dim, rng_perm, rng_init):
        self.discriminator_ = nx.parameter(glorot(rng_init, dim, dim), "discriminator.W")
        params = dict(trainable)
        params[self.discriminator_.name] = self.discriminator_
        opt = Adam(params, learning_rate=self.learning_rate)
        self.loss_curve_ = []
        n = features.shape[0]
        for epoch in range(1, self.epochs + 1):
            plan = corruption_plan(n, rng_perm)
            pos = encode(features)
            neg = encode(corrupt(features, plan))
            summary = readout(pos)
            objective = dgi_objective(
                bilinear_scores(self.discriminator_, pos, summary),
                bilinear_scores(self.discriminator_, neg, summary),
            )
            value = objective.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite contrastive objective at epoch {epoch}")
            self.loss_curve_.append(value)
            opt.zero_grad()
            nx.backward(nx.neg(objective))
            opt.step()
            logger.debug("%s epoch %d objective %.6f", type(self).__name__, epoch, value)

    def discriminator_accuracy(self, n_corruptions=10, random_state=None):
        """Share of real pairs scored > 0.5 and shuffled pairs scored < 0.5.

        Uses fresh permutations drawn from ``random_state``, so none of them
        need have been seen during training.
        """
        check_is_fitted(self, "discriminator_")
        rng = np.random.default_rng(random_state)
        features = self._features()
        pos = self._encode(features)
        summary = readout(pos)
        pos_scores = bilinear_scores(self.discriminator_, pos, summary).value.reshape(-1)
        hits = int(np.sum(pos_scores > 0.5)) * n_corruptions
        total = pos_scores.size * n_corruptions
        for _ in range(n_corruptions):
            neg = self._encode(corrupt(features, corruption_plan(features.shape[0], rng)))
            neg_scores = bilinear_scores(self.discriminator_, neg, summary).value.reshape(-1)
            hits += int(np.sum(neg_scores < 0.5))
            total += neg_scores.size
        return hits / total


class OntologyEmbedder(_ContrastiveBase, auto_wrap_output_keys=None):
    """Contrastive pretraining of code embeddings over one ontology graph.

    ``fit(graph)`` learns an initial-vector table over every graph node
    (unless ``train_table`` is off), a shared two-pass encoder and the
    discriminator. ``transform(graph)`` returns the encoded leaf rows, one
    per observed code, in leaf order.

    ``encoder`` is ``"gat"`` (multi-head attention, ``n_heads`` heads of
    ``embedding_dim // n_heads``) or ``"gcn"`` (equal-weight neighborhood
    averaging).
    """

    def __init__(
        self,
        embedding_dim=128,
        n_heads=4,
        encoder="gat",
        activation="sigmoid",
        leaky_slope=nx.DEFAULT_LEAKY_SLOPE,
        include_self=True,
        ancestors="all",
        train_table=True,
        epochs=DEFAULT_EPOCHS,
        learning_rate=DEFAULT_LEARNING_RATE,
        random_state=0,
    ):
        self.embedding_dim = embedding_dim
        self.n_heads = n_heads
        self.encoder = encoder
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.include_self = include_self
        self.ancestors = ancestors
        self.train_table = train_table
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _build_encoder(self, rng):
        check_choice("encoder", self.encoder, {"gat", "gcn"})
        check_choice("ancestors", self.ancestors, {"all", "parent"})
        d = check_positive("embedding_dim", self.embedding_dim)
        if self.encoder == "gat":
            if d % self.n_heads:
                raise ContractError(f"embedding_dim {d} not divisible by n_heads {self.n_heads}")
            return GatParams(d, self.n_heads, d // self.n_heads, rng, self.leaky_slope, self.activation, prefix="onto")
        return MeanParams(d, d, rng, self.activation, prefix="onto")

    def _encode(self, table):
        return ontology_encode(self.graph_, table, self.encoder_, self.include_self, self.ancestors)

    def _features(self):
        return self.table_

    def fit(self, graph, y=None):
        check_positive("epochs", self.epochs)
        init_seq, enc_seq, disc_seq, perm_seq = np.random.SeedSequence(self.random_state).spawn(4)
        self.graph_ = graph
        self.encoder_ = self._build_encoder(np.random.default_rng(enc_seq))
        self.table_ = nx.Tensor(
            uniform_table(np.random.default_rng(init_seq), len(graph), self.embedding_dim),
            requires_grad=self.train_table,
            name="onto.table",
        )
        trainable = dict(self.encoder_.named_parameters())
        if self.train_table:
            trainable[self.table_.name] = self.table_
        self._train(
            self.table_,
            trainable,
            self._encode,
            self.embedding_dim,
            np.random.default_rng(perm_seq),
            np.random.default_rng(disc_seq),
        )
        self.embeddings_ = self._encode(self.table_).numpy()
        self.source_ = EmbeddingSource.ONTOLOGY_AUGMENTED
        return self

    def transform(self, graph=None):
        check_is_fitted(self, "embeddings_")
        if graph is None or graph is self.graph_:
            return self.embeddings_.copy()
        if len(graph) != len(self.graph_):
            raise DimensionError("OntologyEmbedder.transform", (len(graph),), (len(self.graph_),))
        return ontology_encode(graph, self.table_.value, self.encoder_, self.include_self, self.ancestors).numpy()

    def fit_transform(self, graph, y=None):
        return self.fit(graph).embeddings_.copy()


class RelationEmbedder(_ContrastiveBase, auto_wrap_output_keys=None):
    """Contrastive pretraining over the PMI relation graph.

    ``fit(X, adjacency=A)`` keeps the node features ``X`` fixed and learns
    the encoder weights and discriminator. ``encoder="gcn"`` is the
    single weighted graph convolution; ``"gat"`` attends over nonzero
    neighbors and ignores edge weights.
    """

    def __init__(
        self,
        embedding_dim=64,
        encoder="gcn",
        n_heads=4,
        activation="sigmoid",
        leaky_slope=nx.DEFAULT_LEAKY_SLOPE,
        epochs=DEFAULT_EPOCHS,
        learning_rate=DEFAULT_LEARNING_RATE,
        random_state=0,
    ):
        self.embedding_dim = embedding_dim
        self.encoder = encoder
        self.n_heads = n_heads
        self.activation = activation
        self.leaky_slope = leaky_slope
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _encode(self, features, adjacency=None):
        if adjacency is None:
            adjacency, normalizer = self.adjacency_, self.normalizer_
        else:
            normalizer = normalized_adjacency(adjacency)
        if self.encoder == "gcn":
            return wgcn_encode(adjacency, features, self.encoder_.weight, normalizer)
        return relation_gat_encode(adjacency, features, self.encoder_)

    def _features(self):
        return self.features_

    def fit(self, X, y=None, adjacency=None):
        if adjacency is None:
            raise ContractError("RelationEmbedder.fit needs adjacency=")
        check_choice("encoder", self.encoder, {"gcn", "gat"})
        check_positive("epochs", self.epochs)
        d = check_positive("embedding_dim", self.embedding_dim)
        X = check_features(X)
        self.adjacency_ = check_adjacency(adjacency, X.shape[0])
        self.normalizer_ = normalized_adjacency(self.adjacency_)
        self.features_ = nx.constant(X)
        self.n_features_in_ = X.shape[1]
        enc_seq, disc_seq, perm_seq = np.random.SeedSequence(self.random_state).spawn(3)
        rng = np.random.default_rng(enc_seq)
        if self.encoder == "gcn":
            self.encoder_ = MeanParams(X.shape[1], d, rng, prefix="rel")
            self.encoder_.weight.name = "rel.theta"
        else:
            if d % self.n_heads:
                raise ContractError(f"embedding_dim {d} not divisible by n_heads {self.n_heads}")
            self.encoder_ = GatParams(X.shape[1], self.n_heads, d // self.n_heads, rng, self.leaky_slope, self.activation, prefix="rel")
        self._train(
            self.features_,
            self.encoder_.named_parameters(),
            self._encode,
            d,
            np.random.default_rng(perm_seq),
            np.random.default_rng(disc_seq),
        )
        self.embeddings_ = self._encode(self.features_).numpy()
        self.source_ = EmbeddingSource.RELATION_AUGMENTED
        return self

    def transform(self, X=None, adjacency=None):
        check_is_fitted(self, "embeddings_")
        if X is None:
            return self.embeddings_.copy()
        X = check_features(X)
        if adjacency is None:
            adjacency = self.adjacency_
        return self._encode(nx.constant(X), check_adjacency(adjacency, X.shape[0])).numpy()

    def fit_transform(self, X, y=None, adjacency=None):
        return self.fit(X, adjacency=adjacency).embeddings_.copy()
