"""Randomized finite-difference cases for every differentiable op and encoder.

Each builder takes a numpy Generator and returns ``(fn, params)`` where
``fn()`` rebuilds a scalar loss from the current parameter values. Losses
are random weighted sums so that no gradient is trivially symmetric.
Inputs to kinked ops (LeakyReLU, ELU, clip) are kept away from the kink.
"""

import numpy as np

from medaug import numerics as nx
from medaug.encoders import GatParams, MeanParams, ontology_encode, relation_gat_encode, wgcn_encode
from medaug.ontology import build_ontology_graph

N_INSTANCES = 20


def _probe(t, rng):
    weights = nx.constant(rng.normal(size=t.shape))
    return nx.sum_all(nx.mul(t, weights))


def _param(rng, *shape, name="x", low=None):
    v = rng.normal(size=shape)
    if low is not None:
        v = np.sign(v) * (np.abs(v) + low)
    return nx.parameter(v, name)


def _unary(op, low=None, positive=False):
    def build(rng):
        x = _param(rng, 3, 4, low=low)
        if positive:
            x.value[...] = np.abs(x.value) + 0.5
        w = rng.normal(size=(3, 4))
        return (lambda: nx.sum_all(nx.mul(op(x), nx.constant(w)))), [x]

    return build


def _binary(op, b_shape=(3, 4)):
    def build(rng):
        a = _param(rng, 3, 4, name="a")
        b = _param(rng, *b_shape, name="b")
        w = rng.normal(size=(3, 4))
        return (lambda: nx.sum_all(nx.mul(op(a, b), nx.constant(w)))), [a, b]

    return build


def _matmul(rng):
    a, b = _param(rng, 3, 4, name="a"), _param(rng, 4, 2, name="b")
    w = rng.normal(size=(3, 2))
    return (lambda: nx.sum_all(nx.mul(nx.matmul(a, b), nx.constant(w)))), [a, b]


def _clip(rng):
    x = nx.parameter(rng.uniform(-2, 2, size=(3, 4)), "x")
    x.value[np.abs(np.abs(x.value) - 1.0) < 0.05] += 0.2
    w = rng.normal(size=(3, 4))
    return (lambda: nx.sum_all(nx.mul(nx.clip(x, -1.0, 1.0), nx.constant(w)))), [x]


def _transpose(rng):
    x = _param(rng, 3, 4)
    w = rng.normal(size=(4, 3))
    return (lambda: nx.sum_all(nx.mul(nx.transpose(x), nx.constant(w)))), [x]


def _concat(rng):
    a, b = _param(rng, 3, 2, name="a"), _param(rng, 3, 4, name="b")
    c, d = _param(rng, 2, 3, name="c"), _param(rng, 1, 3, name="d")
    w1, w2 = rng.normal(size=(3, 6)), rng.normal(size=(3, 3))
    return (
        lambda: nx.add(
            nx.sum_all(nx.mul(nx.concat([a, b], axis=1), nx.constant(w1))),
            nx.sum_all(nx.mul(nx.concat([c, d], axis=0), nx.constant(w2))),
        )
    ), [a, b, c, d]


def _gather(rng):
    x = _param(rng, 5, 3)
    index = rng.integers(0, 5, size=7)  # repeats on purpose
    w = rng.normal(size=(7, 3))
    return (lambda: nx.sum_all(nx.mul(nx.gather_rows(x, index), nx.constant(w)))), [x]


def _scatter(rng):
    x, rows = _param(rng, 5, 3, name="x"), _param(rng, 2, 3, name="rows")
    index = rng.choice(5, size=2, replace=False)
    w = rng.normal(size=(5, 3))
    return (lambda: nx.sum_all(nx.mul(nx.scatter_rows(x, index, rows), nx.constant(w)))), [x, rows]


def _slice(rng):
    x = _param(rng, 3, 5)
    w = rng.normal(size=(3, 2))
    return (lambda: nx.sum_all(nx.mul(nx.slice_cols(x, 1, 3), nx.constant(w)))), [x]


def _softmax(rng):
    x = _param(rng, 4, 5)
    mask = rng.random((4, 5)) < 0.7
    mask[np.arange(4), rng.integers(0, 5, size=4)] = True
    w = rng.normal(size=(4, 5))
    return (lambda: nx.sum_all(nx.mul(nx.masked_softmax(x, mask), nx.constant(w)))), [x]


def _mean_rows(rng):
    x = _param(rng, 4, 3)
    w = rng.normal(size=(1, 3))
    return (lambda: nx.sum_all(nx.mul(nx.mean_rows(x), nx.constant(w)))), [x]


def _mean_all(rng):
    x = _param(rng, 4, 3)
    return (lambda: nx.mean_all(nx.mul(x, x))), [x]


def _shared(rng):
    # x feeds the loss along two paths; gradients must add up
    x = _param(rng, 3, 3)
    w = rng.normal(size=(3, 3))
    return (lambda: nx.sum_all(nx.mul(nx.matmul(x, x), nx.constant(w)))), [x]


OP_CASES = {
    "matmul": _matmul,
    "add": _binary(nx.add),
    "add_broadcast": _binary(nx.add, (1, 4)),
    "sub": _binary(nx.sub),
    "mul": _binary(nx.mul),
    "mul_broadcast": _binary(nx.mul, (3, 1)),
    "neg": _unary(nx.neg),
    "scale": _unary(lambda a: nx.scale(a, -1.7)),
    "sigmoid": _unary(nx.sigmoid),
    "leaky_relu": _unary(nx.leaky_relu, low=0.05),
    "elu": _unary(nx.elu, low=0.05),
    "tanh": _unary(nx.tanh),
    "exp": _unary(nx.exp),
    "log": _unary(nx.log, positive=True),
    "clip": _clip,
    "transpose": _transpose,
    "concat": _concat,
    "gather_rows": _gather,
    "scatter_rows": _scatter,
    "slice_cols": _slice,
    "masked_softmax": _softmax,
    "mean_rows": _mean_rows,
    "sum_all": _unary(lambda a: a),
    "mean_all": _mean_all,
    "shared_subexpression": _shared,
}


TOY_HIERARCHY = {
    "a1": "A", "a2": "A", "a3": "A", "b1": "B", "b2": "B", "b3": "b", "b": "B",
    "A": "R", "B": "R", "R": None,
}


def toy_ontology():
    return build_ontology_graph(["a1", "a2", "a3", "b1", "b2", "b3"], TOY_HIERARCHY, "dx")


def _ontology_case(kind):
    graph = toy_ontology()

    def build(rng):
        dim = 4
        table = nx.parameter(rng.normal(size=(len(graph), dim)), "table")
        if kind == "gat":
            params = GatParams(dim, 2, 2, rng, activation=rng.choice(["sigmoid", "elu"]))
        else:
            params = MeanParams(dim, dim, rng)
        w = rng.normal(size=(graph.n_leaves, dim))
        fn = lambda: nx.sum_all(nx.mul(ontology_encode(graph, table, params), nx.constant(w)))
        return fn, [table] + list(params.named_parameters().values())

    return build


def _relation_adjacency(rng, n):
    a = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.5), 1)
    return a + a.T


def _wgcn(rng):
    n, d_in, d_out = 6, 4, 3
    adjacency = _relation_adjacency(rng, n)
    features = nx.parameter(rng.normal(size=(n, d_in)), "features")
    theta = nx.parameter(rng.normal(size=(d_in, d_out)), "theta")
    w = rng.normal(size=(n, d_out))
    return (lambda: nx.sum_all(nx.mul(wgcn_encode(adjacency, features, theta), nx.constant(w)))), [features, theta]


def _relation_gat(rng):
    n, d_in = 6, 4
    adjacency = _relation_adjacency(rng, n)
    features = nx.parameter(rng.normal(size=(n, d_in)), "features")
    params = GatParams(d_in, 2, 2, rng)
    w = rng.normal(size=(n, 4))
    fn = lambda: nx.sum_all(nx.mul(relation_gat_encode(adjacency, features, params), nx.constant(w)))
    return fn, [features] + list(params.named_parameters().values())


ENCODER_CASES = {
    "ontology_gat": _ontology_case("gat"),
    "ontology_mean": _ontology_case("mean"),
    "relation_wgcn": _wgcn,
    "relation_gat": _relation_gat,
}


def run_case(builder, seed):
    fn, params = builder(np.random.default_rng(seed))
    return nx.gradient_check(fn, params)
