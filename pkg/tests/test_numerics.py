import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradient_cases import ENCODER_CASES, N_INSTANCES, OP_CASES, run_case
from medaug import numerics as nx
from medaug.exceptions import ContractError, DimensionError, TrainingError
from medaug.optim import DEFAULT_LEARNING_RATE, Adam


def test_sigmoid_at_zero():
    assert nx.sigmoid(nx.constant([[0.0]])).item() == 0.5


def test_leaky_relu_negative_one():
    assert nx.leaky_relu(nx.constant([[-1.0]])).item() == pytest.approx(-0.01)


def test_masked_softmax_symmetric_pair():
    out = nx.masked_softmax(nx.constant([[1.0, 1.0]]), np.ones((1, 2), bool))
    np.testing.assert_allclose(out.value, [[0.5, 0.5]])


def test_masked_softmax_zeroes_masked_entries():
    out = nx.masked_softmax(nx.constant([[3.0, 100.0, 1.0]]), np.array([[True, False, True]]))
    assert out.value[0, 1] == 0.0
    assert out.value.sum() == pytest.approx(1.0)


def test_fully_masked_row_is_contract_error():
    with pytest.raises(ContractError):
        nx.masked_softmax(nx.constant([[1.0, 2.0]]), np.zeros((1, 2), bool))


def test_sigmoid_stable_for_large_inputs():
    out = nx.sigmoid(nx.constant([[-800.0, 800.0]])).value
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[0.0, 1.0]])


def test_matmul_shape_error_names_op_and_shapes():
    with pytest.raises(DimensionError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        nx.matmul(nx.constant(np.ones((2, 3))), nx.constant(np.ones((2, 3))))


def test_log_of_nonpositive_is_contract_error():
    with pytest.raises(ContractError):
        nx.log(nx.constant([[0.0]]))


def test_backward_square_sum():
    x = nx.parameter([[1.0, 2.0]])
    nx.backward(nx.sum_all(nx.mul(x, x)))
    np.testing.assert_allclose(x.grad, [[2.0, 4.0]])


def test_backward_sigmoid_times_weight():
    w = nx.parameter([[3.0]])
    nx.backward(nx.mul(nx.sigmoid(nx.constant([[0.0]])), w))
    assert w.grad[0, 0] == pytest.approx(0.5)


def test_backward_requires_scalar_loss():
    x = nx.parameter(np.ones((2, 2)))
    with pytest.raises(ContractError):
        nx.backward(nx.mul(x, x))


def test_shared_subexpression_accumulates():
    x = nx.parameter([[3.0]])
    y = nx.mul(x, x)
    nx.backward(nx.add(y, y))  # 2 x^2
    assert x.grad[0, 0] == pytest.approx(12.0)


def test_constants_receive_no_gradient():
    c = nx.constant([[2.0]])
    w = nx.parameter([[1.0]])
    nx.backward(nx.mul(c, w))
    assert c.grad is None
    assert w.grad[0, 0] == 2.0


def test_random_three_by_three_network():
    rng = np.random.default_rng(7)
    w1 = nx.parameter(rng.normal(size=(3, 3)), "w1")
    w2 = nx.parameter(rng.normal(size=(3, 3)), "w2")
    x = nx.constant(rng.normal(size=(3, 3)))
    fn = lambda: nx.sum_all(nx.tanh(nx.matmul(nx.sigmoid(nx.matmul(x, w1)), w2)))
    ok, worst = nx.gradient_check(fn, [w1, w2])
    assert ok, worst


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients(name):
    for seed in range(N_INSTANCES):
        ok, worst = run_case(OP_CASES[name], seed)
        assert ok, (name, seed, worst)


@pytest.mark.parametrize("name", sorted(ENCODER_CASES))
def test_encoder_gradients(name):
    for seed in range(N_INSTANCES):
        ok, worst = run_case(ENCODER_CASES[name], seed)
        assert ok, (name, seed, worst)


def test_gradient_check_catches_a_wrong_gradient():
    x = nx.parameter([[0.3, -0.2]])
    wrong = nx._node  # reuse the node builder with a deliberately bad closure
    fn = lambda: nx.sum_all(wrong(x.value * 2.0, (x,), lambda g: (g * 3.0,)))
    ok, _ = nx.gradient_check(fn, [x])
    assert not ok


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_ops_are_deterministic(rows, cols, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(rows, cols))
    f = lambda: nx.masked_softmax(nx.tanh(nx.constant(v)), np.ones((rows, cols), bool)).value
    assert np.array_equal(f(), f())


def test_adam_zero_gradient_leaves_parameters():
    p = nx.parameter([[1.0, -2.0]])
    opt = Adam({"p": p})
    for _ in range(5):
        opt.step({"p": np.zeros((1, 2))})
    np.testing.assert_array_equal(p.value, [[1.0, -2.0]])


def test_adam_constant_gradient_step_approaches_learning_rate():
    p = nx.parameter([[0.0]])
    opt = Adam({"p": p}, learning_rate=0.01)
    prev = 0.0
    for _ in range(2000):
        opt.step({"p": np.array([[0.37]])})
        step, prev = prev - p.value[0, 0], p.value[0, 0]
    assert step == pytest.approx(0.01, rel=1e-4)


def test_adam_first_step_is_learning_rate():
    # bias correction makes the very first step exactly lr * g/|g| (up to eps)
    p = nx.parameter([[0.0]])
    Adam({"p": p}, learning_rate=0.1).step({"p": np.array([[-4.0]])})
    assert p.value[0, 0] == pytest.approx(0.1, rel=1e-8)


def test_adam_default_learning_rate():
    assert Adam({}).learning_rate == DEFAULT_LEARNING_RATE == 5e-4


def test_adam_non_finite_gradient_names_parameter():
    p = nx.parameter([[1.0]])
    with pytest.raises(TrainingError, match="weights"):
        Adam({"weights": p}).step({"weights": np.array([[np.nan]])})


def test_adam_step_counter_increases():
    p = nx.parameter([[1.0]])
    opt = Adam({"p": p})
    for k in range(1, 4):
        opt.step({"p": np.ones((1, 1))})
        assert opt.step_count == k
    assert opt.m["p"].shape == p.shape == opt.v["p"].shape
