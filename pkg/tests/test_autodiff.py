import numpy as np
import pytest

from east import autodiff as ad
from east.autodiff import Parameter, Tape, Tensor
from east.errors import (
    BatchTooSmallError,
    ContractError,
    DimensionError,
    NumericError,
)

from gradcheck import finite_difference_grad, rel_error
from oracles import pairwise_distances_loops


def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(Tensor(np.eye(2)), Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_matmul_hand():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = Parameter(rng.standard_normal((3, 4)), tag="student")
    b = Parameter(rng.standard_normal((4, 2)), tag="student")

    def loss():
        tape = Tape()
        return ad.sum_all(ad.matmul(tape.watch(a), tape.watch(b))).item()

    tape = Tape()
    tape.backward(ad.sum_all(ad.matmul(tape.watch(a), tape.watch(b))))
    assert rel_error(a.grad, finite_difference_grad(loss, a.value)) < 1e-6
    assert rel_error(b.grad, finite_difference_grad(loss, b.value)) < 1e-6


def test_relu_values():
    out = ad.relu(Tensor([[-1.0, 0.0, 2.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 0.0, 2.0]])


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor([[0.0]])).item() == 0.5


def test_sigmoid_extreme_logits_stay_finite():
    out = ad.sigmoid(Tensor([[-1000.0, 1000.0]]))
    assert np.isfinite(out.data).all()
    assert out.data[0, 0] == pytest.approx(0.0, abs=1e-300)
    assert out.data[0, 1] == pytest.approx(1.0)


def test_mean_sigmoid_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x = Parameter(rng.standard_normal((3, 5)), tag="student")

    def loss():
        tape = Tape()
        return ad.mean(ad.sigmoid(tape.watch(x))).item()

    tape = Tape()
    tape.backward(ad.mean(ad.sigmoid(tape.watch(x))))
    assert rel_error(x.grad, finite_difference_grad(loss, x.value)) < 1e-6


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.mul(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        ad.add(Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3))))


def test_bias_broadcast_add_gradient():
    x = Parameter(np.arange(6.0).reshape(3, 2), tag="student")
    b = Parameter(np.array([[1.0, -1.0]]), tag="student")
    tape = Tape()
    out = ad.add(tape.watch(x), tape.watch(b))
    np.testing.assert_array_equal(out.data, x.value + b.value)
    tape.backward(ad.sum_all(out))
    np.testing.assert_array_equal(b.grad, [[3.0, 3.0]])


def test_pairwise_identical_rows_is_zero():
    out = ad.pairwise_euclidean(Tensor([[1.0, 2.0], [1.0, 2.0]]))
    np.testing.assert_array_equal(out.data, np.zeros((2, 2)))


def test_pairwise_345_triangle():
    out = ad.pairwise_euclidean(Tensor([[0.0, 0.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[0.0, 5.0], [5.0, 0.0]])


def test_pairwise_matches_loop_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((5, 3))
    out = ad.pairwise_euclidean(Tensor(x)).data
    expected = np.array(pairwise_distances_loops(x.tolist()))
    assert np.abs(out - expected).max() < 1e-12


def test_pairwise_symmetry_and_zero_diagonal():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.standard_normal((7, 4)) * rng.uniform(0.1, 50.0)
        d = ad.pairwise_euclidean(Tensor(x)).data
        assert np.abs(d - d.T).max() < 1e-12
        assert np.all(np.diag(d) == 0.0)


def test_pairwise_needs_two_rows():
    with pytest.raises(BatchTooSmallError):
        ad.pairwise_euclidean(Tensor([[1.0, 2.0]]))


def test_pairwise_gradient_zero_at_coincident_rows():
    x = Parameter(np.array([[1.0, 1.0], [1.0, 1.0]]), tag="student")
    tape = Tape()
    tape.backward(ad.sum_all(ad.pairwise_euclidean(tape.watch(x))))
    np.testing.assert_array_equal(x.grad, np.zeros((2, 2)))


def test_double_center_zero_matrix():
    out = ad.double_center(Tensor(np.zeros((3, 3))))
    np.testing.assert_array_equal(out.data, np.zeros((3, 3)))


def test_double_center_hand():
    out = ad.double_center(Tensor([[0.0, 2.0], [2.0, 0.0]]))
    np.testing.assert_array_equal(out.data, [[-1.0, 1.0], [1.0, -1.0]])


def test_double_center_row_sums_vanish():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((6, 6))
    m = m + m.T
    out = ad.double_center(Tensor(m)).data
    assert np.abs(out.sum(axis=1)).max() < 1e-12


def test_double_center_sums_property_large_entries():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 9))
        m = rng.uniform(-1e3, 1e3, size=(n, n))
        out = ad.double_center(Tensor(m)).data
        assert np.abs(out.sum(axis=0)).max() < 1e-9
        assert np.abs(out.sum(axis=1)).max() < 1e-9
        assert abs(out.sum()) < 1e-9


def test_double_center_rejects_non_square():
    with pytest.raises(DimensionError):
        ad.double_center(Tensor(np.zeros((2, 3))))


def test_backward_square_at_three():
    w = Parameter(np.array([[3.0]]), tag="student")
    tape = Tape()
    x = tape.watch(w)
    tape.backward(ad.mul(x, x))
    np.testing.assert_array_equal(w.grad, [[6.0]])


def test_backward_gate_excludes_other_tags():
    w = Parameter(np.array([[1.0, 2.0], [3.0, 4.0]]), tag="teacher_transform")
    x = Tensor([[1.0], [1.0]])
    tape = Tape()
    before = w.grad.copy()
    tape.backward(ad.sum_all(ad.matmul(tape.watch(w), x)), gates={"student"})
    np.testing.assert_array_equal(w.grad, before)


def test_backward_gate_bit_identity_of_prior_grads():
    rng = np.random.default_rng(6)
    w = Parameter(rng.standard_normal((2, 2)), tag="teacher_head")
    w.grad[...] = rng.standard_normal((2, 2))
    prior = w.grad.tobytes()
    tape = Tape()
    tape.backward(ad.sum_all(ad.mul(tape.watch(w), tape.watch(w))),
                  gates={"student", "teacher_transform"})
    assert w.grad.tobytes() == prior


def test_backward_two_layer_network_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = Parameter(rng.standard_normal((4, 6)), tag="student")
    b1 = Parameter(rng.standard_normal((1, 6)), tag="student")
    w2 = Parameter(rng.standard_normal((6, 2)), tag="student")
    x = rng.standard_normal((5, 4))

    def forward(tape):
        h = ad.relu(ad.add(ad.matmul(Tensor(x, tape), tape.watch(w1)), tape.watch(b1)))
        return ad.mean(ad.sigmoid(ad.matmul(h, tape.watch(w2))))

    tape = Tape()
    tape.backward(forward(tape))
    for p in (w1, b1, w2):
        fd = finite_difference_grad(lambda: forward(Tape()).item(), p.value)
        assert rel_error(p.grad, fd) < 1e-5


def test_backward_rejects_non_scalar_root():
    w = Parameter(np.ones((2, 2)), tag="student")
    tape = Tape()
    out = ad.mul(tape.watch(w), tape.watch(w))
    with pytest.raises(ContractError):
        tape.backward(out)


def test_backward_rejects_foreign_root():
    w = Parameter(np.ones((1, 1)), tag="student")
    tape = Tape()
    out = ad.mul(tape.watch(w), tape.watch(w))
    with pytest.raises(ContractError):
        Tape().backward(out)


def test_mixed_tapes_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.constant(np.ones((2, 2)))
    w = Parameter(np.ones((2, 2)), tag="student")
    b = t2.watch(w)
    a2 = ad.add(a, t1.watch(Parameter(np.ones((2, 2)), tag="student")))
    with pytest.raises(ContractError):
        ad.add(a2, b)


def test_gradient_accumulates_across_backward_calls():
    w = Parameter(np.array([[2.0]]), tag="student")
    tape = Tape()
    x = tape.watch(w)
    loss = ad.mul(x, x)
    tape.backward(loss)
    tape.backward(loss)
    np.testing.assert_array_equal(w.grad, [[8.0]])


def test_zero_grad_is_exact():
    w = Parameter(np.ones((3, 3)), tag="student")
    w.grad[...] = 0.1
    w.zero_grad()
    assert w.grad.tobytes() == np.zeros((3, 3)).tobytes()


def test_non_finite_forward_raises():
    big = Tensor(np.full((1, 1), 1e308))
    with np.errstate(over="ignore"):
        with pytest.raises(NumericError):
            ad.mul(big, big)


def test_tensor_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        Tensor(np.zeros(3))
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 2)))


def test_parameter_rejects_unknown_tag():
    with pytest.raises(ValueError):
        Parameter(np.zeros((1, 1)), tag="nope")


def _random_op_case(rng):
    """One composite differentiable expression touching every primitive."""
    n, d = int(rng.integers(3, 6)), int(rng.integers(2, 5))
    x = Parameter(rng.standard_normal((n, d)), tag="student")
    w = Parameter(rng.standard_normal((d, d)), tag="student")
    b = Parameter(rng.standard_normal((1, d)), tag="student")

    def forward(tape):
        xt = tape.watch(x)
        h = ad.add(ad.matmul(xt, tape.watch(w)), tape.watch(b))
        h = ad.relu(ad.sub(h, ad.scale(xt, 0.5)))
        h = ad.add(ad.mul(h, ad.sigmoid(xt)), xt)
        dmat = ad.double_center(ad.pairwise_euclidean(h))
        s = ad.scale(ad.sum_all(ad.mul(dmat, dmat)), 1.0 / (n * n))
        quotient = ad.div(ad.sqrt(ad.add(s, Tensor([[1.0]]))), ad.add(s, Tensor([[2.0]])))
        return ad.add(ad.mean(h), quotient)

    return (x, w, b), forward


def test_all_ops_finite_difference_sweep_20_seeds():
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        params, forward = _random_op_case(rng)
        tape = Tape()
        tape.backward(forward(tape))
        for p in params:
            fd = finite_difference_grad(lambda: forward(Tape()).item(), p.value)
            err = rel_error(p.grad, fd)
            assert err < 1e-4, f"seed {seed}, param {p.name}: rel err {err}"
