import numpy as np
import pytest

from tvqtraj import autograd as ag
from tvqtraj.autograd import Tensor, check_grad
from tvqtraj.errors import InvalidArgumentError, TrainingError

from grad_cases import GRAD_CASES, leaf


# ---------------------------------------------------------------- forward ops

def test_relu_values():
    assert np.array_equal(ag.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_softmax_equal_logits():
    np.testing.assert_allclose(ag.softmax(Tensor(np.ones(4))).data, 0.25, atol=1e-7)


def test_conv1d_hand_value():
    x = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    w = Tensor(np.array([[[1.0, 1.0]]]))
    assert np.allclose(ag.conv1d(x, w).data.ravel(), [3.0, 5.0])


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, conv_T(y)> with shared weights laid out [Cin, Cout, K]
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 10))
    w = rng.normal(size=(4, 3, 4))
    y = ag.conv1d(Tensor(x), Tensor(w), stride=2, padding=1).data
    g = rng.normal(size=y.shape)
    back = ag.conv_transpose1d(Tensor(g), Tensor(w), stride=2, padding=1).data
    assert back.shape == x.shape
    assert np.isclose((y * g).sum(), (x * back).sum(), rtol=1e-4)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(InvalidArgumentError, match=r"\(2, 3\).*\(4, 5\)"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(InvalidArgumentError):
        ag.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradient_matches_finite_differences(name):
    rng = np.random.default_rng(7)
    inputs, f = GRAD_CASES[name](rng)
    check_grad(f, inputs, h=1e-3, rtol=1e-3, atol=1e-5)


def test_mse_scalar_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    ag.backward(ag.mse(x, np.zeros(1)))
    assert np.isclose(x.grad[0], 6.0)


def test_disconnected_parameter_has_zero_grad():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    ag.backward(ag.sum_(ag.mul(a, 2.0)))
    assert b.grad is None or not np.any(b.grad)


def test_backward_rejects_non_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(InvalidArgumentError):
        ag.backward(ag.mul(a, 2.0))


def test_shared_node_visited_once():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ag.mul(x, x)           # y used twice below
    z = ag.sum_(ag.add(y, y))  # dz/dx = 4x
    ag.backward(z)
    assert np.isclose(x.grad[0], 8.0)


def test_determinism():
    def run():
        rng = np.random.default_rng(3)
        x, w = leaf(rng, 2, 3, 8), leaf(rng, 4, 3, 3)
        out = ag.sum_(ag.gelu(ag.conv1d(x, w, padding=1)))
        ag.backward(out)
        return out.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()
    assert run() == run()


# ---------------------------------------------------------------- straight-through

def test_straight_through_forward_and_identity_jacobian():
    rng = np.random.default_rng(0)
    pre = leaf(rng, 3, 2)
    q = rng.normal(size=(3, 2))
    out = ag.straight_through(pre, q)
    assert np.array_equal(out.data, q.astype(np.float32))
    up = rng.normal(size=(3, 2)).astype(np.float32)
    ag.backward(ag.sum_(ag.mul(out, up)))
    assert np.array_equal(pre.grad, up)


def test_straight_through_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        ag.straight_through(Tensor(np.ones(3), requires_grad=True), np.ones(4))


def test_straight_through_toy_encoder_gradient():
    codebook = np.array([[0.0], [1.0], [2.0]])
    target = np.array([[1.5], [0.5]])
    inputs = np.array([[0.4], [1.3]])

    with ag.precision(np.float64):
        w = Tensor(np.array([[1.5]]), requires_grad=True)
        b = Tensor(np.array([0.2]), requires_grad=True)

        def encode():
            return ag.add(ag.matmul(Tensor(inputs), w), b)

        z = encode()
        offset = codebook[np.argmin(np.abs(z.data - codebook.T), axis=1)] - z.data
        loss = ag.mse(ag.straight_through(z, z.data + offset), target)
        ag.backward(loss)
        assert abs(w.grad[0, 0]) > 0 and abs(b.grad[0]) > 0

        # oracle: finite differences of the surrogate z(θ) + frozen (z_q - z)
        def surrogate():
            return ag.mse(ag.add(encode(), offset), target)
        np.testing.assert_allclose(w.grad, ag.numeric_grad(surrogate, w), rtol=1e-6)
        np.testing.assert_allclose(b.grad, ag.numeric_grad(surrogate, b), rtol=1e-6)


# ---------------------------------------------------------------- Adam

def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    new, st = ag.adam_step(p, {"w": np.zeros(2)}, ag.AdamState(lr=0.1))
    assert np.array_equal(new["w"], p["w"]) and st.step == 1


def test_adam_first_step():
    new, _ = ag.adam_step({"w": np.array([0.0])}, {"w": np.array([1.0])}, ag.AdamState(lr=0.1))
    assert abs(new["w"][0] + 0.1) < 1e-4


def _scalar_adam_oracle(theta, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_minimises_quadratic():
    st = ag.AdamState(lr=0.05)
    p = {"t": np.array([1.0])}
    for _ in range(500):
        p, st = ag.adam_step(p, {"t": 2 * p["t"]}, st)
    assert abs(p["t"][0]) < 1e-2
    assert np.isclose(p["t"][0], _scalar_adam_oracle(1.0, 0.05, 500), atol=1e-9)


def test_adam_rejects_non_finite():
    with pytest.raises(TrainingError, match="bad"):
        ag.adam_step({"bad": np.ones(1)}, {"bad": np.array([np.nan])}, ag.AdamState())
