import numpy as np
import pytest

from medrec.autodiff import Tape, TapeConsumedError, Tensor


def fd_check(build_loss, arrays, rng, n_coords=40, h=1e-3, tol=1e-4):
    """Central finite differences vs analytic grads for every array."""
    leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    with Tape() as tape:
        loss = build_loss(leaves)
    tape.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}

    worst = 0.0
    for _ in range(n_coords):
        name = list(arrays)[int(rng.integers(0, len(arrays)))]
        flat = int(rng.integers(0, arrays[name].size))
        idx = np.unravel_index(flat, arrays[name].shape)

        def loss_at(delta):
            moved = {k: v.copy() for k, v in arrays.items()}
            moved[name][idx] += delta
            return float(build_loss({k: Tensor(v) for k, v in moved.items()}).value)

        fd = (loss_at(h) - loss_at(-h)) / (2 * h)
        an = float(grads[name][idx])
        if max(abs(fd), abs(an)) < 1e-8:
            continue
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    assert worst < tol, f"max relative error {worst}"
    return worst


def test_scalar_chain_gradient():
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3,)), "b": rng.normal(size=(3,))}

    def loss(p):
        return ((p["a"] * p["b"] + p["a"]).tanh() * p["b"].exp()).sum()

    fd_check(loss, arrays, rng)


def test_broadcast_and_division():
    rng = np.random.default_rng(1)
    arrays = {"x": rng.normal(size=(4, 5)), "b": rng.normal(size=(5,)), "s": rng.normal(size=(4, 1)) + 3.0}

    def loss(p):
        return ((p["x"] + p["b"]) / p["s"]).sum()

    fd_check(loss, arrays, rng)


def test_matmul_batched():
    rng = np.random.default_rng(2)
    arrays = {"a": rng.normal(size=(2, 3, 4)), "b": rng.normal(size=(4, 3))}

    def loss(p):
        return (p["a"] @ p["b"]).tanh().sum()

    fd_check(loss, arrays, rng)


def test_softmax_getitem_concat():
    rng = np.random.default_rng(3)
    arrays = {"m": rng.normal(size=(5, 4)), "w": rng.normal(size=(4,))}

    def loss(p):
        s = p["m"].softmax(axis=-1)
        parts = Tensor.concat([s[0].reshape(1, 4), s[2].reshape(1, 4)], axis=0)
        return (parts * p["w"]).sum()

    fd_check(loss, arrays, rng)


def test_layer_norm_composition():
    rng = np.random.default_rng(4)
    arrays = {"x": rng.normal(size=(3, 6)), "g": rng.normal(size=(6,)), "b": rng.normal(size=(6,))}

    def loss(p):
        x = p["x"]
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        y = (xc / (var + 1e-5).sqrt()) * p["g"] + p["b"]
        return (y * y).mean()

    fd_check(loss, arrays, rng)


def test_gelu_sigmoid_log_sqrt():
    rng = np.random.default_rng(5)
    arrays = {"x": rng.normal(size=(7,))}

    def loss(p):
        return (p["x"].gelu().sigmoid() + 1.1).log().sqrt().sum()

    fd_check(loss, arrays, rng)


def test_clip_zero_gradient_outside_range():
    x = Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True)
    with Tape() as tape:
        loss = x.clip(-1.0, 1.0).sum()
    tape.backward(loss)
    assert x.grad.tolist() == [0.0, 1.0, 0.0]


def test_consumed_tape_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    tape.backward(loss)
    with pytest.raises(TapeConsumedError):
        tape.backward(loss)


def test_constant_loss_no_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = Tensor(np.array(5.0)) * 1.0
    tape.backward(loss)
    assert x.grad is None


def test_no_tape_ops_do_not_record():
    x = Tensor(np.ones(3), requires_grad=True)
    y = (x * 2.0).sum()
    assert y._vjp is None and float(y.value) == 6.0


def test_grad_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        loss = (x * x + x * 3.0).sum()  # d/dx = 2x + 3 = 7
    tape.backward(loss)
    assert float(x.grad[0]) == pytest.approx(7.0)


def test_non_finite_value_rejected():
    with pytest.raises(ValueError):
        Tensor(np.array([np.inf]))
