"""Smoke test for the `novas` extension module.

Build and install first:  pip install --no-build-isolation ./crates/py
Run:  python -m pytest python/smoke_test.py  (or plain `python python/smoke_test.py`)
"""

import math

import novas


def test_tensor_gradients():
    x = novas.Tensor([1.0, 2.0, 3.0], [3], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    assert x.grad == [2.0, 4.0, 6.0]
    assert novas.tape_len() == 0


def test_matmul_and_broadcast():
    a = novas.Tensor([1.0, 2.0, 3.0, 4.0], [2, 2])
    b = novas.Tensor([1.0, 0.0, 0.0, 1.0], [2, 2])
    assert (a @ b).tolist() == a.tolist()
    assert (a + 1.0).tolist() == [2.0, 3.0, 4.0, 5.0]
    assert (2.0 - a).tolist() == [1.0, 0.0, -1.0, -2.0]
    assert a.sum(axis=1).tolist() == [3.0, 7.0]


def test_novas_finds_quadratic_minimum():
    cfg = novas.NovasConfig(samples=100, iters=20, sigma0=2.0)
    target = 3.0

    def objective(c):
        # c: [batch, M, 1] -> [batch, M]
        return ((c - target) * (c - target)).sum(axis=2)

    mu = novas.novas_optimize(objective, novas.Tensor.zeros([2, 1]), cfg, seed=1)
    assert mu.shape == [2, 1]
    assert all(abs(v - target) < 0.05 for v in mu.tolist())


def test_novas_gradient_reaches_objective_parameters():
    theta = novas.Tensor([1.5], [1], requires_grad=True)
    cfg = novas.NovasConfig(samples=50, iters=5, sigma0=1.0, mode="detached")

    def objective(c):
        return ((c - theta) * (c - theta)).sum(axis=2)

    mu = novas.novas_optimize(objective, novas.Tensor.zeros([1, 1]), cfg, seed=0)
    mu.sum().backward()
    assert theta.grad is not None and math.isfinite(theta.grad[0])


def test_cem_and_weights():
    cfg = novas.CemConfig(samples=100, elites=10, iters=10)
    mu = novas.cem_optimize(lambda c: ((c + 1.0) * (c + 1.0)).sum(axis=2), novas.Tensor.zeros([1, 1]), cfg, sigma0=2.0)
    assert abs(mu.item() + 1.0) < 0.1
    w = novas.shape_weights(novas.Tensor([0.0, 1.0, 2.0], [1, 3]), novas.NovasConfig(samples=3))
    assert abs(sum(w.tolist()) - 1.0) < 1e-12
    assert w.tolist()[2] > w.tolist()[0]


def test_unrolled_gd_on_parabola():
    def objective(y):
        d = y - 2.0
        return (d * d).sum(axis=1), d * 2.0

    y = novas.unrolled_gd(objective, novas.Tensor([0.0], [1, 1]), steps=50, lr=0.25)
    assert abs(y.item() - 2.0) < 1e-9


def test_python_errors_propagate():
    def bad(c):
        raise KeyError("boom")

    try:
        novas.novas_optimize(bad, novas.Tensor.zeros([1, 1]), novas.NovasConfig())
    except KeyError:
        pass
    else:
        raise AssertionError("expected KeyError")


def test_cartpole_closed_form():
    x = novas.Tensor([0.0, 0.0, 0.0, 0.0], [1, 4])
    vx = novas.Tensor([0.0, 0.0, 1.0, 0.0], [1, 4])
    # G = (0, 0, 1, -2) at rest, so u* = -0.5 / r * 1 with r = 0.1
    assert abs(novas.cartpole_closed_form_u(x, vx).item() + 5.0) < 1e-12


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print("ok", name)
