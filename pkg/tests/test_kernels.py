import numpy as np
import pytest

from coproq import kernels, nn
from coproq.kernels import DuelingLayout, available_backends, get_backend
from coproq.kernels import numpy_ref


def small_layout():
    return DuelingLayout(obs_dim=4, n_actions=3, hidden=6)


def random_params(lay, seed):
    rng = np.random.default_rng(seed)
    return rng.uniform(-0.5, 0.5, size=lay.size)


def compose_with_generic_mlp(lay, p, X):
    """Oracle: run the same math through the grad-core MLP ops."""
    trunk, value, advantage = lay.unpack(p)
    feats = nn.mlp_forward(trunk, X)
    v = nn.mlp_forward(value, feats)
    adv = nn.mlp_forward(advantage, feats)
    return v + adv - adv.mean(axis=1, keepdims=True)


def test_forward_matches_generic_mlp_composition():
    lay = small_layout()
    p = random_params(lay, 0)
    X = np.random.default_rng(1).standard_normal((9, lay.obs_dim))
    got = numpy_ref.q_forward(lay, p, X)
    want = compose_with_generic_mlp(lay, p, X)
    assert got.shape == (9, 3)
    assert np.allclose(got, want, rtol=0, atol=1e-14)
    q2, cache = numpy_ref.q_forward_cached(lay, p, X)
    assert np.array_equal(got, q2)


def test_backward_matches_finite_differences():
    lay = small_layout()
    p = random_params(lay, 2)
    rng = np.random.default_rng(3)
    X = rng.standard_normal((7, lay.obs_dim))
    probe = rng.standard_normal((7, lay.n_actions))
    _, cache = numpy_ref.q_forward_cached(lay, p, X)
    g = numpy_ref.q_backward(lay, p, cache, probe)

    h = 1e-5
    for i in range(lay.size):
        old = p[i]
        p[i] = old + h
        up = float(np.sum(probe * numpy_ref.q_forward(lay, p, X)))
        p[i] = old - h
        down = float(np.sum(probe * numpy_ref.q_forward(lay, p, X)))
        p[i] = old
        numeric = (up - down) / (2 * h)
        assert g[i] == pytest.approx(numeric, rel=1e-5, abs=1e-7), f"param {i}"


def test_adam_update_matches_grad_core():
    rng = np.random.default_rng(4)
    p_flat = rng.standard_normal(50)
    p_ref = [p_flat.copy()]
    m = np.zeros(50)
    v = np.zeros(50)
    state = nn.adam_init(p_ref, alpha=1e-3, eps=1e-5)
    for step in range(1, 6):
        g = rng.standard_normal(50)
        numpy_ref.adam_update(p_flat, g, m, v, step, 1e-3, 0.9, 0.999, 1e-5)
        nn.adam_step(state, p_ref, [g])
        assert p_flat.tobytes() == p_ref[0].tobytes()
        assert m.tobytes() == state.m[0].tobytes()


def test_backend_selection_exports():
    assert kernels.BACKEND in ("numpy", "cython")
    assert "numpy" in available_backends()
    assert get_backend("numpy") is numpy_ref
    from coproq.exceptions import ConfigurationError
    with pytest.raises(ConfigurationError):
        get_backend("fortran")


@pytest.mark.skipif("cython" not in available_backends(),
                    reason="compiled backend not built")
def test_compiled_backend_matches_numpy_twin():
    cy = get_backend("cython")
    for seed, (d, a, hdim, b) in enumerate([(4, 3, 6, 7), (35, 5, 128, 128),
                                            (64, 4, 128, 32)]):
        lay = DuelingLayout(d, a, hdim)
        p = random_params(lay, seed + 10)
        rng = np.random.default_rng(seed + 20)
        X = rng.standard_normal((b, d))
        probe = rng.standard_normal((b, a))

        q_np, cache_np = numpy_ref.q_forward_cached(lay, p, X)
        q_cy, cache_cy = cy.q_forward_cached(lay, p, X)
        assert np.allclose(q_np, q_cy, rtol=1e-12, atol=1e-12)
        assert np.allclose(cy.q_forward(lay, p, X), q_np,
                           rtol=1e-12, atol=1e-12)

        g_np = numpy_ref.q_backward(lay, p, cache_np, probe)
        g_cy = cy.q_backward(lay, p, cache_cy, probe)
        scale = max(1.0, float(np.max(np.abs(g_np))))
        assert np.max(np.abs(g_np - g_cy)) / scale < 1e-12


@pytest.mark.skipif("cython" not in available_backends(),
                    reason="compiled backend not built")
def test_compiled_adam_bitwise_identical():
    cy = get_backend("cython")
    rng = np.random.default_rng(5)
    p1 = rng.standard_normal(200)
    p2 = p1.copy()
    m1, v1 = np.zeros(200), np.zeros(200)
    m2, v2 = np.zeros(200), np.zeros(200)
    for step in range(1, 8):
        g = rng.standard_normal(200)
        numpy_ref.adam_update(p1, g, m1, v1, step, 1e-4, 0.9, 0.999, 1e-4)
        cy.adam_update(p2, g, m2, v2, step, 1e-4, 0.9, 0.999, 1e-4)
        assert p1.tobytes() == p2.tobytes()


def test_layout_pack_unpack_round_trip():
    lay = small_layout()
    rng = np.random.default_rng(6)
    trunk = nn.mlp_init([4, 6, 6], rng, activations=["relu", "relu"])
    value = nn.mlp_init([6, 6, 1], rng)
    advantage = nn.mlp_init([6, 6, 3], rng)
    p = lay.pack(trunk, value, advantage)
    assert p.shape == (lay.size,)
    t2, v2, a2 = lay.unpack(p)
    for a, b in zip(trunk.W + value.W + advantage.W, t2.W + v2.W + a2.W):
        assert np.array_equal(a, b)
    assert t2.activations == ["relu", "relu"]
    assert a2.activations == ["relu", "linear"]
