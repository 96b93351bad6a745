import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfr.net import Network
from nfr.regularizers import (
    PRESETS,
    RegularizerSpec,
    layer_reg,
    reg_grad,
    top_reg,
    total_reg,
    weighted_reg,
    weighted_reg_grad_p,
)

from helpers import central_diff, rel_err

W_FIX = np.array([[1.0, 2.0], [3.0, 4.0]])  # rows = output index


def one_layer_net(w=W_FIX, u=None):
    w = np.asarray(w, dtype=np.float64)
    if u is None:
        u = np.array([[1.0, 0.0], [0.0, 2.0]])
    return Network([w.copy()], np.asarray(u, dtype=np.float64).copy(), "tanh")


# -------------------------------------------------------------- layer_reg


def test_layer_reg_l12_oracle_value():
    # columns give ((1+3)/2)^2 = 4 and ((2+4)/2)^2 = 9, mean 6.5
    assert layer_reg(W_FIX, 1, 2) == pytest.approx(6.5)


def test_layer_reg_l21_oracle_value():
    # columns give (1+9)/2 = 5 and (4+16)/2 = 10, mean 7.5
    assert layer_reg(W_FIX, 2, 1) == pytest.approx(7.5)


def test_layer_reg_zero_matrix():
    assert layer_reg(np.zeros((3, 4)), 0.5, 4) == 0.0


@settings(max_examples=50, deadline=None)
@given(
    c=st.floats(-3, 3, allow_nan=False),
    o1=st.sampled_from([0.5, 1.0, 2.0]),
    o2=st.sampled_from([1.0, 2.0, 4.0]),
    seed=st.integers(0, 1000),
)
def test_layer_reg_positive_homogeneity(c, o1, o2, seed):
    W = np.random.default_rng(seed).normal(size=(3, 2))
    lhs = layer_reg(c * W, o1, o2)
    rhs = abs(c) ** (o1 * o2) * layer_reg(W, o1, o2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------- top_reg


def test_top_reg_oracle_values():
    assert top_reg(np.array([[1.0, 0.0], [0.0, 2.0]]), 2) == pytest.approx(2.5)
    assert top_reg(np.zeros((4, 3)), 2) == 0.0
    assert top_reg(np.array([[3.0, 4.0]]), 2) == pytest.approx(25.0)


# -------------------------------------------------------------- total_reg


def test_total_reg_zero_lambda():
    net = one_layer_net()
    assert total_reg(net, RegularizerSpec.preset("l12")) == 0.0


def test_total_reg_sums_oracle_pieces():
    net = one_layer_net()
    spec = RegularizerSpec.preset("l12", lambda_w=1.0, lambda_u=1.0)
    assert total_reg(net, spec) == pytest.approx(6.5 + 2.5)


def test_total_reg_linear_in_lambda():
    net = one_layer_net()
    s1 = RegularizerSpec.preset("l12", lambda_w=0.3, lambda_u=0.7)
    s2 = RegularizerSpec.preset("l12", lambda_w=0.9, lambda_u=2.1)
    assert total_reg(net, s2) == pytest.approx(3.0 * total_reg(net, s1))


def test_presets_map_to_exact_tuples():
    assert PRESETS == {
        "l12": (1.0, 2.0, 2.0),
        "l21": (2.0, 1.0, 2.0),
        "l_half_4": (0.5, 4.0, 2.0),
    }
    with pytest.raises(ValueError):
        RegularizerSpec.preset("l99")


def test_spec_rejects_bad_exponents():
    with pytest.raises(ValueError):
        RegularizerSpec(0.0, 2, 2)
    with pytest.raises(ValueError):
        RegularizerSpec(1, 2, 2, lambda_u=-1.0)


# --------------------------------------------------------------- reg_grad


def test_reg_grad_matches_finite_differences(fixture_net):
    net = fixture_net.copy()
    # keep every |w| away from the non-smooth point of |.|
    for w in net.parameters():
        w[...] = np.sign(w) * (np.abs(w) + 0.15)
    spec = RegularizerSpec.preset("l12", lambda_w=[0.8, 1.3], lambda_u=0.6)
    from helpers import flatten_params, set_params

    base = flatten_params(net)

    def obj(theta):
        set_params(net, theta)
        return total_reg(net, spec)

    fd = central_diff(obj, base, eps=1e-6)
    set_params(net, base)
    dw, du = reg_grad(net, spec)
    ana = np.concatenate([g.ravel() for g in dw] + [du.ravel()])
    assert rel_err(ana, fd, floor=1e-9) <= 1e-5


def test_reg_grad_zero_matrix_l21_is_zero():
    net = one_layer_net(np.zeros((2, 2)), np.zeros((2, 1)))
    dw, du = reg_grad(net, RegularizerSpec.preset("l21", 1.0, 1.0))
    assert np.all(dw[0] == 0) and np.all(du == 0)


def test_reg_grad_subgradient_zero_at_kinks():
    net = one_layer_net(np.array([[0.0, 1.0], [0.0, -2.0]]))
    dw, _ = reg_grad(net, RegularizerSpec.preset("l12", 1.0, 0.0))
    assert np.all(dw[0][:, 0] == 0)
    assert np.all(np.isfinite(dw[0]))


def test_inplace_reg_grad_matches_reference(rng):
    from nfr.regularizers import add_reg_grad_inplace
    from conftest import random_small_net

    for name in PRESETS:
        net = random_small_net(rng, max_depth=3)
        spec = RegularizerSpec.preset(name, lambda_w=0.7, lambda_u=1.1)
        ref_w, ref_u = reg_grad(net, spec)
        acc_w = [rng.normal(size=w.shape) for w in net.weights]
        acc_u = rng.normal(size=net.top.shape)
        base_w = [a.copy() for a in acc_w]
        base_u = acc_u.copy()
        scratch = [np.empty_like(w) for w in net.weights]
        add_reg_grad_inplace(net, spec, acc_w, acc_u, scratch)
        for a, b, r in zip(acc_w, base_w, ref_w):
            np.testing.assert_allclose(a, b + r, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(acc_u, base_u + ref_u, rtol=1e-13, atol=1e-15)


def test_top_grad_oracle_value():
    net = one_layer_net(np.zeros((1, 2)), np.array([[3.0, 4.0]]))
    _, du = reg_grad(net, RegularizerSpec(1, 2, 2, lambda_w=0.0, lambda_u=1.0))
    np.testing.assert_allclose(du, [[6.0, 8.0]])


# ------------------------------------------------------------ weighted_reg


def test_weighted_reg_identity_at_unit_weights(fixture_net):
    spec = RegularizerSpec.preset("l12", lambda_w=[0.5, 1.5], lambda_u=2.0)
    p = [np.ones(m) for m in fixture_net.hidden_widths]
    assert weighted_reg(fixture_net, spec, p) == total_reg(fixture_net, spec)


def test_weighted_reg_identity_all_presets(rng):
    from conftest import random_small_net

    for name in PRESETS:
        for _ in range(5):
            net = random_small_net(rng)
            spec = RegularizerSpec.preset(name, lambda_w=0.9, lambda_u=1.1)
            p = [np.ones(m) for m in net.hidden_widths]
            a, b = weighted_reg(net, spec, p), total_reg(net, spec)
            assert a == pytest.approx(b, rel=1e-12)


def test_weighted_reg_scan_minimized_at_uniform():
    # identical neurons: tilting mass toward either one can only increase
    # the penalty, so the 1-d scan over (2-t, t) bottoms out at t = 1
    w = np.array([[0.7, -0.2], [0.7, -0.2]])
    u = np.array([[1.1], [1.1]])
    net = Network([w], u, "tanh")
    spec = RegularizerSpec.preset("l12", lambda_w=1.0, lambda_u=1.0)
    ts = np.arange(0.1, 2.0, 0.1)
    vals = [weighted_reg(net, spec, [np.array([2.0 - t, t])]) for t in ts]
    assert np.argmin(vals) == int(np.where(np.isclose(ts, 1.0))[0][0])


def test_weighted_reg_linear_in_lambda(fixture_net):
    p = [np.array([1.3, 0.7]), np.array([0.4, 1.6])]
    s1 = RegularizerSpec.preset("l12", lambda_w=0.5, lambda_u=0.25)
    s2 = RegularizerSpec.preset("l12", lambda_w=1.0, lambda_u=0.5)
    assert weighted_reg(fixture_net, s2, p) == pytest.approx(
        2 * weighted_reg(fixture_net, s1, p)
    )


def test_weighted_reg_rejects_nonpositive_p(fixture_net):
    spec = RegularizerSpec.preset("l12", 1.0, 1.0)
    with pytest.raises(ValueError, match="positive"):
        weighted_reg(fixture_net, spec, [np.array([1.0, 0.0]), np.ones(2)])


# ----------------------------------------------------- weighted_reg_grad_p


def test_weighted_grad_p_symmetric_net_is_constant_per_layer():
    w1 = np.full((3, 2), 0.4)
    w2 = np.full((3, 3), -0.2)
    u = np.full((3, 1), 0.9)
    net = Network([w1, w2], u, "tanh")
    spec = RegularizerSpec.preset("l12", lambda_w=1.0, lambda_u=1.0)
    g = weighted_reg_grad_p(net, spec, [np.ones(3), np.ones(3)])
    for layer in g:
        assert np.ptp(layer) == pytest.approx(0.0, abs=1e-14)


def test_weighted_grad_p_matches_finite_differences(fixture_net, rng):
    spec = RegularizerSpec.preset("l12", lambda_w=[0.7, 1.2], lambda_u=0.9)
    p = [rng.uniform(0.5, 1.5, size=m) for m in fixture_net.hidden_widths]
    flat = np.concatenate(p)

    def obj(theta):
        q = [theta[:2], theta[2:]]
        return weighted_reg(fixture_net, spec, q)

    fd = central_diff(obj, flat, eps=1e-6)
    ana = np.concatenate(weighted_reg_grad_p(fixture_net, spec, p))
    assert rel_err(ana, fd, floor=1e-9) <= 1e-4


def test_weighted_grad_p_all_presets_fd(rng):
    from conftest import random_small_net

    for name in PRESETS:
        net = random_small_net(rng, max_depth=3)
        spec = RegularizerSpec.preset(name, lambda_w=0.8, lambda_u=1.4)
        p = [rng.uniform(0.6, 1.4, size=m) for m in net.hidden_widths]
        sizes = np.cumsum([0] + [len(v) for v in p])

        def obj(theta):
            q = [theta[a:b] for a, b in zip(sizes[:-1], sizes[1:])]
            return weighted_reg(net, spec, q)

        fd = central_diff(obj, np.concatenate(p), eps=1e-6)
        ana = np.concatenate(weighted_reg_grad_p(net, spec, p))
        assert rel_err(ana, fd, floor=1e-9) <= 1e-4


def test_weighted_grad_p_zero_lambda_is_zero(fixture_net):
    spec = RegularizerSpec.preset("l12", lambda_w=0.0, lambda_u=0.0)
    g = weighted_reg_grad_p(
        fixture_net, spec, [np.ones(m) for m in fixture_net.hidden_widths]
    )
    assert all(np.all(v == 0) for v in g)
