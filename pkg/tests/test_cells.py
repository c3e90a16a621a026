import numpy as np
import numpy.testing as npt
import pytest

from dxtraj import cells
from dxtraj.cells import CELL_KINDS
from dxtraj.numerics import SeededRng, finite_diff_grad, max_relative_error

MGRU_SCALAR = 0.2885901  # sigma(0.2)=0.549834, tanh(0.2)=0.197375, update by hand


def scalar_mgru_params():
    return {
        "Wf": np.array([[1.0]]), "Uf": np.array([[0.0]]), "bf": np.zeros(1),
        "Wh": np.array([[1.0]]), "Uh": np.array([[0.0]]), "bh": np.zeros(1),
    }


def test_mgru_scalar_oracle():
    state, _ = cells.mgru_step(np.array([[0.2]]), np.array([[0.4]]),
                               scalar_mgru_params())
    assert abs(state["h"][0, 0] - MGRU_SCALAR) < 1e-6


def test_mgru_zero_params():
    zero = {k: np.zeros_like(v) for k, v in scalar_mgru_params().items()}
    v = np.array([[0.8, -0.3]])
    zero2 = {k: np.zeros((2, 2)) if v_.ndim == 2 else np.zeros(2)
             for k, v_ in cells.init_params("mgru", 2, 2, SeededRng(0)).items()}
    state, _ = cells.mgru_step(np.zeros((1, 2)), v, zero2)
    # all-zero weights: f = 0.5 everywhere, candidate = 0, h = 0.5 * h_prev
    npt.assert_allclose(state["h"], 0.5 * v)
    state, _ = cells.mgru_step(np.array([[0.0]]), np.array([[0.0]]), zero)
    npt.assert_allclose(state["h"], 0.0)


def test_mgru_convex_combination():
    rng = SeededRng(4)
    p = cells.init_params("mgru", 3, 3, rng)
    x = rng.normal(1.0, (5, 3))
    h_prev = rng.normal(1.0, (5, 3))
    state, tr = cells.mgru_step(x, h_prev, p)
    lo = np.minimum(h_prev, tr["hc"])
    hi = np.maximum(h_prev, tr["hc"])
    assert (state["h"] >= lo - 1e-12).all() and (state["h"] <= hi + 1e-12).all()


def test_mgru_forced_gate_limits():
    # f == 1 returns the candidate exactly; f == 0 returns h_prev exactly
    rng = SeededRng(9)
    p = cells.init_params("mgru", 2, 2, rng)
    x = rng.normal(1.0, (3, 2))
    h_prev = rng.normal(1.0, (3, 2))
    for forced, expect_candidate in ((1.0, True), (0.0, False)):
        _, tr = cells.mgru_step(x, h_prev, p)
        f = np.full_like(tr["f"], forced)
        h = (1 - f) * h_prev + f * tr["hc"]
        npt.assert_array_equal(h, tr["hc"] if expect_candidate else h_prev)


def test_backward_zero_and_linearity():
    rng = SeededRng(2)
    p = cells.init_params("mgru", 3, 4, rng)
    x = rng.normal(1.0, (2, 3))
    h_prev = rng.normal(1.0, (2, 4))
    _, tr = cells.mgru_step(x, h_prev, p)
    dx, dprev, grads = cells.mgru_backward(tr, np.zeros((2, 4)), p)
    assert not dx.any() and not dprev["h"].any()
    assert all(not g.any() for g in grads.values())

    d = rng.normal(1.0, (2, 4))
    dx1, dp1, g1 = cells.mgru_backward(tr, d, p)
    dx2, dp2, g2 = cells.mgru_backward(tr, 2.0 * d, p)
    npt.assert_allclose(dx2, 2.0 * dx1, atol=1e-12)
    npt.assert_allclose(dp2["h"], 2.0 * dp1["h"], atol=1e-12)
    for k in g1:
        npt.assert_allclose(g2[k], 2.0 * g1[k], atol=1e-12)


def _step_gradcheck(kind, in_size, hid, n_pat, seed):
    """Finite-difference check of a single step: scalar loss is a fixed random
    projection of every state array."""
    rng = SeededRng(seed)
    params = cells.init_params(kind, in_size, hid, rng)
    for v in params.values():
        v += rng.normal(0.4, v.shape)
    x = rng.normal(1.0, (n_pat, in_size))
    state0 = cells.init_state(kind, n_pat, hid)
    for v in state0.values():
        v += rng.normal(0.7, v.shape)
    weights = {k: rng.normal(1.0, (n_pat, hid)) for k in
               cells.init_state(kind, n_pat, hid)}

    names = sorted(params)
    sizes = [params[n].size for n in names]
    offsets = np.cumsum([0] + sizes)
    extra = x.size + sum(v.size for v in state0.values())
    theta0 = np.concatenate(
        [params[n].ravel() for n in names]
        + [x.ravel()] + [state0[k].ravel() for k in sorted(state0)])

    def unpack(theta):
        p = {n: theta[lo:hi].reshape(params[n].shape)
             for n, lo, hi in zip(names, offsets[:-1], offsets[1:])}
        pos = offsets[-1]
        xx = theta[pos:pos + x.size].reshape(x.shape)
        pos += x.size
        st = {}
        for k in sorted(state0):
            st[k] = theta[pos:pos + state0[k].size].reshape(state0[k].shape)
            pos += state0[k].size
        return p, xx, st

    def objective(theta):
        p, xx, st = unpack(theta)
        new_state, _ = cells.step(kind, xx, st, p)
        return float(sum(np.sum(weights[k] * new_state[k]) for k in new_state))

    numeric = finite_diff_grad(objective, theta0, 1e-5)

    new_state, trace = cells.step(kind, x, state0, params)
    d_state = dict(weights)
    if kind == "feedforward":
        d_state = {"h": weights["h"]}
    dx, d_prev, grads = cells.step_backward(kind, trace, d_state, params)
    analytic = np.concatenate(
        [grads[n].ravel() for n in names] + [dx.ravel()]
        + [d_prev[k].ravel() for k in sorted(state0)])
    assert theta0.size == analytic.size == offsets[-1] + extra
    return max_relative_error(analytic, numeric)


@pytest.mark.parametrize("kind", CELL_KINDS)
@pytest.mark.parametrize("dims", [(2, 3, 2), (5, 4, 3), (1, 1, 1)])
def test_step_gradients_match_finite_differences(kind, dims):
    in_size, hid, n_pat = dims
    err = _step_gradcheck(kind, in_size, hid, n_pat, seed=hash(dims) % 1000)
    assert err <= 1e-4, f"{kind} {dims}: rel err {err}"


def test_feedforward_zero_params():
    p = {"W": np.zeros((3, 2)), "b": np.zeros(2)}
    state, _ = cells.step("feedforward", np.ones((4, 3)), {"h": np.zeros((4, 2))}, p)
    npt.assert_array_equal(state["h"], 0.0)


def test_param_count_formulas():
    d, n = 7, 5
    block = d * n + n * n + n
    assert cells.param_count("mgru", d, n) == 2 * block
    assert cells.param_count("gru", d, n) == 3 * block
    assert cells.param_count("lstm", d, n) == 4 * block
    assert cells.param_count("lstm_google", d, n) == 4 * block + n * n
    assert cells.param_count("jordan", d, n) == block
    assert cells.param_count("mgru", 1, 1) == 6


@pytest.mark.parametrize("kind", CELL_KINDS)
def test_param_count_matches_actual_arrays(kind):
    params = cells.init_params(kind, 6, 4, SeededRng(0))
    assert sum(v.size for v in params.values()) == cells.param_count(kind, 6, 4)


def test_param_count_ordering():
    d = n = 271
    counts = {k: cells.param_count(k, d, n) for k in CELL_KINDS}
    assert counts["jordan"] < counts["mgru"] < counts["gru"] \
        < counts["lstm"] <= counts["lstm_google"]


def test_shape_mismatch_raises():
    p = cells.init_params("mgru", 3, 4, SeededRng(0))
    with pytest.raises(ValueError):
        cells.step("mgru", np.zeros((2, 5)), {"h": np.zeros((2, 4))}, p)
    with pytest.raises(ValueError):
        cells.step("mgru", np.zeros((2, 3)), {"h": np.zeros((3, 4))}, p)


def test_step_deterministic():
    rng = SeededRng(8)
    p = cells.init_params("gru", 3, 3, rng)
    x = rng.normal(1.0, (2, 3))
    s = {"h": rng.normal(1.0, (2, 3))}
    a, _ = cells.step("gru", x, s, p)
    b, _ = cells.step("gru", x, s, p)
    npt.assert_array_equal(a["h"], b["h"])
