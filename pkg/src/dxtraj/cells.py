"""Recurrent and feed-forward cell kinds with single-step forward/backward.

Data orientation: rows are patients, columns are features, so a step computes
x @ W + h @ U + b. Each cell exposes

    init_params(in_size, hid, rng) -> dict of named arrays
    init_state(n_patients, hid)    -> dict of state arrays ("h" always present)
    step(x, state, params)         -> (new_state, trace)
    step_backward(trace, d_state, params) -> (dx, d_state_prev, d_params)

The backward passes are hand-derived and are checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from .numerics import SeededRng, init_gaussian, init_identity, sigmoid, tanh_act

CELL_KINDS = ("mgru", "gru", "lstm", "lstm_google", "jordan", "feedforward")


def _gauss(rows, cols, rng):
    return init_gaussian(rows, cols, rng)


def _zeros(n):
    return np.zeros(n, dtype=np.float64)


# ---------------------------------------------------------------------------
# parameter construction

def init_params(kind: str, in_size: int, hid: int, rng: SeededRng) -> dict:
    """Input-to-hidden matrices are Gaussian, square recurrent matrices are
    identity, biases are zero."""
    if kind == "mgru":
        return {
            "Wf": _gauss(in_size, hid, rng), "Uf": init_identity(hid), "bf": _zeros(hid),
            "Wh": _gauss(in_size, hid, rng), "Uh": init_identity(hid), "bh": _zeros(hid),
        }
    if kind == "gru":
        return {
            "Wz": _gauss(in_size, hid, rng), "Uz": init_identity(hid), "bz": _zeros(hid),
            "Wr": _gauss(in_size, hid, rng), "Ur": init_identity(hid), "br": _zeros(hid),
            "Wh": _gauss(in_size, hid, rng), "Uh": init_identity(hid), "bh": _zeros(hid),
        }
    if kind == "lstm" or kind == "lstm_google":
        p = {
            "Wi": _gauss(in_size, hid, rng), "Ui": init_identity(hid), "bi": _zeros(hid),
            "Wf": _gauss(in_size, hid, rng), "Uf": init_identity(hid), "bf": _zeros(hid),
            "Wo": _gauss(in_size, hid, rng), "Uo": init_identity(hid), "bo": _zeros(hid),
            "Wg": _gauss(in_size, hid, rng), "Ug": init_identity(hid), "bg": _zeros(hid),
        }
        if kind == "lstm_google":
            p["Wproj"] = init_identity(hid)
        return p
    if kind == "jordan":
        return {"W": _gauss(in_size, hid, rng), "U": init_identity(hid), "b": _zeros(hid)}
    if kind == "feedforward":
        return {"W": _gauss(in_size, hid, rng), "b": _zeros(hid)}
    raise ValueError(f"unknown cell kind: {kind}")


def param_count(kind: str, in_size: int, hid: int) -> int:
    """Exact number of trainable scalars for one cell."""
    block = in_size * hid + hid * hid + hid
    if kind == "mgru":
        return 2 * block
    if kind == "gru":
        return 3 * block
    if kind == "lstm":
        return 4 * block
    if kind == "lstm_google":
        return 4 * block + hid * hid
    if kind == "jordan":
        return block
    if kind == "feedforward":
        return in_size * hid + hid
    raise ValueError(f"unknown cell kind: {kind}")


def init_state(kind: str, n_patients: int, hid: int) -> dict:
    state = {"h": np.zeros((n_patients, hid))}
    if kind in ("lstm", "lstm_google"):
        state["c"] = np.zeros((n_patients, hid))
    return state


# ---------------------------------------------------------------------------
# forward steps

def step(kind: str, x: np.ndarray, state: dict, params: dict):
    if kind == "mgru":
        return _mgru_step(x, state["h"], params)
    if kind == "gru":
        return _gru_step(x, state["h"], params)
    if kind == "lstm":
        return _lstm_step(x, state["h"], state["c"], params)
    if kind == "lstm_google":
        return _lstm_google_step(x, state["h"], state["c"], params)
    if kind == "jordan":
        return _jordan_step(x, state["h"], params)
    if kind == "feedforward":
        return _feedforward_step(x, params)
    raise ValueError(f"unknown cell kind: {kind}")


def step_backward(kind: str, trace: dict, d_state: dict, params: dict):
    if kind == "mgru":
        return _mgru_backward(trace, d_state["h"], params)
    if kind == "gru":
        return _gru_backward(trace, d_state["h"], params)
    if kind == "lstm":
        return _lstm_backward(trace, d_state["h"], d_state["c"], params)
    if kind == "lstm_google":
        return _lstm_google_backward(trace, d_state["h"], d_state["c"], params)
    if kind == "jordan":
        return _jordan_backward(trace, d_state["h"], params)
    if kind == "feedforward":
        return _feedforward_backward(trace, d_state["h"], params)
    raise ValueError(f"unknown cell kind: {kind}")


def mgru_step(x, h_prev, params):
    """Single minimal-GRU step; kept as a named entry point for the core cell."""
    return _mgru_step(x, h_prev, params)


def mgru_backward(trace, d_h, params):
    return _mgru_backward(trace, d_h, params)


def _check_shapes(x, h_prev, w_key, params):
    if x.shape[1] != params[w_key].shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match weight rows {params[w_key].shape[0]}"
        )
    if h_prev is not None and x.shape[0] != h_prev.shape[0]:
        raise ValueError(
            f"batch size mismatch: x has {x.shape[0]} rows, h_prev has {h_prev.shape[0]}"
        )


def _mgru_step(x, h_prev, p):
    _check_shapes(x, h_prev, "Wf", p)
    f = sigmoid(x @ p["Wf"] + h_prev @ p["Uf"] + p["bf"])
    fh = f * h_prev
    hc = tanh_act(x @ p["Wh"] + fh @ p["Uh"] + p["bh"])
    h = (1.0 - f) * h_prev + f * hc
    trace = {"x": x, "h_prev": h_prev, "f": f, "fh": fh, "hc": hc}
    return {"h": h}, trace


def _mgru_backward(tr, d_h, p):
    x, h_prev, f, fh, hc = tr["x"], tr["h_prev"], tr["f"], tr["fh"], tr["hc"]
    d_hc = d_h * f
    d_ah = d_hc * (1.0 - hc * hc)
    d_fh = d_ah @ p["Uh"].T
    d_f = d_h * (hc - h_prev) + d_fh * h_prev
    d_af = d_f * f * (1.0 - f)
    d_h_prev = d_h * (1.0 - f) + d_fh * f + d_af @ p["Uf"].T
    d_x = d_af @ p["Wf"].T + d_ah @ p["Wh"].T
    grads = {
        "Wf": x.T @ d_af, "Uf": h_prev.T @ d_af, "bf": d_af.sum(axis=0),
        "Wh": x.T @ d_ah, "Uh": fh.T @ d_ah, "bh": d_ah.sum(axis=0),
    }
    return d_x, {"h": d_h_prev}, grads


def _gru_step(x, h_prev, p):
    _check_shapes(x, h_prev, "Wz", p)
    z = sigmoid(x @ p["Wz"] + h_prev @ p["Uz"] + p["bz"])
    r = sigmoid(x @ p["Wr"] + h_prev @ p["Ur"] + p["br"])
    rh = r * h_prev
    hc = tanh_act(x @ p["Wh"] + rh @ p["Uh"] + p["bh"])
    h = (1.0 - z) * h_prev + z * hc
    trace = {"x": x, "h_prev": h_prev, "z": z, "r": r, "rh": rh, "hc": hc}
    return {"h": h}, trace


def _gru_backward(tr, d_h, p):
    x, h_prev, z, r, rh, hc = tr["x"], tr["h_prev"], tr["z"], tr["r"], tr["rh"], tr["hc"]
    d_hc = d_h * z
    d_ah = d_hc * (1.0 - hc * hc)
    d_rh = d_ah @ p["Uh"].T
    d_z = d_h * (hc - h_prev)
    d_az = d_z * z * (1.0 - z)
    d_r = d_rh * h_prev
    d_ar = d_r * r * (1.0 - r)
    d_h_prev = d_h * (1.0 - z) + d_rh * r + d_az @ p["Uz"].T + d_ar @ p["Ur"].T
    d_x = d_az @ p["Wz"].T + d_ar @ p["Wr"].T + d_ah @ p["Wh"].T
    grads = {
        "Wz": x.T @ d_az, "Uz": h_prev.T @ d_az, "bz": d_az.sum(axis=0),
        "Wr": x.T @ d_ar, "Ur": h_prev.T @ d_ar, "br": d_ar.sum(axis=0),
        "Wh": x.T @ d_ah, "Uh": rh.T @ d_ah, "bh": d_ah.sum(axis=0),
    }
    return d_x, {"h": d_h_prev}, grads


def _lstm_gates(x, rec, p):
    i = sigmoid(x @ p["Wi"] + rec @ p["Ui"] + p["bi"])
    f = sigmoid(x @ p["Wf"] + rec @ p["Uf"] + p["bf"])
    o = sigmoid(x @ p["Wo"] + rec @ p["Uo"] + p["bo"])
    g = tanh_act(x @ p["Wg"] + rec @ p["Ug"] + p["bg"])
    return i, f, o, g


def _lstm_gates_backward(tr, d_i, d_f, d_o, d_g, p):
    x, rec = tr["x"], tr["rec"]
    i, f, o, g = tr["i"], tr["f"], tr["o"], tr["g"]
    d_ai = d_i * i * (1.0 - i)
    d_af = d_f * f * (1.0 - f)
    d_ao = d_o * o * (1.0 - o)
    d_ag = d_g * (1.0 - g * g)
    d_x = d_ai @ p["Wi"].T + d_af @ p["Wf"].T + d_ao @ p["Wo"].T + d_ag @ p["Wg"].T
    d_rec = d_ai @ p["Ui"].T + d_af @ p["Uf"].T + d_ao @ p["Uo"].T + d_ag @ p["Ug"].T
    grads = {
        "Wi": x.T @ d_ai, "Ui": rec.T @ d_ai, "bi": d_ai.sum(axis=0),
        "Wf": x.T @ d_af, "Uf": rec.T @ d_af, "bf": d_af.sum(axis=0),
        "Wo": x.T @ d_ao, "Uo": rec.T @ d_ao, "bo": d_ao.sum(axis=0),
        "Wg": x.T @ d_ag, "Ug": rec.T @ d_ag, "bg": d_ag.sum(axis=0),
    }
    return d_x, d_rec, grads


def _lstm_step(x, h_prev, c_prev, p):
    _check_shapes(x, h_prev, "Wi", p)
    i, f, o, g = _lstm_gates(x, h_prev, p)
    c = f * c_prev + i * g
    tc = tanh_act(c)
    h = o * tc
    trace = {"x": x, "rec": h_prev, "c_prev": c_prev,
             "i": i, "f": f, "o": o, "g": g, "tc": tc}
    return {"h": h, "c": c}, trace


def _lstm_backward(tr, d_h, d_c_next, p):
    i, f, o, g, tc = tr["i"], tr["f"], tr["o"], tr["g"], tr["tc"]
    d_o = d_h * tc
    d_c = d_c_next + d_h * o * (1.0 - tc * tc)
    d_f = d_c * tr["c_prev"]
    d_i = d_c * g
    d_g = d_c * i
    d_c_prev = d_c * f
    d_x, d_rec, grads = _lstm_gates_backward(tr, d_i, d_f, d_o, d_g, p)
    return d_x, {"h": d_rec, "c": d_c_prev}, grads


def _lstm_google_step(x, r_prev, c_prev, p):
    """LSTM variant with a recurrent projection: the exposed state is the
    projected output r = (o * tanh(c)) @ Wproj, which also drives the gates."""
    _check_shapes(x, r_prev, "Wi", p)
    i, f, o, g = _lstm_gates(x, r_prev, p)
    c = f * c_prev + i * g
    tc = tanh_act(c)
    m = o * tc
    r = m @ p["Wproj"]
    trace = {"x": x, "rec": r_prev, "c_prev": c_prev,
             "i": i, "f": f, "o": o, "g": g, "tc": tc, "m": m}
    return {"h": r, "c": c}, trace


def _lstm_google_backward(tr, d_r, d_c_next, p):
    i, f, o, g, tc, m = tr["i"], tr["f"], tr["o"], tr["g"], tr["tc"], tr["m"]
    d_m = d_r @ p["Wproj"].T
    d_o = d_m * tc
    d_c = d_c_next + d_m * o * (1.0 - tc * tc)
    d_f = d_c * tr["c_prev"]
    d_i = d_c * g
    d_g = d_c * i
    d_c_prev = d_c * f
    d_x, d_rec, grads = _lstm_gates_backward(tr, d_i, d_f, d_o, d_g, p)
    grads["Wproj"] = m.T @ d_r
    return d_x, {"h": d_rec, "c": d_c_prev}, grads


def _jordan_step(x, s_prev, p):
    """Classical output-feedback recurrence: the state fed back is the cell's
    previous output activation."""
    _check_shapes(x, s_prev, "W", p)
    h = tanh_act(x @ p["W"] + s_prev @ p["U"] + p["b"])
    trace = {"x": x, "s_prev": s_prev, "h": h}
    return {"h": h}, trace


def _jordan_backward(tr, d_h, p):
    d_a = d_h * (1.0 - tr["h"] * tr["h"])
    d_x = d_a @ p["W"].T
    d_s_prev = d_a @ p["U"].T
    grads = {"W": tr["x"].T @ d_a, "U": tr["s_prev"].T @ d_a, "b": d_a.sum(axis=0)}
    return d_x, {"h": d_s_prev}, grads


def _feedforward_step(x, p):
    _check_shapes(x, None, "W", p)
    h = tanh_act(x @ p["W"] + p["b"])
    trace = {"x": x, "h": h, "n": x.shape[0]}
    return {"h": h}, trace


def _feedforward_backward(tr, d_h, p):
    d_a = d_h * (1.0 - tr["h"] * tr["h"])
    d_x = d_a @ p["W"].T
    grads = {"W": tr["x"].T @ d_a, "b": d_a.sum(axis=0)}
    return d_x, {"h": np.zeros_like(d_h)}, grads
