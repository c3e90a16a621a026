"""Bidirectional recurrent architecture over the admission axis.

Two directional flows (stacks of identical cells) scan the admission sequence
in opposite temporal orders. At every step t their states are combined by a
joint layer

    h_joint = LReLU(h_fwd @ Vfwd + h_bwd @ Vbwd + b_joint, alpha_j)

and fed to the output layer

    yhat = softmax(LReLU(h_joint @ Wout + b_out, alpha_o))

over the code slots. Both LReLU slopes are trainable scalars. The backward
pass (full backpropagation through time, including the slopes and the optional
embedding) is hand-derived and verified against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cells
from .ehr_data import BatchTensor, ExtraFeatures, PatientRecord, CodeVocabulary, multi_hot
from .numerics import SeededRng, init_gaussian, init_identity, lrelu, softmax_rows

LOSS_EPS = 1e-8


@dataclass
class ModelParams:
    """Full trainable parameter set plus the structural metadata needed to
    rebuild it from a checkpoint."""
    cell_kind: str
    n_codes: int
    hidden: int
    layers: int
    extras: ExtraFeatures
    fwd: list            # per-layer dicts of cell parameters
    bwd: list
    Vfwd: np.ndarray     # (hid, hid)
    Vbwd: np.ndarray
    b_joint: np.ndarray  # (hid,)
    alpha_j: np.ndarray  # scalar, shape ()
    Wout: np.ndarray     # (hid, n_codes)
    b_out: np.ndarray    # (n_codes,)
    alpha_o: np.ndarray
    E: np.ndarray | None = None  # (n_codes, embed_dim) when embedding enabled
    duration_max: float = 0.0
    interval_max: float = 0.0
    vocab_labels: list = field(default_factory=list)

    @property
    def embed_dim(self) -> int:
        return 0 if self.E is None else self.E.shape[1]

    @property
    def input_width(self) -> int:
        base = self.embed_dim if self.E is not None else self.n_codes
        return base + self.extras.width

    def flat(self) -> dict:
        """Name -> array view of every trainable parameter. Mutating the
        arrays mutates the model."""
        out = {}
        for l, p in enumerate(self.fwd):
            for k, v in p.items():
                out[f"fwd{l}.{k}"] = v
        for l, p in enumerate(self.bwd):
            for k, v in p.items():
                out[f"bwd{l}.{k}"] = v
        out.update(Vfwd=self.Vfwd, Vbwd=self.Vbwd, b_joint=self.b_joint,
                   alpha_j=self.alpha_j, Wout=self.Wout, b_out=self.b_out,
                   alpha_o=self.alpha_o)
        if self.E is not None:
            out["E"] = self.E
        return out

    def set_flat(self, values: dict) -> None:
        for k, v in self.flat().items():
            v[...] = values[k]

    def copy(self) -> "ModelParams":
        m = init_model(self.cell_kind, self.n_codes, self.hidden,
                       layers=self.layers, extras=self.extras,
                       embed_dim=self.embed_dim or None, rng=SeededRng(0))
        m.set_flat(self.flat())
        m.duration_max = self.duration_max
        m.interval_max = self.interval_max
        m.vocab_labels = list(self.vocab_labels)
        return m


def init_model(cell_kind: str, n_codes: int, hidden: int, layers: int = 1,
               extras: ExtraFeatures | None = None, embed_dim: int | None = None,
               rng: SeededRng | None = None) -> ModelParams:
    """Weights: Gaussian for rectangular matrices, identity for square ones,
    zeros for biases, 0.01 for both LReLU slopes."""
    extras = extras or ExtraFeatures()
    rng = rng or SeededRng(0)
    E = init_gaussian(n_codes, embed_dim, rng) if embed_dim else None
    in0 = (embed_dim if embed_dim else n_codes) + extras.width
    fwd = [cells.init_params(cell_kind, in0 if l == 0 else hidden, hidden, rng)
           for l in range(layers)]
    bwd = [cells.init_params(cell_kind, in0 if l == 0 else hidden, hidden, rng)
           for l in range(layers)]
    return ModelParams(
        cell_kind=cell_kind, n_codes=n_codes, hidden=hidden, layers=layers,
        extras=extras, fwd=fwd, bwd=bwd,
        Vfwd=init_identity(hidden), Vbwd=init_identity(hidden),
        b_joint=np.zeros(hidden), alpha_j=np.array(0.01),
        Wout=init_gaussian(hidden, n_codes, rng), b_out=np.zeros(n_codes),
        alpha_o=np.array(0.01), E=E,
    )


def zero_grads(model: ModelParams) -> dict:
    return {k: np.zeros_like(v) for k, v in model.flat().items()}


# ---------------------------------------------------------------------------
# forward

def _scan_direction(inp, mask, layer_params, cell_kind, hidden):
    """Run a stack of cells over the step axis with mask-gated state carry.
    Padded steps pass the previous state through unchanged.

    Returns (top-layer h per step, per-layer traces, per-layer gate masks).
    """
    n_steps, n_pat, _ = inp.shape
    traces = [[] for _ in layer_params]
    states = [cells.init_state(cell_kind, n_pat, hidden) for _ in layer_params]
    prev_states = [[] for _ in layer_params]
    top_h = np.zeros((n_steps, n_pat, hidden))
    for t in range(n_steps):
        m = mask[t][:, None]
        layer_in = inp[t]
        for l, params in enumerate(layer_params):
            prev_states[l].append(states[l])
            stepped, tr = cells.step(cell_kind, layer_in, states[l], params)
            gated = {k: m * stepped[k] + (1.0 - m) * states[l][k] for k in stepped}
            traces[l].append(tr)
            states[l] = gated
            layer_in = gated["h"]
        top_h[t] = states[-1]["h"]
    return top_h, traces, prev_states


def forward(batch: BatchTensor, model: ModelParams, dropout_mask=None) -> dict:
    """Full forward pass; the returned trace holds every intermediate needed
    by backward(). dropout_mask, when given, multiplies the joint-layer output
    (inverted-dropout convention, already scaled)."""
    x, mask = batch.x, batch.mask
    d = model.n_codes
    if x.shape[2] != d + model.extras.width:
        raise ValueError(
            f"batch feature width {x.shape[2]} does not match model "
            f"({d} codes + {model.extras.width} extras)")

    if model.E is not None:
        codes = x[:, :, :d]
        inp = np.concatenate([codes @ model.E, x[:, :, d:]], axis=2)
    else:
        inp = x

    hf, tr_f, prev_f = _scan_direction(inp, mask, model.fwd, model.cell_kind,
                                       model.hidden)
    # backward flow: same machinery on step-reversed data, states re-reversed
    # so hb[t] summarizes admissions t..T-1
    hb_rev, tr_b, prev_b = _scan_direction(inp[::-1], mask[::-1], model.bwd,
                                           model.cell_kind, model.hidden)
    hb = hb_rev[::-1]

    j_pre = hf @ model.Vfwd + hb @ model.Vbwd + model.b_joint
    hj = lrelu(j_pre, float(model.alpha_j))
    if dropout_mask is not None:
        hj = hj * dropout_mask
    out_pre = hj @ model.Wout + model.b_out
    out_act = lrelu(out_pre, float(model.alpha_o))
    yhat = softmax_rows(out_act)

    return {
        "inp": inp, "x": x, "mask": mask,
        "hf": hf, "hb": hb, "traces_f": tr_f, "traces_b": tr_b,
        "prev_f": prev_f, "prev_b": prev_b,
        "j_pre": j_pre, "hj": hj, "out_pre": out_pre, "out_act": out_act,
        "yhat": yhat, "dropout_mask": dropout_mask,
    }


# ---------------------------------------------------------------------------
# backward

def _bptt_direction(d_top, inp, mask, traces, prev_states, layer_params,
                    cell_kind, grads, prefix):
    """Backprop one directional stack. d_top is the gradient flowing into the
    top layer's gated state at every step. Returns the gradient wrt inp."""
    n_steps, n_pat, _ = inp.shape
    n_layers = len(layer_params)
    d_inp = np.zeros_like(inp)
    carry = [{k: np.zeros_like(v) for k, v in prev_states[l][0].items()}
             for l in range(n_layers)]
    for t in range(n_steps - 1, -1, -1):
        m = mask[t][:, None]
        d_h_in = d_top[t]
        for l in range(n_layers - 1, -1, -1):
            d_state = dict(carry[l])
            d_state["h"] = d_state["h"] + d_h_in
            gated = {k: m * v for k, v in d_state.items()}
            dx, d_prev, d_params = cells.step_backward(
                cell_kind, traces[l][t], gated, layer_params[l])
            for k, g in d_params.items():
                grads[f"{prefix}{l}.{k}"] += g
            carry[l] = {k: d_prev[k] + (1.0 - m) * d_state[k] for k in d_state}
            d_h_in = dx
        d_inp[t] = d_h_in
    return d_inp


def backward(trace: dict, batch: BatchTensor, model: ModelParams) -> dict:
    """Gradients of the masked-mean negated cross-entropy loss (see
    training.cross_entropy_loss) with respect to every parameter."""
    mask, targets = batch.mask, batch.targets
    yhat = trace["yhat"]
    grads = zero_grads(model)
    n_valid = mask.sum()
    if n_valid == 0:
        return grads

    yc = np.clip(yhat, LOSS_EPS, 1.0 - LOSS_EPS)
    inside = (yhat > LOSS_EPS) & (yhat < 1.0 - LOSS_EPS)
    d_yhat = -(targets / yc - (1.0 - targets) / (1.0 - yc)) / n_valid
    d_yhat = np.where(inside, d_yhat, 0.0) * mask[:, :, None]

    # softmax rows: d_z = y * (g - <g, y>)
    dot = np.sum(d_yhat * yhat, axis=-1, keepdims=True)
    d_out_act = yhat * (d_yhat - dot)

    out_pre = trace["out_pre"]
    alpha_o = float(model.alpha_o)
    d_out_pre = d_out_act * np.where(out_pre >= 0, 1.0, alpha_o)
    grads["alpha_o"] += np.sum(d_out_act * np.where(out_pre < 0, out_pre, 0.0))

    hj = trace["hj"]
    hid, d = model.hidden, model.n_codes
    grads["Wout"] += hj.reshape(-1, hid).T @ d_out_pre.reshape(-1, d)
    grads["b_out"] += d_out_pre.sum(axis=(0, 1))
    d_hj = d_out_pre @ model.Wout.T

    if trace["dropout_mask"] is not None:
        d_hj = d_hj * trace["dropout_mask"]

    j_pre = trace["j_pre"]
    alpha_j = float(model.alpha_j)
    d_j_pre = d_hj * np.where(j_pre >= 0, 1.0, alpha_j)
    grads["alpha_j"] += np.sum(d_hj * np.where(j_pre < 0, j_pre, 0.0))

    hf, hb = trace["hf"], trace["hb"]
    flat_dj = d_j_pre.reshape(-1, hid)
    grads["Vfwd"] += hf.reshape(-1, hid).T @ flat_dj
    grads["Vbwd"] += hb.reshape(-1, hid).T @ flat_dj
    grads["b_joint"] += d_j_pre.sum(axis=(0, 1))
    d_hf = d_j_pre @ model.Vfwd.T
    d_hb = d_j_pre @ model.Vbwd.T

    inp, mask_arr = trace["inp"], trace["mask"]
    d_inp = _bptt_direction(d_hf, inp, mask_arr, trace["traces_f"],
                            trace["prev_f"], model.fwd, model.cell_kind,
                            grads, "fwd")
    d_inp_rev = _bptt_direction(d_hb[::-1], inp[::-1], mask_arr[::-1],
                                trace["traces_b"], trace["prev_b"], model.bwd,
                                model.cell_kind, grads, "bwd")
    d_inp = d_inp + d_inp_rev[::-1]

    if model.E is not None:
        e = model.embed_dim
        codes = trace["x"][:, :, :model.n_codes]
        grads["E"] += codes.reshape(-1, model.n_codes).T @ \
            d_inp[:, :, :e].reshape(-1, e)

    return grads


# ---------------------------------------------------------------------------
# prediction

def build_history_tensor(patient: PatientRecord, model: ModelParams,
                         vocab: CodeVocabulary) -> BatchTensor:
    """Single-patient tensor using every admission as an input step (no
    targets); normalization constants come from the trained model."""
    m = len(patient.admissions)
    d = len(vocab)
    ex = model.extras
    x = np.zeros((m, 1, d + ex.width))
    for i, adm in enumerate(patient.admissions):
        x[i, 0, :d] = multi_hot(adm.codes, vocab)
        col = d
        if ex.adm_type:
            from .ehr_data import ADMISSION_TYPES
            if adm.adm_type in ADMISSION_TYPES:
                x[i, 0, col + ADMISSION_TYPES.index(adm.adm_type)] = 1.0
            col += 4
        if ex.duration:
            if adm.duration is not None and model.duration_max > 0:
                x[i, 0, col] = adm.duration / model.duration_max
            col += 1
        if ex.interval:
            ivl = 0.0 if i == 0 else float(
                adm.timestamp - patient.admissions[i - 1].timestamp)
            if model.interval_max > 0:
                x[i, 0, col] = ivl / model.interval_max
            col += 1
    mask = np.ones((m, 1))
    return BatchTensor(x=x, mask=mask, targets=np.zeros((m, 1, d)),
                       patient_ids=[patient.patient_id],
                       duration_max=model.duration_max,
                       interval_max=model.interval_max)


def rank_codes(yhat_row: np.ndarray) -> np.ndarray:
    """Indices by descending probability; ties broken by ascending index."""
    return np.lexsort((np.arange(yhat_row.size), -yhat_row))


def predict_topk(model: ModelParams, history: PatientRecord,
                 vocab: CodeVocabulary, k: int) -> list:
    """Top-k (code index, probability) for the admission after the history."""
    if not history.admissions:
        raise ValueError("empty admission history")
    if not (1 <= k <= len(vocab)):
        raise ValueError(f"k={k} out of range [1, {len(vocab)}]")
    batch = build_history_tensor(history, model, vocab)
    trace = forward(batch, model)
    probs = trace["yhat"][-1, 0, :]
    order = rank_codes(probs)[:k]
    return [(int(i), float(probs[i])) for i in order]
