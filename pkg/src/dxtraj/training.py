"""Loss, ADADELTA with gradient clipping, regularization, and the epoch loop
with patient-level 90/10 split and patience-based early stopping."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import network
from .ehr_data import ExtraFeatures, build_vocabulary, split_batches
from .network import LOSS_EPS, ModelParams
from .numerics import SeededRng


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    split_fraction: float = 0.9
    patience_epochs: int = 10
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    clip_norm: float = 5.0
    l2_coeff: float = 1e-4
    dropout_rate: float = 0.0
    input_noise_std: float = 0.0
    max_epochs: int = 500
    hidden_size: int | None = None  # None -> |D|
    cell_kind: str = "mgru"
    layers: int = 1
    extra_features: ExtraFeatures = field(default_factory=ExtraFeatures)
    embedding_dim: int | None = None
    batch_size: int | None = None  # None -> whole split as one batch
    pretrain: bool = False  # unsupervised pre-training hook; not implemented

    def __post_init__(self):
        if not (0.0 < self.split_fraction < 1.0):
            raise ValueError("split_fraction must be in (0, 1)")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extra_features"] = self.extra_features.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "extra_features" in d and isinstance(d["extra_features"], dict):
            d["extra_features"] = ExtraFeatures.from_dict(d["extra_features"])
        return cls(**d)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)    # per epoch
    val_loss: list = field(default_factory=list)      # per epoch
    iterations: int = 0                               # epochs until stop
    best_epoch: int = 0
    recall: dict = field(default_factory=dict)        # k -> mean recall (test)
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "iterations": self.iterations,
            "best_epoch": self.best_epoch,
            "recall": self.recall,
            "wall_time_s": self.wall_time_s,
        }


def cross_entropy_loss(targets, yhat, mask) -> float:
    """Negated multi-label cross entropy, summed over codes and averaged over
    unmasked steps. Probabilities are clamped to [eps, 1-eps]."""
    if yhat.shape != targets.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {targets.shape}")
    n_valid = mask.sum()
    if n_valid == 0:
        return 0.0
    yc = np.clip(yhat, LOSS_EPS, 1.0 - LOSS_EPS)
    per_step = np.sum(
        targets * np.log(yc) + (1.0 - targets) * np.log(1.0 - yc), axis=-1)
    return float(-np.sum(per_step * mask) / n_valid)


def clip_gradients(grads: dict, clip_norm: float) -> dict:
    """Global-norm clipping: if ||g||_2 > clip_norm, rescale every entry."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > clip_norm:
        scale = clip_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


class AdadeltaState:
    def __init__(self, model: ModelParams):
        self.g_acc = {k: np.zeros_like(v) for k, v in model.flat().items()}
        self.dx_acc = {k: np.zeros_like(v) for k, v in model.flat().items()}


def adadelta_update(model: ModelParams, grads: dict, state: AdadeltaState,
                    rho: float, eps: float) -> None:
    """Standard ADADELTA update, in place."""
    arrays = model.flat()
    for k, g in grads.items():
        state.g_acc[k] = rho * state.g_acc[k] + (1.0 - rho) * g * g
        step = -np.sqrt(state.dx_acc[k] + eps) / np.sqrt(state.g_acc[k] + eps) * g
        state.dx_acc[k] = rho * state.dx_acc[k] + (1.0 - rho) * step * step
        arrays[k][...] = arrays[k] + step


def l2_penalty(model: ModelParams, coeff: float) -> float:
    """coeff * sum of squared weight-matrix entries; biases and LReLU slopes
    are excluded."""
    total = 0.0
    for k, v in model.flat().items():
        if _l2_applies(k):
            total += float(np.sum(v * v))
    return coeff * total


def _l2_applies(key: str) -> bool:
    name = key.split(".")[-1]
    return not (name.startswith("b") or name.startswith("alpha"))


def _add_l2_grads(model: ModelParams, grads: dict, coeff: float) -> None:
    if coeff == 0.0:
        return
    for k, v in model.flat().items():
        if _l2_applies(k):
            grads[k] = grads[k] + 2.0 * coeff * v


def embed_input(x: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Replace the leading code slots by their summed embeddings, keeping any
    trailing extra-feature slices."""
    d = E.shape[0]
    return np.concatenate([x[..., :d] @ E, x[..., d:]], axis=-1)


def split_patients(patients, fraction: float, rng: SeededRng):
    """Patient-level shuffled split; no patient appears on both sides."""
    order = rng.permutation(len(patients))
    n_train = int(round(len(patients) * fraction))
    n_train = min(max(n_train, 1), len(patients) - 1)
    train = [patients[i] for i in order[:n_train]]
    test = [patients[i] for i in order[n_train:]]
    return train, test


def _epoch_pass(batches, model, config, rng, update_state=None):
    """One pass over the batches. With update_state given, performs training
    updates; otherwise evaluates loss only."""
    total_loss = 0.0
    total_weight = 0.0
    for batch in batches:
        x = batch.x
        dropout_mask = None
        if update_state is not None and config.input_noise_std > 0:
            noisy = x.copy()
            d = model.n_codes
            noisy[:, :, :d] += rng.normal(config.input_noise_std,
                                          x[:, :, :d].shape)
            batch = _with_x(batch, noisy)
        if update_state is not None and config.dropout_rate > 0:
            keep = 1.0 - config.dropout_rate
            dropout_mask = (rng.uniform((batch.x.shape[0], batch.x.shape[1],
                                         model.hidden)) < keep) / keep
        trace = network.forward(batch, model, dropout_mask=dropout_mask)
        loss = cross_entropy_loss(batch.targets, trace["yhat"], batch.mask)
        if not np.isfinite(loss):
            raise TrainingDivergedError("non-finite training loss")
        w = batch.mask.sum()
        total_loss += loss * w
        total_weight += w
        if update_state is not None:
            grads = network.backward(trace, batch, model)
            _add_l2_grads(model, grads, config.l2_coeff)
            grads = clip_gradients(grads, config.clip_norm)
            adadelta_update(model, grads, update_state,
                            config.adadelta_rho, config.adadelta_eps)
    return total_loss / total_weight if total_weight else 0.0


def _with_x(batch, x):
    from dataclasses import replace
    return replace(batch, x=x)


def train(cohort, config: TrainConfig,
          validation_loss_hook=None) -> tuple:
    """Train on a filtered cohort. Returns (best-epoch model, TrainReport).

    validation_loss_hook, when given, replaces the computed validation loss
    (test hook for exercising the stopping rule).
    """
    from .evaluation import evaluate_model

    if len(cohort) < 2:
        raise ValueError("cohort must contain at least 2 patients")
    t0 = time.perf_counter()
    rng = SeededRng(config.seed)
    vocab = build_vocabulary(cohort)
    hidden = config.hidden_size or len(vocab)
    if config.pretrain:
        raise NotImplementedError("unsupervised pre-training is not implemented")

    train_pat, test_pat = split_patients(cohort, config.split_fraction, rng)
    train_batches = split_batches(train_pat, vocab, config.extra_features,
                                  config.batch_size)
    test_batches = split_batches(test_pat, vocab, config.extra_features,
                                 config.batch_size)

    model = network.init_model(
        config.cell_kind, len(vocab), hidden, layers=config.layers,
        extras=config.extra_features, embed_dim=config.embedding_dim,
        rng=rng.spawn(1))
    model.vocab_labels = list(vocab.labels)
    model.duration_max = max((b.duration_max for b in train_batches), default=0.0)
    model.interval_max = max((b.interval_max for b in train_batches), default=0.0)

    state = AdadeltaState(model)
    report = TrainReport()
    best_val = np.inf
    best_flat = {k: v.copy() for k, v in model.flat().items()}
    stale = 0

    for epoch in range(1, config.max_epochs + 1):
        train_loss = _epoch_pass(train_batches, model, config, rng,
                                 update_state=state)
        if validation_loss_hook is not None:
            val_loss = float(validation_loss_hook(epoch))
        else:
            val_loss = _epoch_pass(test_batches, model, config, rng)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError("non-finite validation loss")
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        report.iterations = epoch
        if val_loss < best_val:
            best_val = val_loss
            report.best_epoch = epoch
            best_flat = {k: v.copy() for k, v in model.flat().items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience_epochs:
                break

    model.set_flat(best_flat)
    result = evaluate_model(model, test_pat, vocab, ks=(10, 20, 30))
    report.recall = {k: r.mean for k, r in result.items()}
    report.wall_time_s = time.perf_counter() - t0
    return model, report
