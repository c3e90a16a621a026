"""Full-network gradient verification against central finite differences."""

from __future__ import annotations

import numpy as np

from . import network
from .ehr_data import BatchTensor, ExtraFeatures
from .numerics import SeededRng, finite_diff_grad, max_relative_error
from .training import cross_entropy_loss


def random_batch(n_codes, n_patients, n_steps, rng: SeededRng,
                 extras: ExtraFeatures | None = None,
                 ragged: bool = True) -> BatchTensor:
    """Random multi-hot batch; with ragged=True the last patient has one step
    fewer, exercising the mask path."""
    extras = extras or ExtraFeatures()
    x = (rng.uniform((n_steps, n_patients, n_codes + extras.width)) < 0.4) * 1.0
    targets = (rng.uniform((n_steps, n_patients, n_codes)) < 0.4) * 1.0
    mask = np.ones((n_steps, n_patients))
    if ragged and n_steps > 1 and n_patients > 1:
        mask[-1, -1] = 0.0
        x[-1, -1] = 0.0
        targets[-1, -1] = 0.0
    return BatchTensor(x=x, mask=mask, targets=targets,
                       patient_ids=[f"p{i}" for i in range(n_patients)])


def full_network_gradcheck(cell_kind: str, n_codes: int = 5, hidden: int = 4,
                           n_patients: int = 2, n_steps: int = 3,
                           layers: int = 1, embed_dim: int | None = None,
                           seed: int = 0, eps: float = 1e-5,
                           corrupt: str | None = None) -> float:
    """Max relative error between analytic and finite-difference gradients
    over every parameter coordinate.

    corrupt names a parameter whose analytic gradient gets perturbed before
    comparison (negative-control test hook).
    """
    rng = SeededRng(seed)
    model = network.init_model(cell_kind, n_codes, hidden, layers=layers,
                               embed_dim=embed_dim, rng=rng)
    # move off the identity/zero init so no LReLU pre-activation sits at 0
    for k, v in model.flat().items():
        v[...] = v + rng.normal(0.3, v.shape)
    batch = random_batch(n_codes, n_patients, n_steps, rng)

    trace = network.forward(batch, model)
    grads = network.backward(trace, batch, model)
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] + 0.5

    arrays = model.flat()
    names = sorted(arrays)
    sizes = [arrays[n].size for n in names]
    offsets = np.cumsum([0] + sizes)
    theta0 = np.concatenate([arrays[n].ravel() for n in names])

    def objective(theta):
        for n, lo, hi in zip(names, offsets[:-1], offsets[1:]):
            arrays[n][...] = theta[lo:hi].reshape(arrays[n].shape)
        tr = network.forward(batch, model)
        return cross_entropy_loss(batch.targets, tr["yhat"], batch.mask)

    numeric = finite_diff_grad(objective, theta0, eps=eps)
    for n, lo, hi in zip(names, offsets[:-1], offsets[1:]):
        arrays[n][...] = theta0[lo:hi].reshape(arrays[n].shape)

    analytic = np.concatenate([grads[n].ravel() for n in names])
    return max_relative_error(analytic, numeric)
