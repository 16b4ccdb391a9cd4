import dataclasses

import numpy as np
import pytest

from visound.data import DESK_PROFILE
from visound.generator import GeneratorConfig, GeneratorModel


def tiny_config(mode: str, **overrides) -> GeneratorConfig:
    """Smallest config that exercises every code path."""
    base = dict(
        mode=mode,
        feature_dim=12 if mode == "flow" else 6,
        step_size=8,
        frame_sizes=(4, 2, 1),
        context_k=3,
        hidden_size=8,
        embed_dim=4,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


def tiny_model(mode: str, seed: int = 0, **overrides) -> GeneratorModel:
    return GeneratorModel.initialize(tiny_config(mode, **overrides), seed=seed)


def random_inputs(mode: str, batch: int = 2, t: int = 24, frames: int = 3, seed: int = 0):
    """Codes plus matching features for a tiny-config model."""
    rng = np.random.default_rng(seed)
    fdim = 12 if mode == "flow" else 6
    codes = rng.integers(0, 256, size=(batch, t))
    feats = rng.standard_normal((batch, frames, fdim))
    return codes, feats


def finite_difference(loss_fn, param_array, index, h: float = 1e-4) -> float:
    """Central difference of a scalar loss w.r.t. one parameter coordinate."""
    flat = param_array.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    lp = loss_fn()
    flat[index] = orig - h
    lm = loss_fn()
    flat[index] = orig
    return (lp - lm) / (2.0 * h)


def gradcheck(loss_fn, params: dict, rng, coords_per_param: int = 3, h: float = 1e-4):
    """Compare autodiff gradients against central differences.

    ``loss_fn()`` must run a fresh forward pass and return a float; gradients
    must already be populated on the tensors.  Returns the list of
    (name, index, autodiff, fd, rel) tuples, worst first.  The relative-error
    denominator is floored at 1e-3, which makes differences below 1e-7 (the
    finite-difference noise floor at step 1e-4) pass for near-zero gradients.
    """
    results = []
    for name, p in params.items():
        if p.grad is None:
            raise AssertionError(f"{name} has no gradient")
        flat_grad = p.grad.reshape(-1)
        n = flat_grad.size
        idxs = rng.choice(n, size=min(coords_per_param, n), replace=False)
        for i in idxs:
            fd = finite_difference(loss_fn, p.data, int(i), h)
            ad = float(flat_grad[i])
            rel = abs(ad - fd) / max(abs(ad), abs(fd), 1e-3)
            results.append((name, int(i), ad, fd, rel))
    results.sort(key=lambda r: -r[4])
    return results


@pytest.fixture
def desk_profile():
    return DESK_PROFILE


@pytest.fixture
def fast_profile():
    """Short clips for training-heavy tests; same structure as desk scale."""
    return dataclasses.replace(DESK_PROFILE, clip_seconds=0.8, noise_amp=0.0)
