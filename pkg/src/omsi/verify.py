"""Gradient oracle harness: analytic gradients vs central finite differences."""

from dataclasses import dataclass

import numpy as np

from . import tensorcore
from .strategies import OmsiConfig, compute_meta
from .tensorcore import LabeledBatch, init_mlp, mlp_forward, weighted_ce_loss

TOLERANCE = 1e-4
ABS_FLOOR = 1e-8
FD_STEP = 1e-5
MAX_SIZES = (8, 16, 5)
MAX_ROWS = 8


def relative_error(analytic, reference, floor=ABS_FLOOR) -> float:
    """Max entrywise error; relative where ``|reference| >= floor``, absolute below."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    reference = np.asarray(reference, dtype=np.float64).ravel()
    diff = np.abs(analytic - reference)
    scale = np.abs(reference)
    err = np.where(scale >= floor, diff / np.where(scale >= floor, scale, 1.0), diff)
    return float(err.max()) if err.size else 0.0


def _random_net(rng):
    d = int(rng.integers(1, MAX_SIZES[0] + 1))
    h = int(rng.integers(1, MAX_SIZES[1] + 1))
    c = int(rng.integers(2, MAX_SIZES[2] + 1))
    params = init_mlp([d, h, c], rng)
    for b in params.biases:
        b[:] = rng.uniform(-0.5, 0.5, size=b.shape)
    return params


def _away_from_kinks(params, inputs, margin):
    # central differences straddling a ReLU kink are not a valid oracle
    _, cache = mlp_forward(params, inputs)
    return all(np.abs(z).min() > margin for z in cache.pres[:-1])


def _random_batch(rng, params, n, margin=1e-3):
    d, c = params.layer_sizes[0], params.layer_sizes[-1]
    while True:
        x = rng.standard_normal((n, d))
        if _away_from_kinks(params, x, margin):
            return LabeledBatch(x, rng.integers(0, c, size=n))


def backprop_instance(rng) -> float:
    """Max relative error of ``backward`` against finite differences on one random case."""
    params = _random_net(rng)
    batch = _random_batch(rng, params, int(rng.integers(1, MAX_ROWS + 1)))
    w = rng.uniform(0.0, 1.0, size=len(batch))
    _, cache = mlp_forward(params, batch.inputs)
    grads = tensorcore.backward(params, cache, batch.labels, w)

    def loss(p):
        return weighted_ce_loss(mlp_forward(p, batch.inputs)[0], batch.labels, w)

    fd = tensorcore.finite_diff_grad(loss, params, FD_STEP)
    return relative_error(grads.flatten(), fd.flatten())


def meta_gradient_instance(rng) -> float:
    """Max relative error of the ``exact_k1`` meta-gradient against finite differences over w."""
    params = _random_net(rng)
    combined = _random_batch(rng, params, int(rng.integers(1, MAX_ROWS + 1)))
    meta = _random_batch(rng, params, int(rng.integers(1, MAX_ROWS + 1)))
    lr = float(rng.uniform(0.01, 0.5))
    exact = compute_meta(params, combined, meta, OmsiConfig(lr=lr, meta_grad_mode="exact_k1"))
    fd = compute_meta(params, combined, meta,
                      OmsiConfig(lr=lr, meta_grad_mode="finite_diff", fd_step=FD_STEP))
    return relative_error(exact.grad_w, fd.grad_w)


@dataclass
class SuiteResult:
    name: str
    instances: int
    max_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28s} instances={self.instances:<4d} "
                f"max_rel_err={self.max_error:.3e}  (tol {self.tolerance:.0e})")


def run_verification(instances: int = 100, seed: int = 0):
    """Run both oracle suites; each instance gets its own child seed."""
    if instances < 1:
        raise ValueError("instances must be >= 1")
    root = np.random.SeedSequence(seed)
    bp_seeds, mg_seeds = root.spawn(2)
    bp = max(backprop_instance(np.random.default_rng(s)) for s in bp_seeds.spawn(instances))
    mg = max(meta_gradient_instance(np.random.default_rng(s)) for s in mg_seeds.spawn(instances))
    return [SuiteResult("backward vs finite-diff", instances, bp),
            SuiteResult("exact_k1 vs finite-diff(w)", instances, mg)]
