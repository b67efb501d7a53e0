"""Naive, Experience Replay and OMSI training steps plus the stream runner.

OMSI meta-learns one loss weight per sample of the combined (stream + replay)
mini-batch. Each step the weights start uniform, a simulated SGD update is
run on a copy of the model, the copy is scored on replayed samples, and one
gradient step on the weights follows. The real model is then updated once,
from its original parameters, with the adapted weights.
"""

import time
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import _kernels
from .buffer import ReservoirBuffer
from .errors import ConfigError
from .metrics import (ExperienceResult, RunRecord, StepTrace, learning_accuracy,
                      retained_accuracy)
from .streams import NoiseSpec, StreamSpec, stream_batches
from .tensorcore import (STREAM, LabeledBatch, MlpParams, backward, init_mlp, mlp_forward,
                         output_deltas, sgd_step, weighted_ce_loss)

META_GRAD_MODES = ("exact_k1", "first_order", "finite_diff")
WEIGHT_PROJECTIONS = ("none", "clamp_nonneg", "normalize", "clamp_normalize")


@dataclass
class OmsiConfig:
    alpha: float = 2.0
    k_inner: int = 1
    lr: float = 0.01
    buffer_draw: Optional[int] = None
    final_update_target: str = "combined"
    weight_projection: str = "none"
    meta_grad_mode: str = "exact_k1"
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.k_inner < 0:
            raise ConfigError("k_inner must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.buffer_draw is not None and self.buffer_draw < 1:
            raise ConfigError("buffer_draw must be >= 1")
        if self.final_update_target not in ("combined", "stream_only"):
            raise ConfigError(f"unknown final_update_target {self.final_update_target!r}")
        if self.weight_projection not in WEIGHT_PROJECTIONS:
            raise ConfigError(f"unknown weight_projection {self.weight_projection!r}")
        if self.meta_grad_mode not in META_GRAD_MODES:
            raise ConfigError(f"unknown meta_grad_mode {self.meta_grad_mode!r}")
        if self.meta_grad_mode == "exact_k1" and self.k_inner > 1:
            raise ConfigError("meta_grad_mode=exact_k1 requires k_inner <= 1; "
                              "use first_order or finite_diff")


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def project_weights(w: np.ndarray, mode: str) -> np.ndarray:
    """Apply the configured post-update weight projection.

    ``normalize`` rescales to unit sum; ``clamp_normalize`` zeroes negative
    entries first. A vector with all entries equal is returned unchanged, so
    uniform weights stay bit-identical. If nothing positive survives the
    clamp, uniform weights are returned.
    """
    if mode == "none":
        return w
    if mode in ("clamp_nonneg", "clamp_normalize"):
        w = np.maximum(w, 0.0)
    if mode == "clamp_nonneg" or np.all(w == w[0]) and w[0] > 0:
        return w
    total = w.sum()
    if total <= 0.0:
        return uniform_weights(w.size)
    return w / total


def weighted_step(params: MlpParams, batch: LabeledBatch, weights, lr: float) -> MlpParams:
    _, cache = mlp_forward(params, batch.inputs)
    return sgd_step(params, backward(params, cache, batch.labels, weights), lr)


def naive_step(params: MlpParams, batch: LabeledBatch, lr: float) -> MlpParams:
    """One uniform-weight SGD step on the stream batch alone."""
    return weighted_step(params, batch, uniform_weights(len(batch)), lr)


def er_step(params: MlpParams, stream_batch: LabeledBatch, buffer: ReservoirBuffer, lr: float,
            rng: np.random.Generator, buffer_draw: Optional[int] = None,
            clean_buffer: bool = False) -> MlpParams:
    """Experience Replay: uniform step on stream + one replay draw, then buffer update."""
    replay = buffer.sample(buffer_draw or len(stream_batch), rng)
    combined = LabeledBatch.concat(stream_batch, replay)
    params = weighted_step(params, combined, uniform_weights(len(combined)), lr)
    buffer.update(stream_batch, use_clean_labels=clean_buffer)
    return params


# -- meta-gradient -----------------------------------------------------------

def _mean_ce_grad(params, batch):
    """Mean cross-entropy of ``batch`` under ``params`` and its parameter gradient."""
    logits, cache = mlp_forward(params, batch.inputs)
    w = uniform_weights(len(batch))
    return weighted_ce_loss(logits, batch.labels, w), backward(params, cache, batch.labels, w)


def _contract(cache, unit_deltas, direction: MlpParams) -> np.ndarray:
    """``<direction, g_k>`` for every sample k without forming per-sample gradients.

    The gradient of sample k w.r.t. layer l is ``outer(delta_k, a_k)`` for the
    weight and ``delta_k`` for the bias.
    """
    out = np.zeros(unit_deltas[0].shape[0])
    for a, d, V, v in zip(cache.acts, unit_deltas, direction.weights, direction.biases):
        out += _kernels.rowwise_bilinear(np.ascontiguousarray(d), V, np.ascontiguousarray(a))
        out += d @ v
    return out


def _inner_loop(params, combined, w, cfg):
    """Run ``k_inner`` weighted SGD steps on a copy; keep each step's entry state."""
    theta = params
    entries, losses = [], []
    for _ in range(cfg.k_inner):
        logits, cache = mlp_forward(theta, combined.inputs)
        losses.append(weighted_ce_loss(logits, combined.labels, w))
        entries.append((theta, cache))
        theta = sgd_step(theta, backward(theta, cache, combined.labels, w), cfg.lr)
    return theta, entries, losses


def _meta_loss_at(params, combined, meta_batch, w, cfg):
    adapted, _, _ = _inner_loop(params, combined, w, cfg)
    logits, _ = mlp_forward(adapted, meta_batch.inputs)
    return weighted_ce_loss(logits, meta_batch.labels, uniform_weights(len(meta_batch)))


@dataclass
class MetaResult:
    grad_w: np.ndarray
    adapted: MlpParams
    meta_loss: float
    inner_losses: List[float]


def compute_meta(params: MlpParams, combined: LabeledBatch, meta_batch: LabeledBatch,
                 cfg: OmsiConfig, weights: Optional[np.ndarray] = None) -> MetaResult:
    """Full meta-gradient computation; see :func:`meta_gradient`."""
    if len(combined) == 0 or len(meta_batch) == 0:
        raise ValueError("combined and meta batches must be non-empty")
    w = uniform_weights(len(combined)) if weights is None else np.asarray(weights, dtype=np.float64)
    adapted, entries, inner_losses = _inner_loop(params, combined, w, cfg)
    meta_loss, meta_grad = _mean_ce_grad(adapted, meta_batch)

    if cfg.meta_grad_mode == "finite_diff":
        h = cfg.fd_step
        grad_w = np.empty_like(w)
        for k in range(w.size):
            wp, wm = w.copy(), w.copy()
            wp[k] += h
            wm[k] -= h
            grad_w[k] = (_meta_loss_at(params, combined, meta_batch, wp, cfg)
                         - _meta_loss_at(params, combined, meta_batch, wm, cfg)) / (2.0 * h)
    else:
        # theta_hat = theta - lr * sum_j sum_k w_k g_k(theta_j); d/dw_k drops the
        # Hessian terms, which vanish when k_inner == 1
        grad_w = np.zeros_like(w)
        for theta_j, cache in entries:
            unit = output_deltas(theta_j, cache, combined.labels, np.ones(w.size))
            grad_w -= cfg.lr * _contract(cache, unit, meta_grad)
    return MetaResult(grad_w, adapted, meta_loss, inner_losses)


def meta_gradient(params: MlpParams, combined: LabeledBatch, meta_batch: LabeledBatch,
                  cfg: OmsiConfig, weights: Optional[np.ndarray] = None):
    """Derivative of the post-inner-loop meta-loss w.r.t. the combined-batch weights.

    ``weights`` defaults to uniform ``1/len(combined)``. Returns
    ``(grad_w, adapted_params)``.
    """
    res = compute_meta(params, combined, meta_batch, cfg, weights)
    return res.grad_w, res.adapted


def omsi_step(params: MlpParams, stream_batch: LabeledBatch, buffer: ReservoirBuffer,
              cfg: OmsiConfig, rng: np.random.Generator,
              trace_sink: Optional[Callable[[StepTrace], None]] = None,
              meta_rng: Optional[np.random.Generator] = None, clean_buffer: bool = False,
              experience: int = 0) -> MlpParams:
    """One OMSI iteration on a stream batch.

    ``rng`` draws the replay batch mixed into training; ``meta_rng`` (default:
    ``rng``) draws the second replay batch used only by the meta-loss.
    """
    meta_rng = meta_rng if meta_rng is not None else rng
    draw = cfg.buffer_draw or len(stream_batch)
    replay = buffer.sample(draw, rng)
    combined = LabeledBatch.concat(stream_batch, replay)
    w = uniform_weights(len(combined))
    meta_loss, inner_losses = None, []

    if len(replay) == 0:
        w_star = w
        new_params = weighted_step(params, stream_batch, w, cfg.lr)
    else:
        meta_batch = LabeledBatch.concat(replay, buffer.sample(draw, meta_rng))
        res = compute_meta(params, combined, meta_batch, cfg, w)
        meta_loss, inner_losses = res.meta_loss, res.inner_losses
        w_star = project_weights(w - cfg.alpha * res.grad_w, cfg.weight_projection)
        if cfg.final_update_target == "combined":
            new_params = weighted_step(params, combined, w_star, cfg.lr)
        else:
            is_stream = combined.source == STREAM
            new_params = weighted_step(params, stream_batch, w_star[is_stream], cfg.lr)

    buffer.update(stream_batch, use_clean_labels=clean_buffer)
    if trace_sink is not None:
        trace_sink(StepTrace(
            step=stream_batch.index if stream_batch.index is not None else -1,
            experience=experience,
            weights_before=w,
            weights_after=w_star,
            source=combined.source.copy(),
            noisy=combined.noisy,
            inner_losses=inner_losses,
            meta_loss=meta_loss,
        ))
    return new_params


# -- stream runner -----------------------------------------------------------

STRATEGIES = ("naive", "er", "omsi")


def run_stream(spec: StreamSpec, noise: Optional[NoiseSpec] = None, strategy: str = "omsi",
               cfg: Optional[OmsiConfig] = None, *, hidden: Sequence[int] = (256,),
               buffer_capacity: int = 50, clean_buffer: bool = False, model_seed: int = 0,
               buffer_seed: int = 0, sampling_seed: int = 0,
               eval_hook: Optional[Callable] = None, record_traces: bool = True) -> RunRecord:
    """Train sequentially over the stream's experiences and evaluate after each.

    For ``naive`` and ``er`` only ``cfg.lr`` and ``cfg.buffer_draw`` are read.
    ``eval_hook(experience_index, params, la, ra)`` is called after each
    experience.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    cfg = cfg or OmsiConfig()
    noise = noise or NoiseSpec()
    start = time.perf_counter()

    dim = spec.experiences[0].train.dim
    sizes = [dim, *hidden, spec.class_count]
    params = init_mlp(sizes, np.random.default_rng(model_seed))
    buffer = ReservoirBuffer(buffer_capacity, dim, np.random.default_rng(buffer_seed))
    rng = np.random.default_rng([sampling_seed, 0])
    meta_rng = np.random.default_rng([sampling_seed, 1])

    record = RunRecord(
        config={"strategy": strategy, "hidden": list(hidden), "buffer_capacity": buffer_capacity,
                "clean_buffer": clean_buffer, "batch_size": spec.batch_size,
                "passes": spec.passes, "noise": asdict(noise), **asdict(cfg)},
        seeds={"model": model_seed, "shuffle": spec.shuffle_seed, "noise": noise.seed,
               "buffer": buffer_seed, "sampling": sampling_seed},
    )
    sink = record.step_traces.append if record_traces else None

    for i, exp in enumerate(spec.experiences):
        for batch in stream_batches(spec, i, noise):
            if strategy == "naive":
                params = naive_step(params, batch, cfg.lr)
            elif strategy == "er":
                params = er_step(params, batch, buffer, cfg.lr, rng, cfg.buffer_draw, clean_buffer)
            else:
                params = omsi_step(params, batch, buffer, cfg, rng, sink, meta_rng,
                                   clean_buffer, experience=i)
        la = learning_accuracy(params, exp)
        ra = retained_accuracy(params, spec.experiences[:i + 1])
        record.per_experience.append(ExperienceResult(i, la, ra))
        if eval_hook is not None:
            eval_hook(i, params, la, ra)

    record.duration = time.perf_counter() - start
    return record
