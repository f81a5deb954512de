"""End-to-end training: squared error on the partition-score mean, Adam
updates with bias correction, one cloud per step (batch size 1).

Per-cloud preprocessing (slicing, sampling, patch extraction, layer-1
graphs) is deterministic, so it is done once up front and reused across
epochs. Unreadable clouds are skipped with a warning.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .checkpoint import save_checkpoint
from .errors import ShapeError, TrainError
from .knn import KnnGraph, knn_graph
from .model import ModelConfig, ModelParams, forward_patches, init_params
from .partition import Patch, PreprocessConfig, normalize_cloud, partition_cloud
from .pcio import DatasetManifest, PointCloud, parse_ply

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    seed: int = 0
    learning_rate: float = 1e-4
    shuffle: bool = True
    clip_norm: float = 5.0
    blas_threads: int = 1  # network matrices are small; extra threads thrash

    def __post_init__(self):
        if self.epochs < 1:
            raise TrainError("bad-config", "epochs must be >= 1")
        if self.learning_rate <= 0:
            raise TrainError("bad-config", "learning rate must be positive")


def blas_thread_limit(threads: int | None):
    """Cap BLAS pool size for a code region; no-op when unavailable."""
    if threads is None or threadpool_limits is None:
        return contextlib.nullcontext()
    return threadpool_limits(limits=threads, user_api="blas")


def mse_loss(partition_scores: list[Tensor], mos: float) -> Tensor:
    """(mean(partition scores) - mos)^2, differentiable into every score."""
    if not partition_scores:
        raise TrainError("no-partitions", "cannot compute a loss over zero partitions")
    stacked = ad.concat([ad.reshape(s, (1,)) for s in partition_scores], axis=0)
    mean = ad.mean_over_axis(stacked, axis=0)
    return ad.square(ad.sub(mean, Tensor(float(mos))))


class AdamState:
    """First/second-moment accumulators keyed like the parameter dict."""

    def __init__(self, learning_rate: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(named: dict[str, Tensor], state: AdamState) -> None:
    """Bias-corrected Adam update, applied in place; grads are zeroed after.

    Uses the equivalent form lr_t * m / (sqrt(v) + eps*sqrt(bc2)) with
    lr_t = lr * sqrt(bc2) / bc1 to cut per-parameter temporaries.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    lr_t = state.learning_rate * np.sqrt(bc2) / bc1
    eps_t = state.eps * np.sqrt(bc2)
    for name, p in named.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: grad shape {g.shape} != param shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        denom = np.sqrt(v)
        denom += eps_t
        np.divide(m, denom, out=denom)
        denom *= lr_t
        p.data = p.data - denom
        p.grad = None


def clip_gradients(named: dict[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in named.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in named.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


@dataclass
class PreparedCloud:
    """Per-cloud constants reused across epochs."""

    name: str
    mos: float
    patch_lists: list[list[Patch]]
    layer1_graphs: list[list[KnnGraph]]


def prepare_cloud(pc: PointCloud, mos: float, pre_cfg: PreprocessConfig,
                  k: int) -> PreparedCloud:
    patch_lists = partition_cloud(normalize_cloud(pc), pre_cfg)
    graphs = [[knn_graph(p.positions, k) for p in patches] for patches in patch_lists]
    return PreparedCloud(pc.name, mos, patch_lists, graphs)


@dataclass
class TrainResult:
    params: ModelParams
    loss_history: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = float("inf")


def train_step(prepared: PreparedCloud, params: ModelParams, cfg: ModelConfig,
               adam: AdamState, clip_norm: float = 5.0) -> float:
    """One forward/backward/update on a single cloud; returns its loss."""
    with Tape():
        _, partition_scores = forward_patches(prepared.patch_lists, params, cfg,
                                              layer1_graphs=prepared.layer1_graphs)
        loss = mse_loss(partition_scores, prepared.mos)
    ad.backward(loss)
    named = params.named_tensors()
    clip_gradients(named, clip_norm)
    adam_step(named, adam)
    return loss.item()


def train(manifest: DatasetManifest, train_cfg: TrainConfig, cfg: ModelConfig,
          pre_cfg: PreprocessConfig, out_path: Path | str | None = None,
          params: ModelParams | None = None) -> TrainResult:
    """Train on every readable manifest cloud; returns the final parameters
    plus the per-epoch mean loss history.

    A checkpoint is written to ``out_path`` at the end and, with suffix
    ``.best``, at the best-loss epoch.
    """
    prepared: list[PreparedCloud] = []
    for entry in manifest.entries:
        path = manifest.resolve(entry)
        try:
            pc = parse_ply(path.read_bytes(), name=path.name)
            prepared.append(prepare_cloud(pc, entry.mos, pre_cfg, cfg.k))
        except Exception as exc:  # skip-and-warn: long runs survive a bad file
            log.warning("skipping %s: %s", entry.path, exc)
    if not prepared:
        raise TrainError("empty-epoch", "no manifest cloud could be preprocessed")

    if params is None:
        params = init_params(cfg, seed=train_cfg.seed)
    adam = AdamState(learning_rate=train_cfg.learning_rate)
    rng = np.random.default_rng(train_cfg.seed)
    result = TrainResult(params)
    best_snapshot = None

    with blas_thread_limit(train_cfg.blas_threads):
        for epoch in range(train_cfg.epochs):
            order = (rng.permutation(len(prepared)) if train_cfg.shuffle
                     else range(len(prepared)))
            losses = [train_step(prepared[i], params, cfg, adam, train_cfg.clip_norm)
                      for i in order]
            epoch_loss = float(np.mean(losses))
            result.loss_history.append(epoch_loss)
            if epoch_loss < result.best_loss:
                result.best_loss = epoch_loss
                result.best_epoch = epoch
                best_snapshot = {n: t.data.copy()
                                 for n, t in params.named_tensors().items()}

    if out_path is not None:
        out = Path(out_path)
        save_checkpoint(out, params, cfg, pre_cfg)
        if best_snapshot is not None:
            best_params = init_params(cfg, seed=train_cfg.seed)
            for n, t in best_params.named_tensors().items():
                t.data = best_snapshot[n]
            save_checkpoint(out.with_name(out.stem + ".best" + out.suffix),
                            best_params, cfg, pre_cfg)
    return result
