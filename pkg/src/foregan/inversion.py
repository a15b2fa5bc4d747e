"""Latent-space inversion of a frozen generator.

Given a frame x, search z so that G(z) reproduces x under the summed absolute
pixel difference, by gradient steps on z alone. Several frames can be
inverted in one batched call: each frame's loss depends only on its own
latent row, so the joint gradient separates per frame and the result is the
same as inverting them one by one.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError, NumericError
from .gan import sample_latent
from .optim import AdamState

OPTIMIZERS = ("adam", "plain-gradient")
SCHEDULES = ("constant", "cosine")


@dataclass
class InversionConfig:
    steps: int = 2000
    lr: float = 0.01
    optimizer: str = "adam"
    restarts: int = 1
    seed: int = 0
    clip_latent: bool = False
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.restarts < 1:
            raise ContractError(f"restarts must be >= 1, got {self.restarts}")
        if self.optimizer not in OPTIMIZERS:
            raise ContractError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr_schedule not in SCHEDULES:
            raise ContractError(f"lr_schedule must be one of {SCHEDULES}, got {self.lr_schedule!r}")

    def step_size(self, step):
        """Step size at ``step`` (0-based) within a restart.

        A constant step never settles on an L1 minimum: the iterate keeps
        circling it at a distance proportional to lr. ``cosine`` anneals to
        zero over the budget so the last iterates close in on it.
        """
        if self.lr_schedule == "cosine":
            return self.lr * 0.5 * (1.0 + np.cos(np.pi * step / self.steps))
        return self.lr


@dataclass
class InversionResult:
    best_z: np.ndarray
    background: np.ndarray
    best_loss: float
    trajectory: np.ndarray

    def best_so_far(self):
        return np.minimum.accumulate(self.trajectory)


def residual_loss(x, gz):
    """Sum of absolute differences between two images of identical shape."""
    return dc.l1_sum(x, gz).item()


def _render(model, z):
    return model.generator(z).data


def start_streams(seed, frame_ids):
    """One generator per frame, keyed by (seed, frame id), so starts do not
    depend on how frames are grouped into batches."""
    return [np.random.default_rng([seed, int(i)]) for i in frame_ids]


def invert_many(model, frames, cfg=None, z0=None, frame_ids=None):
    """Invert a batch of frames [B, C, S, S]; returns one result per frame.

    Each frame draws its uniform starting codes from its own stream, keyed by
    ``cfg.seed`` and its entry in ``frame_ids`` (default 0..B-1), one draw per
    restart. ``z0`` ([B, latent_dim]) replaces the first restart's start.
    """
    cfg = cfg or InversionConfig()
    x = np.asarray(frames, dtype=np.float32)
    if x.ndim != 4:
        raise DimensionError(f"frames must be [B, C, S, S], got {x.shape}")
    shape = getattr(model, "image_shape", None)
    if shape is not None and x.shape[1:] != tuple(shape):
        raise DimensionError(f"frame shape {x.shape[1:]} does not match model image {shape}")
    b, latent = x.shape[0], model.latent_dim
    streams = start_streams(cfg.seed, range(b) if frame_ids is None else frame_ids)
    if len(streams) != b:
        raise ContractError("frame_ids must have one entry per frame")
    best_loss = np.full(b, np.inf)
    best_z = np.zeros((b, latent), dtype=np.float32)
    traj = np.empty((b, cfg.restarts * cfg.steps), dtype=np.float32)
    for r in range(cfg.restarts):
        if r == 0 and z0 is not None:
            z = np.array(z0, dtype=np.float32).reshape(b, latent)
        else:
            z = np.stack([sample_latent(s, latent) for s in streams])
        adam = AdamState({"z": z}, lr=cfg.lr, beta1=0.9, beta2=0.999)
        for step in range(cfg.steps):
            zt = dc.Tensor(z, requires_grad=True)
            with dc.Tape() as tape:
                gz = model.generator(zt)
                loss = dc.l1_sum(gz, x)
            per = np.abs(gz.data - x).reshape(b, -1).sum(axis=1)
            if not np.all(np.isfinite(per)):
                raise NumericError(f"inversion loss became non-finite at step {step}", step=step)
            k = r * cfg.steps + step
            traj[:, k] = per
            better = per < best_loss
            if better.any():
                best_loss[better] = per[better]
                best_z[better] = z[better]
            tape.backward(loss)
            lr = cfg.step_size(step)
            if cfg.optimizer == "adam":
                adam.lr = lr
                adam.step({"z": z}, {"z": zt.grad})
            else:
                z -= lr * zt.grad
            if cfg.clip_latent:
                np.clip(z, -1.0, 1.0, out=z)
    results = []
    for i in range(b):
        background = _render(model, best_z[i:i + 1])
        results.append(InversionResult(best_z[i].copy(), background,
                                       float(traj[i].min()), traj[i].copy()))
    return results


def invert(model, x, cfg=None, z0=None):
    """Invert one frame ([C, S, S] or [1, C, S, S])."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[0] != 1:
        raise DimensionError(f"invert expects a single frame, got shape {x.shape}")
    return invert_many(model, x, cfg, None if z0 is None else np.asarray(z0)[None])[0]


def random_search(model, x, n=100, seed=0):
    """Lowest residual among n uniform latent draws (a baseline for inversion)."""
    x = np.asarray(x, dtype=np.float32).reshape((1,) + tuple(np.shape(x)[-3:]))
    z = sample_latent(np.random.default_rng(seed), model.latent_dim, n)
    gz = _render(model, z)
    return float(np.abs(gz - x).reshape(n, -1).sum(axis=1).min())


def write_trajectory_csv(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(result.trajectory):
            w.writerow([i, f"{float(v):.6g}"])
