"""Residual maps, thresholding and mask clean-up."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .inversion import invert_many

THRESHOLD_MODES = ("otsu", "fixed")
OTSU_BINS = 256


@dataclass
class SegConfig:
    threshold_mode: str = "otsu"
    fixed_tau: float = None
    channel_reduce: str = "mean-abs"
    median_radius: int = 1

    def __post_init__(self):
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ContractError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if self.threshold_mode == "fixed":
            if self.fixed_tau is None:
                raise ContractError("fixed threshold mode needs fixed_tau")
            self.fixed_tau = float(self.fixed_tau)
            if not 0 <= self.fixed_tau <= 2:
                raise ContractError(f"fixed_tau must lie in [0, 2], got {self.fixed_tau}")
        elif self.fixed_tau is not None:
            raise ContractError("fixed_tau is only meaningful with threshold_mode='fixed'")
        if self.channel_reduce != "mean-abs":
            raise ContractError(f"unsupported channel_reduce {self.channel_reduce!r}")
        if self.median_radius < 0:
            raise ContractError("median_radius must be >= 0")


def _image(a):
    a = np.asarray(a, dtype=np.float32)
    if a.ndim == 4 and a.shape[0] == 1:
        a = a[0]
    if a.ndim == 2:
        a = a[None]
    return a


def subtract(x, bg):
    """Per-pixel mean over channels of |x - bg|, as an [H, W] map."""
    x, bg = _image(x), _image(bg)
    if x.shape != bg.shape:
        raise DimensionError(f"cannot subtract images of shapes {x.shape} and {bg.shape}")
    return np.abs(x - bg).mean(axis=0)


def otsu_threshold(res, bins=OTSU_BINS):
    """Otsu's threshold over a histogram spanning [min, max] of ``res``.

    Returns the upper edge of the last bin of the lower class, or None when
    the map is constant (no split exists).
    """
    res = np.asarray(res, dtype=np.float64).ravel()
    lo, hi = float(res.min()), float(res.max())
    if hi <= lo:
        return None
    hist, edges = np.histogram(res, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1].astype(np.float64)
    w1 = res.size - w0
    s0 = np.cumsum(hist * centers)[:-1]
    m0 = s0 / np.maximum(w0, 1)
    m1 = (np.sum(hist * centers) - s0) / np.maximum(w1, 1)
    between = w0 * w1 * (m0 - m1) ** 2
    between[(w0 == 0) | (w1 == 0)] = -1.0
    return float(edges[int(np.argmax(between)) + 1])


def threshold(res, cfg=None):
    """Binary mask ``res > tau``; tau is fixed or chosen by Otsu."""
    cfg = cfg or SegConfig()
    res = np.asarray(res)
    if not np.all(np.isfinite(res)) or (res.size and res.min() < 0):
        raise ContractError("residual map must be finite and non-negative")
    if cfg.threshold_mode == "fixed":
        tau = cfg.fixed_tau
    else:
        tau = otsu_threshold(res)
        if tau is None:
            return np.zeros(res.shape, dtype=np.uint8)
    return (res > tau).astype(np.uint8)


def _box_sum(a, r):
    """Sum over the (2r+1)^2 window around each pixel, clipped at the border."""
    h, w = a.shape
    c = np.zeros((h + 1, w + 1), dtype=np.int64)
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (c[y1][:, x1] - c[y0][:, x1] - c[y1][:, x0] + c[y0][:, x0])


def median_filter(mask, radius=1):
    """Binary median over the in-image part of each window; ties go to background."""
    m = (np.asarray(mask) > 0).astype(np.int64)
    if radius == 0:
        return m.astype(np.uint8)
    ones = _box_sum(m, radius)
    count = _box_sum(np.ones_like(m), radius)
    return (2 * ones > count).astype(np.uint8)


def postprocess(mask, cfg=None):
    cfg = cfg or SegConfig()
    return median_filter(mask, cfg.median_radius)


def mask_from_residual(res, cfg=None):
    return postprocess(threshold(res, cfg), cfg)


def segment_many(model, frames, icfg=None, scfg=None, frame_ids=None):
    """Invert, subtract, threshold and clean a batch of frames.

    Returns (masks, inversion results), one of each per frame.
    """
    frames = np.asarray(frames, dtype=np.float32)
    results = invert_many(model, frames, icfg, frame_ids=frame_ids)
    masks = [mask_from_residual(subtract(x, r.background), scfg)
             for x, r in zip(frames, results)]
    return masks, results


def segment_frame(model, x, icfg=None, scfg=None):
    x = _image(x)
    masks, results = segment_many(model, x[None], icfg, scfg)
    return masks[0], results[0]


def frame_difference_baseline(x, reference, scfg=None):
    """The same mask chain against a static reference frame instead of G(z)."""
    return mask_from_residual(subtract(x, reference), scfg)
