"""DCGAN-style generator/discriminator pair and adversarial training.

The generator projects a latent vector to a 4x4 feature map, then doubles the
resolution with stride-2 transposed convolutions (kernel 4) until it reaches
``image_size``; every hidden stage is channel-normalised and ReLU'd and the
head is tanh. The discriminator mirrors it with stride-2 convolutions,
leaky ReLU(0.2) and a sigmoid head.

Parameters live in plain numpy dicts on :class:`GanModel`; forward passes wrap
them in :class:`~foregan.diffcore.Tensor` objects only when gradients are
wanted.
"""

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ContractError, DimensionError
from .optim import AdamState

NORM_EPS = 1e-5
NORM_MOMENTUM = 0.1
LEAK = 0.2


@dataclass
class TrainConfig:
    latent_dim: int = 100
    batch_size: int = 32
    steps: int = 3000
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    width: int = 8

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 0:
            raise ContractError(f"steps must be >= 0, got {self.steps}")
        if self.latent_dim < 1 or self.width < 1:
            raise ContractError("latent_dim and width must be >= 1")


@dataclass
class GanModel:
    """Generator and discriminator weights plus architecture metadata.

    ``gen_buffers`` holds the frozen per-channel statistics the generator
    uses outside training, so that ``generate`` is a fixed function of z.
    """

    latent_dim: int
    image_size: int
    channels: int
    gen_params: dict = field(default_factory=dict)
    disc_params: dict = field(default_factory=dict)
    gen_buffers: dict = field(default_factory=dict)

    @property
    def stages(self):
        return _stages(self.image_size)

    @property
    def width(self):
        return self.disc_params["conv0.k"].shape[0]

    @property
    def image_shape(self):
        return (self.channels, self.image_size, self.image_size)

    def generator(self, z, training=False, params=None, stats=None):
        """Generator graph on a latent batch ``z`` [N, latent_dim] (Tensor or array).

        ``params`` maps names to Tensors (defaults to constants). With
        ``training`` the norm layers use batch statistics, which are written
        into ``stats`` when a dict is supplied.
        """
        gp = params if params is not None else _wrap(self.gen_params, False)
        zd = z.data if isinstance(z, dc.Tensor) else np.asarray(z)
        if zd.ndim != 2 or zd.shape[1] != self.latent_dim:
            raise DimensionError(
                f"latent batch must have shape [N, {self.latent_dim}], got {zd.shape}")
        n = zd.shape[0]
        c0 = gp["fc.w"].shape[1] // 16
        h = dc.dense(z, gp["fc.w"], gp["fc.b"]).reshape(n, c0, 4, 4)
        for i in range(self.stages):
            h = self._norm(gp, i, h, training, stats)
            h = dc.relu(h)
            h = dc.conv_transpose2d(h, gp[f"up{i}.k"], 2, 1)
        h = h + gp["out.b"].reshape(1, -1, 1, 1)
        return dc.tanh(h)

    def _norm(self, gp, i, h, training, stats):
        gamma, beta = gp[f"norm{i}.gamma"], gp[f"norm{i}.beta"]
        if training:
            if stats is not None:
                stats[i] = (h.data.mean(axis=(0, 2, 3)), h.data.var(axis=(0, 2, 3)))
            return dc.channel_norm(h, gamma, beta, NORM_EPS)
        return dc.channel_norm(h, gamma, beta, NORM_EPS,
                               mean=self.gen_buffers[f"norm{i}.mean"],
                               var=self.gen_buffers[f"norm{i}.var"])

    def discriminator(self, x, params=None):
        """Discriminator graph on an image batch; returns probabilities [N, 1]."""
        dp = params if params is not None else _wrap(self.disc_params, False)
        xd = x.data if isinstance(x, dc.Tensor) else np.asarray(x)
        if xd.ndim != 4 or xd.shape[1:] != self.image_shape:
            raise DimensionError(
                f"image batch must have shape [N, {', '.join(map(str, self.image_shape))}], "
                f"got {xd.shape}")
        h = x
        for i in range(self.stages):
            h = dc.conv2d(h, dp[f"conv{i}.k"], 2, 1) + dp[f"conv{i}.b"].reshape(1, -1, 1, 1)
            h = dc.leaky_relu(h, LEAK)
        h = h.reshape(xd.shape[0], -1)
        return dc.sigmoid(dc.dense(h, dp["fc.w"], dp["fc.b"]))

    def snapshot(self):
        """Deep copy of every array, for isolation checks."""
        return {
            "gen": {k: v.copy() for k, v in self.gen_params.items()},
            "disc": {k: v.copy() for k, v in self.disc_params.items()},
            "buf": {k: v.copy() for k, v in self.gen_buffers.items()},
        }


def _stages(image_size):
    stages = int(round(np.log2(image_size / 4))) if image_size >= 8 else 0
    if stages < 1 or 4 * 2 ** stages != image_size:
        raise ContractError(f"image_size must be 4 * 2**k with k >= 1, got {image_size}")
    return stages


def _wrap(arrays, requires_grad):
    # zero-copy: arrays are already float32
    return {k: dc.Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()}


def init_model(latent_dim=100, image_size=64, channels=1, width=8, seed=0):
    """Freshly initialised model: N(0, 0.02) weights, unit scales, zero biases."""
    stages = _stages(image_size)
    rng = np.random.default_rng(seed)

    def normal(*shape):
        return (0.02 * rng.standard_normal(shape)).astype(np.float32)

    def zeros(n):
        return np.zeros(n, dtype=np.float32)

    gen, buf = {}, {}
    widths = [width * 2 ** (stages - 1 - i) for i in range(stages)] + [channels]
    gen["fc.w"] = normal(latent_dim, widths[0] * 16)
    gen["fc.b"] = zeros(widths[0] * 16)
    for i in range(stages):
        gen[f"norm{i}.gamma"] = np.ones(widths[i], dtype=np.float32)
        gen[f"norm{i}.beta"] = zeros(widths[i])
        buf[f"norm{i}.mean"] = zeros(widths[i])
        buf[f"norm{i}.var"] = np.ones(widths[i], dtype=np.float32)
        gen[f"up{i}.k"] = normal(widths[i], widths[i + 1], 4, 4)
    gen["out.b"] = zeros(channels)

    disc = {}
    dwidths = [channels] + [width * 2 ** i for i in range(stages)]
    for i in range(stages):
        disc[f"conv{i}.k"] = normal(dwidths[i + 1], dwidths[i], 4, 4)
        disc[f"conv{i}.b"] = zeros(dwidths[i + 1])
    disc["fc.w"] = normal(dwidths[-1] * 16, 1)
    disc["fc.b"] = zeros(1)
    return GanModel(latent_dim, image_size, channels, gen, disc, buf)


def sample_latent(rng, latent_dim, n=None):
    """Uniform [-1, 1] latent codes: shape [latent_dim] or [n, latent_dim]."""
    if latent_dim < 1:
        raise ContractError(f"latent_dim must be >= 1, got {latent_dim}")
    shape = latent_dim if n is None else (n, latent_dim)
    return rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)


def generate(model, z):
    """Image(s) G(z) in [-1, 1]; z of shape [latent_dim] gives [1, C, S, S]."""
    z = np.asarray(z, dtype=np.float32)
    if z.ndim == 1:
        z = z[None]
    if z.ndim != 2 or z.shape[1] != model.latent_dim:
        raise DimensionError(
            f"latent code must have length {model.latent_dim}, got shape {z.shape}")
    return model.generator(z).data


def discriminate(model, x):
    """D(x): a float for one image [C, S, S] or [1, C, S, S], else an [N] array."""
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3 or (x.ndim == 4 and x.shape[0] == 1)
    if x.ndim == 3:
        x = x[None]
    p = model.discriminator(x).data[:, 0]
    return float(p[0]) if single else p


def calibrate_norm(model, rng, n=256):
    """Freeze the generator's norm statistics to batch statistics over n latent draws."""
    stats = {}
    model.generator(sample_latent(rng, model.latent_dim, n), training=True, stats=stats)
    for i, (mean, var) in stats.items():
        model.gen_buffers[f"norm{i}.mean"] = mean.astype(np.float32)
        model.gen_buffers[f"norm{i}.var"] = var.astype(np.float32)


def make_optimizers(model, cfg):
    """Discriminator and generator Adam states for ``cfg``."""
    kw = dict(lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    return AdamState(model.disc_params, **kw), AdamState(model.gen_params, **kw)


def train_step(model, batch, dstate, gstate, rng):
    """One discriminator update then one generator update.

    The discriminator minimises bce(D(x), 1) + bce(D(G(z)), 0); the generator
    minimises the non-saturating bce(D(G(z)), 1). Returns (d_loss, g_loss),
    each measured before its own update.
    """
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ContractError(f"train_step needs a non-empty [N, C, S, S] batch, got {batch.shape}")
    n = batch.shape[0]
    gp = _wrap(model.gen_params, True)
    stats = {}
    with dc.Tape() as gtape:
        fake = model.generator(sample_latent(rng, model.latent_dim, n),
                               training=True, params=gp, stats=stats)

    dp = _wrap(model.disc_params, True)
    with dc.Tape() as dtape:
        d_loss = (dc.bce(model.discriminator(batch, dp), 1.0)
                  + dc.bce(model.discriminator(fake.data, dp), 0.0))
    dtape.backward(d_loss)
    dstate.step(model.disc_params, {k: t.grad for k, t in dp.items()})

    with gtape:
        g_loss = dc.bce(model.discriminator(fake), 1.0)
    gtape.backward(g_loss)
    gstate.step(model.gen_params, {k: t.grad for k, t in gp.items()})

    for i, (mean, var) in stats.items():
        m, v = model.gen_buffers[f"norm{i}.mean"], model.gen_buffers[f"norm{i}.var"]
        m += NORM_MOMENTUM * (mean - m)
        v += NORM_MOMENTUM * (var - v)
    return d_loss.item(), g_loss.item()


def as_batch(frames):
    """Stack a Sequence, a list of [C, S, S] frames, or an array into [N, C, S, S]."""
    frames = getattr(frames, "frames", frames)
    arr = np.asarray(frames, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise DimensionError(f"frames must stack to [N, C, S, S], got {arr.shape}")
    return arr


def init_output_bias(model, data):
    """Start the generator at the per-channel data mean instead of mid-grey.

    Saves the early steps a small generator would otherwise spend shifting
    its output level.
    """
    mean = np.clip(data.mean(axis=(0, 2, 3)), -0.99, 0.99)
    model.gen_params["out.b"][...] = np.arctanh(mean).reshape(model.gen_params["out.b"].shape)


def train(frames, cfg=None, callback=None):
    """Train a fresh model on background-only frames.

    Returns ``(model, history)`` where history is a [steps, 2] array of
    (d_loss, g_loss). ``callback(step, d_loss, g_loss)`` is called after each
    step when given.
    """
    cfg = cfg or TrainConfig()
    data = as_batch(frames) if len(getattr(frames, "frames", frames)) else None
    if data is None or data.shape[0] == 0:
        raise ContractError("training needs at least one frame")
    _, channels, h, w = data.shape
    if h != w:
        raise DimensionError(f"frames must be square, got {h}x{w}")
    rng = np.random.default_rng(cfg.seed)
    model = init_model(cfg.latent_dim, h, channels, cfg.width, seed=int(rng.integers(2**31)))
    init_output_bias(model, data)
    dstate, gstate = make_optimizers(model, cfg)
    history = np.zeros((cfg.steps, 2))
    for step in range(cfg.steps):
        idx = rng.integers(0, data.shape[0], cfg.batch_size)
        history[step] = train_step(model, data[idx], dstate, gstate, rng)
        if callback is not None:
            callback(step, *history[step])
    if cfg.steps:
        calibrate_norm(model, rng)
    return model, history
