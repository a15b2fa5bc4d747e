"""Frames on disk, preprocessing, the synthetic benchmark and checkpoints.

Frames are float32 arrays of shape [C, H, W] with values in [-1, 1]; masks
are uint8 arrays of shape [H, W] holding 0/1. Images are read from binary
PGM (P5) or PNG; PNG decoding goes through Pillow.
"""

import dataclasses
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, FormatError

IMAGE_SUFFIXES = (".pgm", ".pnm", ".png")
GT_PREFIX = "hand_segmented_"
LAYOUTS = ("flat-frames", "wallflower-style")

CHECKPOINT_MAGIC = b"FGAN"
CHECKPOINT_VERSION = 1


@dataclass
class Sequence:
    """Ordered frames of one video, with optional per-frame ground truth.

    ``gt`` is None when no masks exist at all; otherwise it has one entry per
    frame, None where that frame carries no annotation.
    """

    frames: list
    names: list
    gt: list = None

    def __post_init__(self):
        if len(self.frames) != len(self.names):
            raise ContractError("frames and names differ in length")
        if self.frames:
            shape = self.frames[0].shape
            for name, f in zip(self.names, self.frames):
                if f.shape != shape:
                    raise FormatError(f"{name}: frame shape {f.shape} differs from {shape}")
        if self.gt is not None:
            if len(self.gt) != len(self.frames):
                raise ContractError("gt must have one entry per frame")
            for name, m in zip(self.names, self.gt):
                if m is not None and m.shape != self.frames[0].shape[1:]:
                    raise FormatError(f"{name}: mask shape {m.shape} does not match frames")

    def __len__(self):
        return len(self.frames)

    def batch(self):
        return np.stack(self.frames).astype(np.float32)


# -- image files ---------------------------------------------------------------

def _pgm_tokens(buf, count):
    """Read ``count`` whitespace-separated header tokens, skipping # comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_pgm(path):
    """Binary 8-bit PGM (P5) -> uint8 array [H, W]."""
    buf = Path(path).read_bytes()
    try:
        tokens, offset = _pgm_tokens(buf, 4)
        magic = tokens[0]
        width, height, maxval = (int(t) for t in tokens[1:])
    except (FormatError, ValueError) as exc:
        raise FormatError(f"{path}: bad PGM header ({exc})") from None
    if magic != b"P5":
        raise FormatError(f"{path}: expected P5 magic, got {magic!r}")
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    raster = buf[offset:offset + width * height]
    if len(raster) != width * height:
        raise FormatError(f"{path}: raster truncated")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    if maxval != 255:
        img = np.rint(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return img


def write_pgm(path, image):
    """Write a uint8 [H, W] array as binary PGM, maxval 255."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_png(path):
    """8-bit grey or RGB PNG -> uint8 array [H, W] or [H, W, 3]."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("P", "RGBA", "LA", "I;16", "I"):
                arr = np.asarray(im.convert("RGB" if im.mode in ("P", "RGBA") else "L"))
            else:
                raise FormatError(f"{path}: unsupported PNG mode {im.mode}")
    except UnidentifiedImageError:
        raise FormatError(f"{path}: not a readable PNG") from None
    return np.array(arr, dtype=np.uint8)


def read_image(path):
    suffix = Path(path).suffix.lower()
    if suffix in (".pgm", ".pnm"):
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    raise FormatError(f"{path}: unsupported image type {suffix!r}")


def read_mask(path, size=None):
    """Binary mask from an image file: any non-zero pixel is foreground."""
    img = read_image(path)
    if img.ndim == 3:
        img = img.max(axis=2)
    if size is not None and img.shape != (size, size):
        img = resize_bilinear(img.astype(np.float32)[None], size)[0]
        return (img >= 127.5).astype(np.uint8)
    return (img > 0).astype(np.uint8)


def write_mask(path, mask):
    """Mask as PGM with foreground 255."""
    write_pgm(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def list_images(directory):
    """Image files directly inside ``directory``, in lexicographic order."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


# -- preprocessing -------------------------------------------------------------

def resize_bilinear(img, size):
    """Bilinear resize of [C, H, W] to [C, size, size] with pixel-centre alignment."""
    c, h, w = img.shape

    def axis(n_in):
        src = (np.arange(size) + 0.5) * (n_in / size) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo)

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    img = img.astype(np.float64)
    rows = img[:, y0] * (1 - fy)[None, :, None] + img[:, y1] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx) + rows[:, :, x1] * fx
    return out.astype(np.float32)


def normalize(image):
    """8-bit values -> [-1, 1] via v / 127.5 - 1."""
    return (np.asarray(image, dtype=np.float32) / np.float32(127.5) - np.float32(1.0))


def preprocess(image, target_size=64):
    """Raw [H, W] or [H, W, C] image in [0, 255] -> float32 frame [C, S, S] in [-1, 1]."""
    if target_size is not None and target_size < 8:
        raise ContractError(f"target_size must be >= 8, got {target_size}")
    img = np.asarray(image)
    img = img[None] if img.ndim == 2 else np.moveaxis(img, -1, 0)
    if target_size is not None and img.shape[1:] != (target_size, target_size):
        img = resize_bilinear(img, target_size)
    return np.clip(normalize(img), -1.0, 1.0)


def to_uint8(frame):
    """Inverse of ``normalize``: [C, H, W] in [-1, 1] -> uint8 [H, W] or [H, W, C]."""
    img = np.clip(np.rint((np.asarray(frame, dtype=np.float64) + 1.0) * 127.5), 0, 255)
    img = img.astype(np.uint8)
    return img[0] if img.shape[0] == 1 else np.moveaxis(img, 0, -1)


# -- sequences -----------------------------------------------------------------

def _frame_number(stem):
    m = re.search(r"(\d+)$", stem)
    return int(m.group(1)) if m else None


def gt_table(gt_dir):
    """{stem: path} of the masks in ``gt_dir``, with any hand_segmented_ prefix dropped."""
    table = {}
    gt_dir = Path(gt_dir)
    if gt_dir.is_dir():
        for p in list_images(gt_dir):
            stem = p.stem
            if stem.startswith(GT_PREFIX):
                stem = stem[len(GT_PREFIX):]
            table[stem] = p
    return table


def match_gt(names, table):
    """Map frame names to mask paths: same stem, else same trailing frame number
    (``b00247`` pairs with ``hand_segmented_00247``)."""
    by_number = {}
    for stem, path in table.items():
        num = _frame_number(stem)
        if num is not None:
            by_number.setdefault(num, path)
    out = {}
    for n in names:
        if n in table:
            out[n] = table[n]
        elif _frame_number(n) in by_number:
            out[n] = by_number[_frame_number(n)]
    return out


def load_sequence(directory, layout="flat-frames", size=64):
    """Decode every frame of a directory in filename order.

    ``flat-frames``: masks in ``gt/`` share the frame's filename stem and are
    usually present for every frame. ``wallflower-style``: ``gt/`` holds
    sparse hand-segmented masks, optionally prefixed ``hand_segmented_``;
    only those frames carry ground truth. A mask pairs with the frame of the
    same stem, or failing that the same trailing frame number. Frames are resized to ``size``
    (None keeps the native geometry). The channel count of the first frame
    is enforced on the rest.
    """
    if layout not in LAYOUTS:
        raise ContractError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory}: not a directory")
    paths = list_images(directory)
    frames, names = [], []
    channels = None
    for p in paths:
        try:
            raw = read_image(p)
        except OSError as exc:
            raise OSError(f"{p}: cannot read ({exc})") from exc
        frame = preprocess(raw, size)
        if channels is None:
            channels, native = frame.shape[0], raw.shape[:2]
        elif frame.shape[0] != channels:
            raise FormatError(f"{p}: {frame.shape[0]} channels, expected {channels}")
        elif raw.shape[:2] != native:
            raise FormatError(f"{p}: size {raw.shape[:2]} differs from {native}")
        frames.append(frame)
        names.append(p.stem)
    table = match_gt(names, gt_table(directory / "gt"))
    gt = None
    if table:
        msize = frames[0].shape[1] if frames else size
        gt = [read_mask(table[n], msize) if n in table else None for n in names]
        if layout == "flat-frames" and not any(m is not None for m in gt):
            gt = None
    return Sequence(frames, names, gt)


def save_sequence(seq, directory):
    """Write frames as PGM (grey) and masks under ``gt/``; returns written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in zip(seq.names, seq.frames):
        if frame.shape[0] != 1:
            raise ContractError("only single-channel frames can be written as PGM")
        path = directory / f"{name}.pgm"
        write_pgm(path, to_uint8(frame))
        written.append(path)
    if seq.gt is not None:
        (directory / "gt").mkdir(exist_ok=True)
        for name, mask in zip(seq.names, seq.gt):
            if mask is not None:
                path = directory / "gt" / f"{name}.pgm"
                write_mask(path, mask)
                written.append(path)
    return written


def list_sequences(root):
    """Sequence sub-directories of a dataset root (those holding image files)."""
    root = Path(root)
    return sorted(d for d in root.iterdir() if d.is_dir() and d.name != "gt" and list_images(d))


# -- key=value config files ----------------------------------------------------

def read_kv(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value, kind):
    if kind is bool:
        return str(value).lower() in ("1", "true", "yes", "on")
    return kind(value)


def config_from_dict(cls, values, strict=True):
    """Build dataclass ``cls`` from string values, converting by field type."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if strict and unknown:
        raise ContractError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for key, value in values.items():
        if key not in fields:
            continue
        default = fields[key].default
        kind = type(default) if default is not dataclasses.MISSING and default is not None else str
        try:
            kwargs[key] = _coerce(value, kind)
        except ValueError:
            raise ContractError(f"{key}: cannot read {value!r} as {kind.__name__}") from None
    return cls(**kwargs)


# -- synthetic benchmark ---------------------------------------------------------

@dataclass
class SynthConfig:
    """Dynamic-background scene: travelling wave, illumination ramp, noise.

    Background luminance at column x and time t is
    ``base_level + wave_amplitude * sin(2 pi x / wave_period_px + 2 pi t / wave_period_frames)
    + illum_ramp * t`` plus Gaussian noise, quantised to 8 bits. Training frames
    use t = 0 .. n_background - 1; test frames sit between them at
    t = (j + 0.5) * n_background / n_test and carry a square object that
    follows a random walk.
    """

    n_background: int = 500
    n_test: int = 50
    size: int = 64
    base_level: float = 60.0
    wave_amplitude: float = 20.0
    wave_period_px: float = 16.0
    wave_period_frames: float = 50.0
    illum_ramp: float = 0.12
    noise_sigma: float = 2.0
    object_size_px: int = 16
    object_contrast: float = 0.6
    object_step_px: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.size < 8:
            raise ContractError(f"size must be >= 8, got {self.size}")
        if not 0 < self.object_size_px < self.size:
            raise ContractError(
                f"object_size_px must lie in (0, size={self.size}), got {self.object_size_px}")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        if not 0 <= self.object_contrast <= 1:
            raise ContractError("object_contrast must lie in [0, 1]")
        if self.n_background < 0 or self.n_test < 0:
            raise ContractError("frame counts must be >= 0")

    @classmethod
    def from_file(cls, path):
        return config_from_dict(cls, read_kv(path))


def _background(cfg, t, rng):
    x = np.arange(cfg.size)
    phase = 2 * np.pi * x / cfg.wave_period_px + 2 * np.pi * t / cfg.wave_period_frames
    row = cfg.base_level + cfg.wave_amplitude * np.sin(phase) + cfg.illum_ramp * t
    lum = np.broadcast_to(row, (cfg.size, cfg.size)).copy()
    if cfg.noise_sigma > 0:
        lum += rng.normal(0.0, cfg.noise_sigma, lum.shape)
    return lum


def _quantize(lum):
    return np.clip(np.rint(lum), 0, 255).astype(np.uint8)


def synth_generate(cfg=None):
    """Build (train, test) sequences; test carries exact constructive masks."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    train_frames = []
    for t in range(cfg.n_background):
        train_frames.append(normalize(_quantize(_background(cfg, t, rng)))[None])
    train = Sequence(train_frames, [f"bg{t:05d}" for t in range(cfg.n_background)])

    target = 255.0 if cfg.base_level < 128 else 0.0
    span = cfg.size - cfg.object_size_px
    pos = rng.integers(0, span + 1, size=2)
    test_frames, masks = [], []
    for j in range(cfg.n_test):
        t = (j + 0.5) * cfg.n_background / max(cfg.n_test, 1)
        lum = _background(cfg, t, rng)
        if j:
            pos = pos + rng.integers(-cfg.object_step_px, cfg.object_step_px + 1, size=2)
            pos = np.abs(pos)                              # reflect at 0
            pos = np.where(pos > span, 2 * span - pos, pos)  # reflect at the far edge
        r, c = int(pos[0]), int(pos[1])
        sl = (slice(r, r + cfg.object_size_px), slice(c, c + cfg.object_size_px))
        lum[sl] = (1 - cfg.object_contrast) * lum[sl] + cfg.object_contrast * target
        mask = np.zeros((cfg.size, cfg.size), dtype=np.uint8)
        mask[sl] = 1
        test_frames.append(normalize(_quantize(lum))[None])
        masks.append(mask)
    test = Sequence(test_frames, [f"in{j:05d}" for j in range(cfg.n_test)], masks)
    return train, test


# -- checkpoints -----------------------------------------------------------------

def save_model(path, model):
    """Write a checkpoint; the file appears atomically."""
    tables = [("gen.", model.gen_params), ("disc.", model.disc_params), ("buf.", model.gen_buffers)]
    entries = [(prefix + k, np.asarray(v, dtype="<f4")) for prefix, d in tables for k, v in d.items()]
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION),
             struct.pack("<IIII", model.latent_dim, model.image_size, model.channels, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise OSError(f"{self.path}: checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path):
    """Read a checkpoint written by ``save_model``."""
    from .gan import GanModel

    buf = Path(path).read_bytes()
    rd = _Reader(buf, path)
    if rd.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a foregan checkpoint (bad magic)")
    (version,) = rd.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    latent_dim, image_size, channels, count = rd.unpack("<IIII")
    tables = {"gen.": {}, "disc.": {}, "buf.": {}}
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        (rank,) = rd.unpack("<B")
        dims = rd.unpack(f"<{rank}I")
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(rd.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        prefix = name[:name.index(".") + 1] if "." in name else ""
        if prefix not in tables:
            raise FormatError(f"{path}: unexpected parameter name {name!r}")
        tables[prefix][name[len(prefix):]] = arr
    if rd.pos != len(buf):
        raise FormatError(f"{path}: trailing bytes after parameter table")
    return GanModel(latent_dim, image_size, channels,
                    tables["gen."], tables["disc."], tables["buf."])
