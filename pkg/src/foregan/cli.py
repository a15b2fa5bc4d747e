"""Command-line entry point: ``foregan {synth,train,segment,eval}``.

All settings share one flat key namespace so a single key=value file can
drive the whole pipeline. Keys that would collide between stages carry a
prefix (``train_steps`` vs ``invert_steps``). A subcommand reads only the
keys it needs, but every key in the file must be known.

Exit codes: 0 success, 2 usage or data error, 3 checkpoint/format error.
"""

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataio, gan, metrics, segmentation
from .errors import ContractError, DimensionError, FormatError, NumericError
from .inversion import InversionConfig, write_trajectory_csv

log = logging.getLogger("foregan")

EXIT_OK, EXIT_DATA, EXIT_FORMAT = 0, 2, 3
SEGMENT_CHUNK = 64   # frames per batched inversion call


@dataclass(frozen=True)
class Opt:
    key: str
    kind: type
    default: object
    help: str
    commands: tuple
    target: tuple = None    # (config class name, field name)


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


T, S, E, Y = ("train",), ("segment",), ("eval",), ("synth",)
_tc, _ic, _sc, _yc = gan.TrainConfig(), InversionConfig(), segmentation.SegConfig(), dataio.SynthConfig()

OPTIONS = [
    # paths
    Opt("train_dir", str, None, "directory of background-only training frames", T),
    Opt("checkpoint", str, None, "model checkpoint file", T + S),
    Opt("loss_csv", str, None, "per-step loss CSV (default: <checkpoint>.loss.csv)", T),
    Opt("test_dir", str, None, "sequence directory, or dataset root of sequence directories", S),
    Opt("mask_dir", str, None, "output directory for masks", S),
    Opt("trajectory_dir", str, None, "write one step,loss CSV per frame here", S),
    Opt("dump_backgrounds", _bool, False, "also write G(z*) for every frame under backgrounds/", S),
    Opt("jobs", int, 1, "worker processes for segmentation (1 is fully deterministic)", S),
    Opt("layout", str, "flat-frames", "frame directory layout: flat-frames or wallflower-style", T + S),
    Opt("pred_dir", str, None, "predicted masks (one sequence, or one sub-directory per sequence)", E),
    Opt("gt_dir", str, None, "ground-truth masks, or the sequence directory holding gt/", E),
    Opt("report_csv", str, None, "per-frame metrics CSV", E),
    Opt("synth_dir", str, None, "output root for train/ and test/", Y),
    # training
    Opt("image_size", int, 64, "frame side length after resizing", T),
    Opt("latent_dim", int, _tc.latent_dim, "latent code length", T, ("train", "latent_dim")),
    Opt("batch_size", int, _tc.batch_size, "minibatch size", T, ("train", "batch_size")),
    Opt("train_steps", int, _tc.steps, "training steps", T, ("train", "steps")),
    Opt("train_lr", float, _tc.lr, "Adam learning rate for both networks", T, ("train", "lr")),
    Opt("adam_beta1", float, _tc.adam_beta1, "Adam beta1", T, ("train", "adam_beta1")),
    Opt("adam_beta2", float, _tc.adam_beta2, "Adam beta2", T, ("train", "adam_beta2")),
    Opt("train_seed", int, _tc.seed, "training seed", T, ("train", "seed")),
    Opt("width", int, _tc.width, "channel width of the last generator stage", T, ("train", "width")),
    # inversion
    Opt("invert_steps", int, _ic.steps, "gradient steps on z per restart", S, ("invert", "steps")),
    Opt("invert_lr", float, _ic.lr, "step size on z", S, ("invert", "lr")),
    Opt("optimizer", str, _ic.optimizer, "adam or plain-gradient", S, ("invert", "optimizer")),
    Opt("restarts", int, _ic.restarts, "random restarts per frame", S, ("invert", "restarts")),
    Opt("invert_seed", int, _ic.seed, "seed for starting codes", S, ("invert", "seed")),
    Opt("clip_latent", _bool, _ic.clip_latent, "clip z to [-1, 1] after each step", S,
        ("invert", "clip_latent")),
    Opt("lr_schedule", str, _ic.lr_schedule, "constant or cosine (annealed to zero)", S,
        ("invert", "lr_schedule")),
    # segmentation
    Opt("threshold_mode", str, _sc.threshold_mode, "otsu or fixed", S, ("seg", "threshold_mode")),
    Opt("fixed_tau", float, _sc.fixed_tau, "threshold in [0, 2] for fixed mode", S, ("seg", "fixed_tau")),
    Opt("median_radius", int, _sc.median_radius, "median filter radius (0 disables)", S,
        ("seg", "median_radius")),
    # synthetic benchmark
    *[Opt(("synth_" + f) if f in ("seed", "size") else f, type(getattr(_yc, f)), getattr(_yc, f),
          f"synthetic benchmark {f.replace('_', ' ')}", Y, ("synth", f))
      for f in dataio.SynthConfig.__dataclass_fields__],
]
BY_KEY = {o.key: o for o in OPTIONS}
REQUIRED = {
    "train": ("train_dir", "checkpoint"),
    "segment": ("checkpoint", "test_dir", "mask_dir"),
    "eval": ("pred_dir", "gt_dir"),
    "synth": ("synth_dir",),
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_DATA):
        super().__init__(message)
        self.code = code


# -- configuration ---------------------------------------------------------------

def settings(config_path=None, cli_values=None):
    """Layer built-in defaults, then the config file, then command-line flags."""
    values = {o.key: o.default for o in OPTIONS}
    if config_path is not None:
        try:
            raw = dataio.read_kv(config_path)
        except OSError as exc:
            raise CliError(f"cannot read config {config_path}: {exc}") from None
        except FormatError as exc:
            raise CliError(str(exc)) from None
        unknown = sorted(set(raw) - set(BY_KEY))
        if unknown:
            raise CliError(f"{config_path}: unknown keys: {', '.join(unknown)}")
        for key, text in raw.items():
            try:
                values[key] = BY_KEY[key].kind(text)
            except ValueError:
                raise CliError(f"{config_path}: {key}: bad value {text!r}") from None
    for key, v in (cli_values or {}).items():
        if v is not None:
            values[key] = v
    return values


def resolve(command, cli_values, config_path=None):
    values = settings(config_path, cli_values)
    missing = [k for k in REQUIRED[command] if not values[k]]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise CliError(f"{command}: missing required setting(s): {flags}")
    return values


def build(values, target, cls):
    """Config object ``cls`` from the keys that map onto ``target``
    (one of train, invert, seg, synth)."""
    kwargs = {o.target[1]: values[o.key] for o in OPTIONS
              if o.target and o.target[0] == target}
    try:
        return cls(**kwargs)
    except ContractError as exc:
        raise CliError(str(exc)) from None


# -- helpers -----------------------------------------------------------------------

class Outputs:
    """Files written so far, so a mid-run failure can report them."""

    def __init__(self):
        self.paths = []

    def add(self, path):
        self.paths.append(Path(path))
        return path


def _load_frames(directory, layout, size):
    try:
        seq = dataio.load_sequence(directory, layout, size)
    except OSError as exc:
        raise CliError(str(exc)) from None
    if not len(seq):
        raise CliError(f"{directory}: no image files")
    return seq


def _sequence_dirs(directory):
    """[(name, path)]: the directory itself if it holds frames, else its sequences."""
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError(f"{directory}: not a directory")
    if dataio.list_images(directory):
        return [(None, directory)]
    subs = dataio.list_sequences(directory)
    if not subs:
        raise CliError(f"{directory}: no image files")
    return [(d.name, d) for d in subs]


def _write_loss_csv(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "d_loss", "g_loss"])
        for i, (d, g) in enumerate(history):
            w.writerow([i, f"{d:.6g}", f"{g:.6g}"])


def _load_checkpoint(path):
    try:
        return dataio.load_model(path)
    except FileNotFoundError:
        raise CliError(f"{path}: checkpoint not found") from None
    except (FormatError, OSError) as exc:
        raise CliError(str(exc), EXIT_FORMAT) from None


# -- commands ----------------------------------------------------------------------

def cmd_train(values, out):
    cfg = build(values, "train", gan.TrainConfig)
    seq = _load_frames(values["train_dir"], values["layout"], values["image_size"])
    ckpt = Path(values["checkpoint"])
    loss_csv = Path(values["loss_csv"] or ckpt.with_suffix(".loss.csv"))
    for p in (ckpt, loss_csv):
        if not p.parent.is_dir():
            raise CliError(f"{p.parent}: output directory does not exist")
    log.info("training on %d frames for %d steps", len(seq), cfg.steps)

    def progress(step, d, g):
        if (step + 1) % 100 == 0:
            log.info("step %d  d_loss %.4f  g_loss %.4f", step + 1, d, g)

    model, history = gan.train(seq, cfg, callback=progress)
    dataio.save_model(out.add(ckpt), model)
    _write_loss_csv(out.add(loss_csv), history)
    log.info("wrote %s and %s", ckpt, loss_csv)


def _segment_chunk(args):
    model, frames, icfg, scfg, ids = args
    return segmentation.segment_many(model, frames, icfg, scfg, frame_ids=ids)


def _segment_frames(model, frames, icfg, scfg, jobs):
    ids = np.arange(len(frames))
    chunks = [ids[i:i + SEGMENT_CHUNK] for i in range(0, len(ids), SEGMENT_CHUNK)]
    if jobs > 1 and len(frames) > 1:
        # finer split so every worker has something to do
        per = -(-len(frames) // jobs)
        chunks = [ids[i:i + per] for i in range(0, len(ids), per)]
    work = [(model, frames[c], icfg, scfg, c) for c in chunks]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_segment_chunk, work))
    else:
        parts = [_segment_chunk(w) for w in work]
    masks = [m for p in parts for m in p[0]]
    results = [r for p in parts for r in p[1]]
    return masks, results


def cmd_segment(values, out):
    icfg = build(values, "invert", InversionConfig)
    scfg = build(values, "seg", segmentation.SegConfig)
    if values["jobs"] < 1:
        raise CliError("jobs must be >= 1")
    model = _load_checkpoint(values["checkpoint"])
    sequences = []
    for name, d in _sequence_dirs(values["test_dir"]):
        seq = _load_frames(d, values["layout"], model.image_size)
        if seq.frames[0].shape[0] != model.channels:
            raise CliError(f"{d}: {seq.frames[0].shape[0]}-channel frames, "
                           f"checkpoint expects {model.channels}")
        sequences.append((name, seq))
    mask_root = Path(values["mask_dir"])
    traj_root = Path(values["trajectory_dir"]) if values["trajectory_dir"] else None
    for name, seq in sequences:
        log.info("segmenting %s: %d frames", name or seq.names[0], len(seq))
        masks, results = _segment_frames(model, seq.batch(), icfg, scfg, values["jobs"])
        mdir = mask_root / name if name else mask_root
        mdir.mkdir(parents=True, exist_ok=True)
        for fname, m in zip(seq.names, masks):
            dataio.write_mask(out.add(mdir / f"{fname}.pgm"), m)
        with open(out.add(mdir / "inversion.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "best_loss"])
            for fname, r in zip(seq.names, results):
                w.writerow([fname, f"{r.best_loss:.6g}"])
        if values["dump_backgrounds"]:
            bdir = mdir / "backgrounds"
            bdir.mkdir(exist_ok=True)
            for fname, r in zip(seq.names, results):
                img = dataio.to_uint8(r.background[0])
                if img.ndim == 3:
                    raise CliError("backgrounds can only be dumped for single-channel models")
                dataio.write_pgm(out.add(bdir / f"{fname}.pgm"), img)
        if traj_root is not None:
            tdir = traj_root / name if name else traj_root
            tdir.mkdir(parents=True, exist_ok=True)
            for fname, r in zip(seq.names, results):
                write_trajectory_csv(out.add(tdir / f"{fname}.csv"), r)
    log.info("wrote %d files under %s", len(out.paths), mask_root)


def _pair_masks(pred_dir, gt_dir):
    """[(stem, pred path, gt path)] for every annotated frame; raises on gaps.

    Predictions without a mask are skipped, since annotation may be sparse.
    """
    gt_dir = Path(gt_dir)
    if (gt_dir / "gt").is_dir():
        gt_dir = gt_dir / "gt"
    if not gt_dir.is_dir():
        raise CliError(f"{gt_dir}: not a directory")
    gt = dataio.gt_table(gt_dir)
    if not gt:
        raise CliError(f"{gt_dir}: no ground-truth masks")
    pred = {p.stem: p for p in dataio.list_images(pred_dir)}
    matched = dataio.match_gt(list(pred), gt)
    used = {gt_path for gt_path in matched.values()}
    missing = sorted(stem for stem, path in gt.items() if path not in used)
    if missing:
        raise CliError(f"{pred_dir}: no prediction for: {', '.join(missing)}")
    return [(s, pred[s], matched[s]) for s in sorted(matched)]


def cmd_eval(values, out):
    pred_root, gt_root = Path(values["pred_dir"]), Path(values["gt_dir"])
    pairs = []
    for name, d in _sequence_dirs(pred_root):
        gdir = gt_root / name if name else gt_root
        pairs.append((name or pred_root.name, _pair_masks(d, gdir)))
    rows, aggregates, everything = [], [], []
    for seq_name, items in pairs:
        reports = []
        for stem, ppath, gpath in items:
            try:
                p = dataio.read_mask(ppath)
                g = dataio.read_mask(gpath, size=p.shape[0] if p.shape[0] == p.shape[1] else None)
                r = metrics.evaluate(p, g)
            except DimensionError as exc:
                raise CliError(f"{stem}: {exc}") from None
            reports.append(r)
            rows.append((seq_name, stem, r))
        agg = metrics.aggregate(reports)
        aggregates.append((seq_name, agg))
        everything.extend(reports)
        print(f"{seq_name}: frames={len(reports)} F={agg.f_measure:.4f} P={agg.precision:.4f} "
              f"R={agg.recall:.4f} Acc={agg.accuracy:.4f} Spec={agg.specificity:.4f} "
              f"pooled_F={agg.pooled.f_measure:.4f}")
    if len(pairs) > 1:
        agg = metrics.aggregate(everything)
        aggregates.append(("all", agg))
        print(f"all: frames={len(everything)} F={agg.f_measure:.4f} pooled_F={agg.pooled.f_measure:.4f}")
    if values["report_csv"]:
        metrics.write_report_csv(out.add(values["report_csv"]), rows, aggregates)


def cmd_synth(values, out):
    cfg = build(values, "synth", dataio.SynthConfig)
    root = Path(values["synth_dir"])
    train, test = dataio.synth_generate(cfg)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for sub, seq in (("train", train), ("test", test)):
            for p in dataio.save_sequence(seq, root / sub):
                out.add(p)
    except OSError as exc:
        raise CliError(f"cannot write under {root}: {exc}") from None
    log.info("wrote %d training and %d test frames under %s", len(train), len(test), root)


COMMANDS = {"train": cmd_train, "segment": cmd_segment, "eval": cmd_eval, "synth": cmd_synth}
SUMMARIES = {
    "train": "train a model on background-only frames",
    "segment": "invert every frame and write foreground masks",
    "eval": "score predicted masks against ground truth",
    "synth": "write the synthetic dynamic-background benchmark",
}


# -- argument parsing ----------------------------------------------------------------

def make_parser():
    parser = argparse.ArgumentParser(prog="foregan", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command, help=SUMMARIES[command], description=SUMMARIES[command])
        p.add_argument("--config", help="key=value settings file (flags override it)")
        p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
        for o in OPTIONS:
            if command not in o.commands:
                continue
            flag = "--" + o.key.replace("_", "-")
            text = f"{o.help} (default: {o.default})"
            if o.kind is _bool:
                p.add_argument(flag, dest=o.key, action=argparse.BooleanOptionalAction,
                               default=None, help=text)
            else:
                p.add_argument(flag, dest=o.key, type=o.kind, default=None, help=text,
                               metavar=o.key.upper())
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    cli_values = {k: v for k, v in vars(args).items() if k in BY_KEY}
    out = Outputs()
    try:
        values = resolve(args.command, cli_values, args.config)
        COMMANDS[args.command](values, out)
    except CliError as exc:
        return _fail(str(exc), exc.code, out)
    except FormatError as exc:
        return _fail(str(exc), EXIT_FORMAT, out)
    except (ContractError, DimensionError, NumericError, OSError) as exc:
        return _fail(str(exc), EXIT_DATA, out)
    return EXIT_OK


def _fail(message, code, out):
    print(f"foregan: error: {message}", file=sys.stderr)
    if out.paths:
        print("files written before the failure:", file=sys.stderr)
        for p in out.paths:
            print(f"  {p}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
