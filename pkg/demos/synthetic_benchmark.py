"""Train, invert and segment on the synthetic dynamic-background scene.

Runs the whole desk-scale benchmark in-process from configs/benchmark.cfg
and compares the result with plain differencing against a reference frame.
Takes about ten minutes on one core; pass --quick for a one-minute version
that shows the mechanics but not the accuracy.

    python3 demos/synthetic_benchmark.py [--quick] [--out demo_out]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from foregan import cli, dataio, gan, metrics, segmentation
from foregan.inversion import InversionConfig

ROOT = Path(__file__).resolve().parent.parent

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
ap.add_argument("--out", default="demo_out")
args = ap.parse_args()
out = Path(args.out)
out.mkdir(exist_ok=True)

values = cli.settings(ROOT / "configs" / "benchmark.cfg")
if args.quick:
    values.update(train_steps=300, invert_steps=200, n_test=10)

# The scene: a travelling sine wave (waving trees), a slow brightening ramp
# and sensor noise. Training frames show only background. Test frames sit
# between training times and carry a square that wanders around.
synth = cli.build(values, "synth", dataio.SynthConfig)
train_seq, test_seq = dataio.synth_generate(synth)
print(f"{len(train_seq)} background frames, {len(test_seq)} test frames")

# Phase 1: fit the GAN to the background distribution only.
t0 = time.time()
model, history = gan.train(train_seq, cli.build(values, "train", gan.TrainConfig),
                           callback=lambda s, d, g: s % 500 == 499 and print(
                               f"  step {s + 1}: d_loss {d:.3f}  g_loss {g:.3f}"))
print(f"trained in {time.time() - t0:.0f} s")
dataio.save_model(out / "model.fgan", model)

# Phase 2: for each test frame search the latent code whose rendering best
# matches it. The generator has never seen the square, so it renders the
# background underneath and the residual lights up where the object is.
icfg = cli.build(values, "invert", InversionConfig)
scfg = cli.build(values, "seg", segmentation.SegConfig)
t0 = time.time()
masks, results = segmentation.segment_many(model, test_seq.batch(), icfg, scfg)
print(f"inverted {len(test_seq)} frames x {icfg.steps} steps in {time.time() - t0:.0f} s")

ours = metrics.aggregate([metrics.evaluate(m, g) for m, g in zip(masks, test_seq.gt)])

# The baseline subtracts a fixed reference frame. The wave has moved and the
# light has changed since then, so it flags background as well.
ref = train_seq.frames[0]
base = metrics.aggregate([
    metrics.evaluate(segmentation.frame_difference_baseline(f, ref, scfg), g)
    for f, g in zip(test_seq.frames, test_seq.gt)])

print(f"inversion:          F {ours.f_measure:.3f}  P {ours.precision:.3f}  R {ours.recall:.3f}")
print(f"frame differencing: F {base.f_measure:.3f}  P {base.precision:.3f}  R {base.recall:.3f}")

# A strip of input / recovered background / mask triplets for a few frames.
rows = []
for j in np.linspace(0, len(test_seq) - 1, 4).astype(int):
    trip = [dataio.to_uint8(test_seq.frames[j]), dataio.to_uint8(results[j].background[0]),
            masks[j] * 255]
    rows.append(np.concatenate([np.pad(t, 2, constant_values=128) for t in trip], axis=1))
dataio.write_pgm(out / "triplets.pgm", np.concatenate(rows, axis=0).astype(np.uint8))
print(f"wrote {out / 'triplets.pgm'} and {out / 'model.fgan'}")
