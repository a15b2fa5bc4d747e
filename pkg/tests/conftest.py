import time
from pathlib import Path

import pytest

from foregan import cli, gan, inversion, metrics, segmentation
from foregan.dataio import SynthConfig, synth_generate


@pytest.fixture
def small_model():
    return gan.init_model(latent_dim=8, image_size=16, channels=1, width=4, seed=3)


BENCHMARK_CFG = Path(__file__).resolve().parent.parent / "configs" / "benchmark.cfg"


class DeskRun:
    """The desk-scale benchmark, configured from configs/benchmark.cfg."""

    def __init__(self, config=BENCHMARK_CFG):
        values = cli.settings(config)
        self.synth = cli.build(values, "synth", SynthConfig)
        self.train_cfg = cli.build(values, "train", gan.TrainConfig)
        self.invert_cfg = cli.build(values, "invert", inversion.InversionConfig)
        self.seg_cfg = cli.build(values, "seg", segmentation.SegConfig)
        self.train_seq, self.test_seq = synth_generate(self.synth)

        t0 = time.perf_counter()
        self.model, self.history = gan.train(self.train_seq, self.train_cfg)
        t1 = time.perf_counter()
        self.masks, self.results = segmentation.segment_many(
            self.model, self.test_seq.batch(), self.invert_cfg, self.seg_cfg)
        t2 = time.perf_counter()
        self.train_seconds, self.segment_seconds = t1 - t0, t2 - t1

        self.reports = [metrics.evaluate(m, g) for m, g in zip(self.masks, self.test_seq.gt)]
        # baseline: same mask chain against the first training frame
        reference = self.train_seq.frames[0]
        self.baseline_reports = [
            metrics.evaluate(segmentation.frame_difference_baseline(f, reference, self.seg_cfg), g)
            for f, g in zip(self.test_seq.frames, self.test_seq.gt)]


@pytest.fixture(scope="session")
def desk():
    # several minutes on one core; shared by every test that needs a trained model
    return DeskRun()
