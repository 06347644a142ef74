"""Compare training budgets by how closely clamped samples match the data's curvature.

Trains one denoiser per configuration on the same dataset and reports the
final smoothed loss and the ratio of mean squared second differences
(samples / data).  A ratio near 1 means samples are as smooth as the data.

    python scripts/training_ablation.py DATASET [--samples 256]
"""
import argparse
import time

import numpy as np

from socdiff.denoiser import TrainConfig, new_network_denoiser, smoothed, train
from socdiff.diffusion import make_schedule, reverse_step
from socdiff.fileio import read_dataset
from socdiff.geometry import RobotModel
from socdiff.world import mean_sq_second_diff

CONFIGS = {
    "3000 steps, batch 256, lr 1e-3": TrainConfig(steps=3000, batch_size=256, learning_rate=1e-3),
    "6000 steps, batch 128, lr 2e-3": TrainConfig(steps=6000, batch_size=128, learning_rate=2e-3),
}


def sample_curvature(model, data, n, seed=0):
    rng = np.random.default_rng(seed)
    ends = data[rng.integers(0, len(data), n)]
    x = rng.standard_normal(ends.shape)
    for t in range(model.schedule.T, 0, -1):
        x[:, [0, -1]] = ends[:, [0, -1]]
        x = reverse_step(x, model.predict_eps(x, t), t, model.schedule, rng)
    x[:, [0, -1]] = ends[:, [0, -1]]
    return mean_sq_second_diff(x)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dataset")
    ap.add_argument("--samples", type=int, default=256)
    a = ap.parse_args()
    data = read_dataset(a.dataset)
    ref = mean_sq_second_diff(data)
    for name, cfg in CONFIGS.items():
        model = new_network_denoiser(data.shape[1], RobotModel.point(), make_schedule(128, "cosine"))
        t0 = time.perf_counter()
        model, losses = train(model, data, cfg, log=lambda *_: None)
        secs = time.perf_counter() - t0
        ratio = sample_curvature(model.fast(), data, a.samples) / ref
        print(f"{name:<32} loss {smoothed(losses)[-1]:.4f}  curvature ratio {ratio:6.2f}  ({secs:.0f} s)")


if __name__ == "__main__":
    main()
