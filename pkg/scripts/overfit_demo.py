#!/usr/bin/env python3
"""Overfit demo: memorize 8 synthetic frames and read them back end to end.

Trains the residual variant jointly on 8 rendered frames, then runs the
network perceptor on each training image and prints the predicted vs true
heading and classes.
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mtdrive import data as dt
from mtdrive import models as md
from mtdrive import perception as pc


def main() -> int:
    t0 = time.perf_counter()
    pairs = dt.generate_frames(8, seed=21, resolution=(24, 32))
    frames = [f for _, f in pairs]
    theta_norm = dt.theta_normalizer(frames)
    training = dt.to_training_set(frames, theta_norm)

    cfg = md.ModelConfig(
        variant="residual",
        input_shape=(3, 32, 24),
        encoder_widths=(6, 12, 24),
        pose_fc_width=16,
        dropout_rate=0.0,
        loss_weights=(1.0, 8.0, 1.0, 1.0),
    )
    model = md.build_model(cfg, seed=3)
    sched = md.TrainSchedule(epochs=500, batch_size=1, lr=2e-3, lr_late=5e-4, late_frac=0.25, max_steps=4000)
    report = md.train(model, training, "joint", sched, seed=0)
    print(f"trained {report.steps} steps, final total loss {report.final_total:.5f} ({time.perf_counter() - t0:.0f}s)")

    perceptor = pc.NNPerceptor(model, theta_norm, pc.PathPredictConfig(band=(0.55, 0.85), min_rows=2))
    print(f"{'theta true':>11} {'theta est':>11} {'C1':>8} {'C2':>8}")
    for f in frames:
        out = perceptor.perceive(f.image)
        ok1 = "" if out.c1 == f.c1 else " <- WRONG"
        ok2 = "" if out.c2 == f.c2 else " <- WRONG"
        print(f"{f.theta:>11.5f} {out.theta_hat:>11.5f} {out.c1:>8}{ok1} {out.c2:>8}{ok2}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
