#!/usr/bin/env python3
"""Dynamic evaluation: noisy ground-truth perception laps on both loop tracks.

Runs the lane-keeping loop at 76 km/h on the 2843 m loop and 50 km/h on the
3919 m loop (heading noise 0.01 rad, offset noise 0.05 m), prints the
dynamic measures, and writes per-episode reports under out/dynamic_eval/.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mtdrive import control as ct
from mtdrive import perception as pc
from mtdrive import simulate as sim
from mtdrive import track as tk


def main() -> int:
    out = Path("out/dynamic_eval")
    logs, metrics, tracks = [], [], []
    for name, v_kmh in (("track7_like", 76.0), ("track8_like", 50.0)):
        track = tk.make_preset_track(name)
        config = sim.EpisodeConfig(v_ref=v_kmh / 3.6, dt=0.05, max_steps=12000, seed=8)
        perceptor = pc.GroundTruthPerceptor(pc.NoiseSpec(theta_sigma=0.01, delta_sigma=0.05, seed=config.seed))
        log = sim.run_episode(track, perceptor, ct.StanleyParams(), ct.PIParams(dtau=0.05), ct.PlantParams(), config)
        rep = sim.episode_metrics(log)
        print(
            f"{name} @ {v_kmh:.0f} km/h: {log.termination}, "
            f"theta dMAE {rep.theta_dmae:.4f} rad, dMA delta {rep.dma_delta * 100:.2f} cm, "
            f"{rep.distance:.0f} m in {len(log)} steps"
        )
        logs.append(log)
        metrics.append(rep)
        tracks.append(track)
    files = sim.emit_report(logs, metrics, out, tracks=tracks)
    print(f"report: {len(files)} files under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
