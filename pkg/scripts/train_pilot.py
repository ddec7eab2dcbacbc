"""Train one partition model on a toy sinogram and report the smoothed loss
curve and per-level DSM loss against the zero-score baseline."""
import argparse
import time

import numpy as np

from phdct.geometry import make_phantom, preset, radon_forward
from phdct.hankel import extract_patches
from phdct.noise import scale_attenuation
from phdct.score import (GaussianScore, TrainConfig, default_schedule, dsm_loss, ema, make_schedule,
                         train_partition_model, training_partitions)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--partition", type=int, default=0, choices=(0, 1, 2))
    ap.add_argument("--sigma-min", type=float, default=0.002)
    ap.add_argument("--sigma-max", type=float, help="default: largest patch distance")
    ap.add_argument("--levels", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    geom = preset("toy", 64)
    img, _ = scale_attenuation(make_phantom(64), geom)
    x = radon_forward(img, geom)
    if args.sigma_max is None:
        sched = default_schedule([x], args.levels, args.sigma_min)
    else:
        sched = make_schedule(args.levels, args.sigma_min, args.sigma_max)
    parts = training_partitions([x], x.max())[args.partition]

    t0 = time.perf_counter()
    cfg = TrainConfig(total_steps=args.steps, seed=args.seed)
    model, losses = train_partition_model(parts, cfg, sched, np.random.default_rng(args.seed), x.max(),
                                          args.partition)
    print(f"{args.steps} steps in {time.perf_counter() - t0:.0f} s")
    e = ema(losses)
    marks = [m for m in (99, 499, 999, 1499, len(e) - 1) if m < len(e)]
    print("EMA:", "  ".join(f"{m + 1}: {e[m]:.0f}" for m in marks))
    if len(e) > 100:
        print(f"smoothed drop from step 100: {1 - e[-1] / e[99]:.1%}")

    held = extract_patches(parts[0], 64, 1).patches
    zero = GaussianScore(np.zeros(model.patch_shape), np.inf)
    print("sigma      trained    zero")
    for k, s in enumerate(sched.levels):
        print(f"{s:9.4f} {dsm_loss(model, held, s, seed=k):9.1f} {dsm_loss(zero, held, s, seed=k):9.1f}")


if __name__ == "__main__":
    main()
