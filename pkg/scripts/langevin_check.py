"""Corrector chain under an exact Gaussian score: empirical stationary moments
against the AR(1) closed form."""
import argparse
import math

import numpy as np

from phdct.hankel import hankel_transform, partition_triple_star, tile_for_inference
from phdct.sampler import corrector_step
from phdct.score import GaussianScore


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--variance", type=float, default=0.0)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--snr", type=float, default=0.16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    m = rng.normal(size=(16, 16))
    parts = partition_triple_star(hankel_transform(m, 8))
    models = [GaussianScore(tile_for_inference(p, (16, 64)).patches, args.variance, patch_shape=(16, 64))
              for p in parts.parts()]
    tau = args.variance + args.sigma ** 2
    eps = 2 * (args.snr * args.sigma) ** 2
    var_inf = tau / (1 - eps / (2 * tau))
    x = m + math.sqrt(var_inf) * rng.normal(size=m.shape)
    acc = []
    for _ in range(args.steps):
        x = corrector_step(x, models, args.sigma, args.snr, rng)
        acc.append(x - m)
    d = np.stack(acc)
    print(f"step size {eps:.4g}, lag-1 autocorrelation {1 - eps / tau:.4f}")
    print(f"mean offset {d.mean():+.5f}")
    print(f"variance {d.var():.5f}  closed form {var_inf:.5f}  (continuous-time limit {tau:.5f})")


if __name__ == "__main__":
    main()
