"""Interior-ROI PSNR of FBP on the Shepp-Logan phantom as the view count grows."""
import argparse
import time

import numpy as np

from phdct.geometry import FILTERS, FanGeometry, fbp_reconstruct, make_phantom, pixel_centers, radon_forward


def roi_psnr(test, ref, radius=0.9):
    x, y = pixel_centers(ref.shape[0])
    roi = x ** 2 + y ** 2 <= radius ** 2
    return 10 * np.log10(ref.max() ** 2 / np.mean((test[roi] - ref[roi]) ** 2))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--detectors", type=int, default=512)
    ap.add_argument("--views", type=int, nargs="+", default=[90, 180, 360])
    args = ap.parse_args()
    img = make_phantom(args.size)
    for views in args.views:
        g = FanGeometry(num_views=views, num_detectors=args.detectors, image_size=args.size)
        t0 = time.perf_counter()
        sino = radon_forward(img, g)
        row = [f"views {views:4d}"]
        for f in FILTERS:
            row.append(f"{f} {roi_psnr(fbp_reconstruct(sino, g, f), img):.2f} dB")
        row.append(f"{time.perf_counter() - t0:.1f} s")
        print("  ".join(row))


if __name__ == "__main__":
    main()
