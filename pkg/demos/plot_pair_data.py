#!/usr/bin/env python3
"""Render an eval plot-data file: real vs generated 2-D histograms.

Usage: plot_pair_data.py PLOTDATA_JSON [-o out.png]
"""

import argparse
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("plotdata")
    parser.add_argument("-o", "--out", default="pair_plot.png")
    args = parser.parse_args()

    data = json.loads(open(args.plotdata).read())
    real = np.asarray(data["real_hist2d"], dtype=float)
    pred = np.asarray(data["pred_hist2d"], dtype=float)
    d0, d1 = data["dims"]

    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharex=True, sharey=True)
    for ax, hist, title in ((axes[0], real, "ground truth"),
                            (axes[1], pred, "solver")):
        ax.imshow(hist.T, origin="lower", cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel(f"dimension {d0}")
    axes[0].set_ylabel(f"dimension {d1}")
    fig.suptitle(f"target samples, pair {data['pair_hash'][:12]}")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
