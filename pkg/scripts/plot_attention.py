"""Render CSVs from ``graphtrans export-attention`` as heatmaps (needs matplotlib).

    python scripts/plot_attention.py runs/att/attention --out runs/att/png
"""
import argparse
import csv
from pathlib import Path

import numpy as np


def read_map(path: Path) -> np.ndarray:
    with open(path) as fh:
        rows = [r for r in csv.reader(fh) if not r[0].startswith("#")]
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("directory", type=Path)
    parser.add_argument("--out", type=Path)
    args = parser.parse_args()
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = args.out or args.directory
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(args.directory.glob("graph*_layer*_head*.csv")):
        weights = read_map(path)
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(weights, cmap="viridis", vmin=0.0)
        ax.set_title(path.stem)
        ax.set_xlabel("key (0 = CLS)")
        ax.set_ylabel("query")
        fig.tight_layout()
        fig.savefig(out / f"{path.stem}.png", dpi=100)
        plt.close(fig)
        print(out / f"{path.stem}.png")


if __name__ == "__main__":
    main()
