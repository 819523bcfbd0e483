#!/usr/bin/env python3
"""Convert the 10,000-digit MNIST subset shipped in the npm `mnist` package to IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-10k

The npm package stores each digit class as a flat JSON array of pixel values
already divided by 255 and rounded to three decimals. Pixels are mapped back to
bytes with round(v * 255), and samples are interleaved round-robin across the
classes so any prefix of the file is roughly class balanced.
"""
import json
import struct
import sys
from pathlib import Path

PIXELS = 28 * 28


def main() -> None:
    src, dst = Path(sys.argv[1]), Path(sys.argv[2])
    dst.mkdir(parents=True, exist_ok=True)
    per_class = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())
        flat = raw["data"] if isinstance(raw, dict) else raw
        assert len(flat) % PIXELS == 0
        images = [flat[i : i + PIXELS] for i in range(0, len(flat), PIXELS)]
        per_class.append(images)

    order = []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                order.append((d, per_class[d][cursor[d]]))
                cursor[d] += 1

    with open(dst / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(order), 28, 28))
        for _, img in order:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))
    with open(dst / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(order)))
        f.write(bytes(d for d, _ in order))
    print(f"wrote {len(order)} samples to {dst}")


if __name__ == "__main__":
    main()
