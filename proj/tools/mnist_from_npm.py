#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into IDX files.

    npm pack mnist            # fetches mnist-<version>.tgz
    python3 tools/mnist_from_npm.py mnist-1.1.0.tgz data/mnist

The package stores 28x28 digits per class as flat [0, 1] pixel arrays. They are
re-quantized to bytes (round(v * 255)) and written in class-interleaved order
as `mnist10k-images-idx3-ubyte` / `mnist10k-labels-idx1-ubyte`.
"""
import json
import struct
import sys
import tarfile
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 1
    tgz, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    per_class = []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.extractfile(f"package/src/digits/{digit}.json")
            data = json.load(member)["data"]
            if len(data) % 784:
                raise SystemExit(f"digit {digit}: pixel count not a multiple of 784")
            per_class.append([data[k:k + 784] for k in range(0, len(data), 784)])

    images, labels = [], []
    longest = max(len(c) for c in per_class)
    for k in range(longest):
        for digit, samples in enumerate(per_class):
            if k < len(samples):
                images.append(samples[k])
                labels.append(digit)

    with open(out / "mnist10k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(min(255, max(0, round(v * 255))) for v in img))
    with open(out / "mnist10k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
