#!/usr/bin/env python3
"""Build IDX files from the digits shipped in the `mnist` npm package.

The package stores roughly 1000 digits per class as JSON arrays of
round(pixel / 255, 3). Pixels are recovered exactly as round(v * 255).
Examples are shuffled with a fixed seed and split into train/test IDX files
named like the official distribution, so the Rust loader treats them the
same way.

usage: mnist_from_npm.py <package>/src/digits <out-dir> [--train 8000] [--seed 0]
"""
import argparse
import json
import random
import struct
from pathlib import Path


def load(digits_dir):
    examples = []
    for label in range(10):
        data = json.loads((Path(digits_dir) / f"{label}.json").read_text())["data"]
        if len(data) % 784:
            raise SystemExit(f"{label}.json: length {len(data)} not a multiple of 784")
        for i in range(0, len(data), 784):
            px = bytes(int(round(v * 255)) for v in data[i : i + 784])
            examples.append((px, label))
    return examples


def write_idx(out, prefix, examples):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(examples), 28, 28))
        for px, _ in examples:
            f.write(px)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(examples)))
        f.write(bytes(label for _, label in examples))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    examples = load(args.digits_dir)
    random.Random(args.seed).shuffle(examples)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "train", examples[: args.train])
    write_idx(out, "t10k", examples[args.train :])
    print(f"{len(examples)} digits: {args.train} train, {len(examples) - args.train} test -> {out}")


if __name__ == "__main__":
    main()
