#!/usr/bin/env python3
"""Fetch the 10k MNIST digits shipped in the `mnist` npm package and write
them as IDX files (train-images-idx3-ubyte, t10k-images-idx3-ubyte, ...).

Usage: fetch_mnist_digits.py OUT_DIR [--tarball mnist-1.1.0.tgz] [--train 8000] [--seed 0]
"""
import argparse
import json
import pathlib
import random
import struct
import subprocess
import tarfile
import tempfile


def load_digits(tarball):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            data = json.load(tar.extractfile(member))["data"]
            for i in range(0, len(data), 784):
                images.append(bytes(min(255, max(0, round(v * 255))) for v in data[i:i + 784]))
                labels.append(digit)
    return images, labels


def write_idx(out, prefix, images, labels):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out")
    ap.add_argument("--tarball")
    ap.add_argument("--train", type=int, default=8000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball
        if tarball is None:
            name = subprocess.check_output(["npm", "pack", "mnist@1.1.0"], cwd=tmp, text=True).split()[-1]
            tarball = str(pathlib.Path(tmp) / name)
        images, labels = load_digits(tarball)

    order = list(range(len(images)))
    random.Random(args.seed).shuffle(order)
    train, test = order[:args.train], order[args.train:]
    write_idx(out, "train", [images[i] for i in train], [labels[i] for i in train])
    write_idx(out, "t10k", [images[i] for i in test], [labels[i] for i in test])
    print(f"wrote {len(train)} train / {len(test)} test digits to {out}")


if __name__ == "__main__":
    main()
