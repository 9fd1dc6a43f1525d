#!/usr/bin/env python3
"""Convert the npm `mnist` and `fashion-mnist` packages into IDX files.

    npm pack mnist fashion-mnist
    mkdir -p mnist fmnist
    tar xzf mnist-1.1.0.tgz -C mnist
    tar xzf fashion-mnist-1.1.0.tgz -C fmnist
    python3 scripts/prepare_data.py --mnist mnist/package --fmnist fmnist/package --out data

The `mnist` package ships 10,000 digits as [0,1] floats rounded to three
decimals; they are mapped back to bytes with round(v * 255). From
`fashion-mnist` the last `--fmnist-per-class` images of every class are kept.
Both outputs are interleaved with a fixed-seed permutation.
"""
import argparse
import json
import os
import random
import struct


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def shuffled(pairs, seed):
    rng = random.Random(seed)
    rng.shuffle(pairs)
    return [p[0] for p in pairs], [p[1] for p in pairs]


def load_mnist(root):
    pairs = []
    for digit in range(10):
        with open(os.path.join(root, "src", "digits", f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for i in range(len(flat) // 784):
            img = [min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784]]
            pairs.append((img, digit))
    return pairs


def load_fmnist(root, per_class):
    pairs = []
    for cls in range(10):
        with open(os.path.join(root, "src", "clothes", f"{cls}.json")) as f:
            rows = [r for r in json.load(f)["data"] if len(r) == 784]
        for img in rows[-per_class:]:
            pairs.append(([int(v) for v in img], cls))
    return pairs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist", required=True)
    ap.add_argument("--fmnist", required=True)
    ap.add_argument("--out", default="data")
    ap.add_argument("--fmnist-per-class", type=int, default=1000)
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    images, labels = shuffled(load_mnist(args.mnist), 20240)
    write_idx_images(os.path.join(args.out, "mnist-images-idx3-ubyte"), images)
    write_idx_labels(os.path.join(args.out, "mnist-labels-idx1-ubyte"), labels)

    images, labels = shuffled(load_fmnist(args.fmnist, args.fmnist_per_class), 20241)
    write_idx_images(os.path.join(args.out, "fmnist-images-idx3-ubyte"), images)
    write_idx_labels(os.path.join(args.out, "fmnist-labels-idx1-ubyte"), labels)


if __name__ == "__main__":
    main()
