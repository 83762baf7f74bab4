#!/usr/bin/env python3
"""Convert the npm-packaged MNIST / Fashion-MNIST digit dumps into gzipped IDX files.

The sandbox this project grew up in has no route to the usual dataset mirrors, but
the npm registry carries packages that bundle the data:

  mnist-data     the original MNIST IDX files (60,000 train / 10,000 test), gzipped as-is
  fashion-mnist  70,000 clothing images as JSON, raw bytes 0..255 (7,000 per class),
                 reshuffled into 60,000 / 10,000

Usage:
  tools/prepare_datasets.py mnist data/mnist
  tools/prepare_datasets.py fashion data/fashion
"""
import argparse
import gzip
import json
import pathlib
import random
import struct
import subprocess
import sys
import tarfile
import tempfile

PACKAGES = {
    "mnist": ("mnist-data@1.2.6", "package/data"),
    "fashion": ("fashion-mnist", "package/src/clothes"),
}
MNIST_FILES = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]


def fetch(package: str, workdir: pathlib.Path) -> pathlib.Path:
    out = subprocess.run(["npm", "pack", package], cwd=workdir, check=True,
                         capture_output=True, text=True).stdout.strip().splitlines()[-1]
    with tarfile.open(workdir / out) as tar:
        tar.extractall(workdir)
    return workdir


def load_class(path: pathlib.Path):
    return [bytes(r) for r in json.loads(path.read_text())["data"] if len(r) == 784]


def gzip_writer(path: pathlib.Path):
    # fixed mtime keeps the output byte-reproducible
    return gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)


def write_idx(path: pathlib.Path, images, labels):
    with gzip_writer(path.with_name(path.name + "-images-idx3-ubyte.gz")) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with gzip_writer(path.with_name(path.name + "-labels-idx1-ubyte.gz")) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("dataset", choices=sorted(PACKAGES))
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    package, subdir = PACKAGES[args.dataset]
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        root = fetch(package, pathlib.Path(tmp)) / subdir
        if args.dataset == "mnist":
            for name in MNIST_FILES:
                with gzip_writer(out / (name + ".gz")) as f:
                    f.write((root / name).read_bytes())
            print(f"mnist: original IDX files -> {out}")
            return 0
        samples = []
        for label in range(10):
            for img in load_class(root / f"{label}.json"):
                samples.append((img, label))

    test_fraction = 1.0 / 7.0
    rng = random.Random(args.seed)
    rng.shuffle(samples)
    n_test = round(len(samples) * test_fraction)
    test, train = samples[:n_test], samples[n_test:]
    write_idx(out / "train", [s[0] for s in train], [s[1] for s in train])
    write_idx(out / "t10k", [s[0] for s in test], [s[1] for s in test])
    print(f"{args.dataset}: {len(train)} train / {len(test)} test -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
