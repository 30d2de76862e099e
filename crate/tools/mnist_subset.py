"""Convert the digits bundled with the `mnist` npm package (v1.1.0) into IDX files.

Usage: python3 tools/mnist_subset.py <path-to-unpacked-npm-package> <out-dir>

The package ships 10,000 MNIST digits as grayscale values in [0, 1] rounded to
three decimals. Values are mapped back to bytes with round(v * 255). Each class
is split 80/20 into train/test, and both splits are shuffled with a fixed seed.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        count = len(data) // 784
        samples = [
            ([min(255, max(0, round(v * 255))) for v in data[i * 784 : (i + 1) * 784]], digit)
            for i in range(count)
        ]
        cut = (count * 4) // 5
        train.extend(samples[:cut])
        test.extend(samples[cut:])
    rng = random.Random(20240101)
    rng.shuffle(train)
    rng.shuffle(test)
    for prefix, split in (("train", train), ("t10k", test)):
        write_images(out / f"{prefix}-images-idx3-ubyte.gz", [s[0] for s in split])
        write_labels(out / f"{prefix}-labels-idx1-ubyte.gz", [s[1] for s in split])
        print(prefix, len(split))


if __name__ == "__main__":
    main()
