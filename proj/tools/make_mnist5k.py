#!/usr/bin/env python3
"""Write the 5000-image MNIST sample bundled with mlxtend as IDX files.

Usage: make_mnist5k.py <mlxtend wheel or mnist_5k.csv.gz> <out_dir>

Produces <out_dir>/images-idx3-ubyte and <out_dir>/labels-idx1-ubyte in the
standard big-endian IDX layout.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path


def read_rows(src: Path):
    if src.suffix == ".whl":
        with zipfile.ZipFile(src) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = src.read_bytes()
    for line in gzip.decompress(raw).decode().strip().split("\n"):
        values = [int(float(v)) for v in line.split(",")]
        yield values[:-1], values[-1]


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    rows = list(read_rows(Path(sys.argv[1])))
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for pixels, _ in rows:
            assert len(pixels) == 784
            f.write(bytes(pixels))
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(label for _, label in rows))
    print(f"wrote {len(rows)} examples to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
