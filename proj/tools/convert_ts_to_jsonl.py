#!/usr/bin/env python3
"""Convert sktime/UEA .ts files into the JSON-lines dataset format."""
import argparse
import json
from pathlib import Path


def read_ts(path):
    in_data = False
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if not in_data:
            if line.lower() == "@data":
                in_data = True
            continue
        *dims, label = line.split(":")
        columns = [[float(v) for v in d.split(",")] for d in dims]
        length = len(columns[0])
        if any(len(c) != length for c in columns):
            raise ValueError(f"{path}: ragged dimensions within one sample")
        yield label.strip(), [[c[t] for c in columns] for t in range(length)]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("inputs", nargs="+", type=Path)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--prefix", default="")
    args = parser.parse_args()
    with args.out.open("w") as out:
        index = 0
        for path in args.inputs:
            for label, series in read_ts(path):
                record = {"id": f"{args.prefix}{index}", "label": label, "series": series}
                out.write(json.dumps(record, separators=(",", ":")) + "\n")
                index += 1


if __name__ == "__main__":
    main()
