#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) to the qmpnn text formats.

    python3 tools/convert_cora.py path/to/cora data/cora

writes edges.tsv, features.csv and labels.txt into the output directory.
Nodes keep the order of cora.content; class names are numbered alphabetically.
"""

import argparse
import sys
from pathlib import Path


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src", type=Path, help="directory holding cora.content and cora.cites")
    ap.add_argument("dst", type=Path, help="output directory")
    ap.add_argument("--raw", action="store_true", help="keep binary features instead of row-normalizing")
    args = ap.parse_args()

    ids, rows, names = {}, [], []
    with open(args.src / "cora.content") as f:
        for line in f:
            cols = line.split()
            if not cols:
                continue
            ids[cols[0]] = len(rows)
            rows.append([int(x) for x in cols[1:-1]])
            names.append(cols[-1])
    classes = {c: i for i, c in enumerate(sorted(set(names)))}

    edges, skipped = set(), 0
    with open(args.src / "cora.cites") as f:
        for line in f:
            cols = line.split()
            if len(cols) != 2:
                continue
            if cols[0] not in ids or cols[1] not in ids:
                skipped += 1
                continue
            u, v = ids[cols[0]], ids[cols[1]]
            if u != v:
                edges.add((min(u, v), max(u, v)))

    args.dst.mkdir(parents=True, exist_ok=True)
    with open(args.dst / "edges.tsv", "w") as f:
        for u, v in sorted(edges):
            f.write(f"{u}\t{v}\n")
    with open(args.dst / "features.csv", "w") as f:
        for r in rows:
            s = sum(r)
            vals = r if args.raw or s == 0 else [x / s for x in r]
            f.write(",".join(repr(float(x)) if not args.raw else str(x) for x in vals) + "\n")
    with open(args.dst / "labels.txt", "w") as f:
        for n in names:
            f.write(f"{classes[n]}\n")

    print(f"{len(rows)} nodes, {len(edges)} edges, {len(rows[0]) if rows else 0} features, "
          f"{len(classes)} classes" + (f", {skipped} citations to unknown papers dropped" if skipped else ""),
          file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
