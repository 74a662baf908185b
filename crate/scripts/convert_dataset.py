#!/usr/bin/env python3
"""Convert public citation-graph distributions to the kcagc canonical layout.

Output directory gets three files:
  features.csv  headerless CSV, one row of reals per node
  labels.txt    one class index in 0..k per line
  edges.txt     one "u v" pair of 0-based node indices per line

Sources:
  linqs      <name>.content and <name>.cites (tab separated, stdlib only)
  planetoid  ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index} (numpy, scipy)
  mat        a .mat file with fea, gnd and W, as used for Wiki (scipy)

Example:
  python3 scripts/convert_dataset.py linqs --input raw/cora --name cora --out data/cora
"""

import argparse
import os
import pickle
import sys


def write_canonical(out, features, labels, edges):
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "features.csv"), "w") as f:
        for row in features:
            f.write(",".join(repr(float(v)) if v % 1 else str(int(v)) for v in row))
            f.write("\n")
    with open(os.path.join(out, "labels.txt"), "w") as f:
        f.writelines(f"{l}\n" for l in labels)
    with open(os.path.join(out, "edges.txt"), "w") as f:
        f.writelines(f"{u} {v}\n" for u, v in edges)
    k = len(set(labels))
    print(f"{out}: n={len(labels)} m={len(features[0]) if features else 0} k={k} edge lines={len(edges)}",
          file=sys.stderr)


def dense_labels(raw):
    """Maps arbitrary class names to 0..k in sorted order."""
    names = sorted(set(raw))
    index = {c: i for i, c in enumerate(names)}
    return [index[c] for c in raw]


def from_linqs(input_dir, name):
    ids, features, raw_labels = [], [], []
    with open(os.path.join(input_dir, f"{name}.content")) as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) < 3:
                continue
            ids.append(parts[0])
            features.append([float(v) for v in parts[1:-1]])
            raw_labels.append(parts[-1])
    position = {p: i for i, p in enumerate(ids)}
    edges, skipped = [], 0
    with open(os.path.join(input_dir, f"{name}.cites")) as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2:
                continue
            cited, citing = parts
            if cited in position and citing in position:
                edges.append((position[citing], position[cited]))
            else:
                skipped += 1
    if skipped:
        print(f"skipped {skipped} citations to papers without features", file=sys.stderr)
    return features, dense_labels(raw_labels), edges


def from_planetoid(input_dir, name):
    import numpy as np
    import scipy.sparse as sp

    def load(part):
        with open(os.path.join(input_dir, f"ind.{name}.{part}"), "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, tx, allx, y, ty, ally, graph = (load(p) for p in ("x", "tx", "allx", "y", "ty", "ally", "graph"))
    with open(os.path.join(input_dir, f"ind.{name}.test.index")) as f:
        test_index = [int(l) for l in f if l.strip()]
    order = np.sort(test_index)
    if name == "citeseer":
        # isolated test nodes are missing from tx; pad them with zero rows
        full = range(min(test_index), max(test_index) + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[order - min(order), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), y.shape[1]))
        ty_ext[order - min(order), :] = ty
        ty = ty_ext
    features = sp.vstack((allx, tx)).tolil()
    features[test_index, :] = features[order, :]
    onehot = np.vstack((ally, ty))
    onehot[test_index, :] = onehot[order, :]
    # padded citeseer nodes have no class; they become an extra class so that
    # labels still cover 0..k
    labels = [int(np.argmax(r)) if r.any() else onehot.shape[1] for r in onehot]
    edges = sorted({(min(u, v), max(u, v)) for u, vs in graph.items() for v in vs if u != v})
    return features.toarray().tolist(), dense_labels(labels), edges


def from_mat(path):
    import numpy as np
    import scipy.io
    import scipy.sparse as sp

    m = scipy.io.loadmat(path)
    fea = m["fea"]
    fea = fea.toarray() if sp.issparse(fea) else np.asarray(fea)
    gnd = np.asarray(m["gnd"]).ravel().tolist()
    w = sp.coo_matrix(m["W"])
    edges = sorted({(min(u, v), max(u, v)) for u, v in zip(w.row.tolist(), w.col.tolist()) if u != v})
    return fea.tolist(), dense_labels(gnd), edges


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", choices=["linqs", "planetoid", "mat"])
    ap.add_argument("--input", required=True, help="directory (linqs, planetoid) or .mat file")
    ap.add_argument("--name", help="dataset stem, e.g. cora or citeseer")
    ap.add_argument("--out", required=True, help="output directory")
    args = ap.parse_args()
    if args.source != "mat" and not args.name:
        ap.error("--name is required for linqs and planetoid sources")
    if args.source == "linqs":
        data = from_linqs(args.input, args.name)
    elif args.source == "planetoid":
        data = from_planetoid(args.input, args.name)
    else:
        data = from_mat(args.input)
    write_canonical(args.out, *data)


if __name__ == "__main__":
    main()
