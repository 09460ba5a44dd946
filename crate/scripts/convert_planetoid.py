#!/usr/bin/env python3
"""Convert citation datasets into the plain-text layout read by `metacs`.

Inputs:
  * Planetoid pickles (ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index})
  * LINQS tables (<name>.cites / <name>.content)

Outputs, in OUT_DIR:
  <name>.edges   "u<TAB>v" per line; self-loop lines keep isolated nodes visible
  <name>.labels  "node<TAB>class"
  <name>.attrs   sparse binary attributes: "# dim=<d>" header, then "node<TAB>i j k"

Usage:
  convert_planetoid.py planetoid SRC_DIR NAME OUT_DIR
  convert_planetoid.py linqs SRC_DIR NAME OUT_DIR
"""
import os
import pickle
import sys

import numpy as np
import scipy.sparse as sp


def load_planetoid(src, name):
    def load(part):
        with open(os.path.join(src, f"ind.{name}.{part}"), "rb") as f:
            return pickle.load(f, encoding="latin1")

    x, y, tx, ty, allx, ally, graph = (load(p) for p in ["x", "y", "tx", "ty", "allx", "ally", "graph"])
    test_idx = [int(l) for l in open(os.path.join(src, f"ind.{name}.test.index"))]
    n = len(graph)
    dim = allx.shape[1]
    feats = sp.lil_matrix((n, dim))
    labels = {}
    allx = sp.csr_matrix(allx)
    tx = sp.csr_matrix(tx)
    for i in range(allx.shape[0]):
        feats[i] = allx[i]
        if ally[i].sum() > 0:
            labels[i] = int(np.argmax(ally[i]))
    for row, node in enumerate(test_idx):
        feats[node] = tx[row]
        if ty[row].sum() > 0:
            labels[node] = int(np.argmax(ty[row]))
    edges = []
    for u in sorted(graph):
        edges.append((u, u))
        for v in graph[u]:
            edges.append((u, v))
    feats = sp.csr_matrix(feats)
    attrs = {u: sorted(int(j) for j in feats[u].indices) for u in range(n)}
    return edges, labels, attrs, dim


def load_linqs(src, name):
    ids = {}
    labels = {}
    attrs = {}
    classes = {}
    dim = 0
    with open(os.path.join(src, f"{name}.content")) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            node = ids.setdefault(parts[0], len(ids))
            bits = parts[1:-1]
            dim = len(bits)
            attrs[node] = [i for i, b in enumerate(bits) if b == "1"]
            labels[node] = classes.setdefault(parts[-1], len(classes))
    edges = [(u, u) for u in range(len(ids))]
    with open(os.path.join(src, f"{name}.cites")) as f:
        for line in f:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in ids or parts[1] not in ids:
                continue
            edges.append((ids[parts[1]], ids[parts[0]]))
    return edges, labels, attrs, dim


def main():
    kind, src, name, out = sys.argv[1:5]
    edges, labels, attrs, dim = (load_planetoid if kind == "planetoid" else load_linqs)(src, name)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, f"{name}.edges"), "w") as f:
        f.write(f"# {name}: one edge per line; u==v lines only register isolated nodes\n")
        for u, v in edges:
            f.write(f"{u}\t{v}\n")
    with open(os.path.join(out, f"{name}.labels"), "w") as f:
        for u in sorted(labels):
            f.write(f"{u}\t{labels[u]}\n")
    with open(os.path.join(out, f"{name}.attrs"), "w") as f:
        f.write(f"# dim={dim}\n")
        for u in sorted(attrs):
            f.write(f"{u}\t{' '.join(map(str, attrs[u]))}\n")


if __name__ == "__main__":
    main()
