"""Convert a Planetoid dump (ind.<name>.* files) into gflin's text formats.

Usage: python planetoid_to_gflin.py RAW_DIR NAME OUT_PREFIX

Writes OUT_PREFIX.edges, OUT_PREFIX.features and OUT_PREFIX.labels.
Feature rows are scaled to sum to one, as is usual for these datasets.
"""

import pickle
import sys

import numpy as np
import scipy.sparse as sp


def load(raw, name):
    parts = {}
    for key in ["x", "y", "tx", "ty", "allx", "ally", "graph"]:
        with open(f"{raw}/ind.{name}.{key}", "rb") as fh:
            parts[key] = pickle.load(fh, encoding="latin1")
    with open(f"{raw}/ind.{name}.test.index") as fh:
        test_idx = np.array([int(line) for line in fh if line.strip()])
    test_sorted = np.sort(test_idx)
    tx, ty = parts["tx"], parts["ty"]
    if name == "citeseer":
        # Some test nodes are isolated and missing from tx/ty; pad them with zero rows.
        span = test_sorted[-1] - test_sorted[0] + 1
        tx_full = sp.lil_matrix((span, tx.shape[1]))
        tx_full[test_sorted - test_sorted[0], :] = tx
        ty_full = np.zeros((span, ty.shape[1]))
        ty_full[test_sorted - test_sorted[0], :] = ty
        tx, ty = tx_full, ty_full
    features = sp.vstack((parts["allx"], tx)).tolil()
    features[test_idx, :] = features[test_sorted, :]
    labels = np.vstack((parts["ally"], ty))
    labels[test_idx, :] = labels[test_sorted, :]
    return features.tocsr(), labels, parts["graph"]


def main():
    raw, name, out = sys.argv[1:4]
    features, onehot, graph = load(raw, name)
    n = features.shape[0]

    sums = np.asarray(features.sum(axis=1)).ravel()
    sums[sums == 0] = 1.0
    features = sp.diags(1.0 / sums) @ features
    dense = features.toarray()
    with open(f"{out}.features", "w") as fh:
        fh.write(f"{n} {dense.shape[1]}\n")
        for row in dense:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    with open(f"{out}.edges", "w") as fh:
        for u, v in sorted(edges):
            fh.write(f"{u}\t{v}\n")

    # Nodes without a label (isolated citeseer test nodes) get class 0.
    classes = onehot.argmax(axis=1)
    with open(f"{out}.labels", "w") as fh:
        for node in range(n):
            fh.write(f"{node}\t{int(classes[node])}\n")


if __name__ == "__main__":
    main()
