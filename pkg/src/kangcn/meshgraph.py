"""Structured triangular meshes and the symmetric-normalized GCN propagation operator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class MeshGraph:
    """Triangulated rectangle viewed as an undirected graph.

    ``norm_adj`` holds D~^{-1/2} (A + I) D~^{-1/2} as sorted (row, col, value)
    triples; ``operator`` is the same matrix in CSR form for fast products.
    """

    num_nodes: int
    coords: np.ndarray
    edges: np.ndarray
    resolution_m: float
    norm_adj: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False)
    operator: sp.csr_matrix = field(repr=False)

    @classmethod
    def from_edges(cls, coords, edges, resolution_m: float) -> "MeshGraph":
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        n = coords.shape[0]
        triples = normalize_adjacency(edges, n)
        operator = sp.csr_matrix((triples[2], (triples[0], triples[1])), shape=(n, n))
        coords.setflags(write=False)
        edges.setflags(write=False)
        return cls(n, coords, edges, float(resolution_m), triples, operator)

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_nodes": self.num_nodes,
                "coords": self.coords.tolist(),
                "edges": self.edges.tolist(),
                "resolution_m": self.resolution_m,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "MeshGraph":
        obj = json.loads(text)
        graph = cls.from_edges(obj["coords"], obj["edges"], obj["resolution_m"])
        if graph.num_nodes != obj["num_nodes"]:
            raise ValueError(f"num_nodes {obj['num_nodes']} disagrees with {graph.num_nodes} coords")
        return graph

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "MeshGraph":
        return cls.from_json(Path(path).read_text())

    def dense_adjacency(self) -> np.ndarray:
        return self.operator.toarray()

    def permuted(self, perm) -> "MeshGraph":
        """Relabel nodes so that new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return MeshGraph.from_edges(self.coords[perm], inverse[self.edges], self.resolution_m)


def _grid_count(extent: float, spacing: float) -> int:
    return int(np.floor(extent / spacing + 1e-9)) + 1


def build_rect_mesh(length_m: float, width_m: float, spacing_m: float) -> MeshGraph:
    """Grid the rectangle [0, length] x [0, width] and split each cell along its
    lower-left to upper-right diagonal. Nodes are numbered row-major (x fastest)."""
    if spacing_m <= 0 or length_m <= 0 or width_m <= 0:
        raise ValueError("mesh dimensions and spacing must be positive")
    if length_m < spacing_m or width_m < spacing_m:
        raise ValueError("domain must span at least one cell in each direction")
    nx = _grid_count(length_m, spacing_m)
    ny = _grid_count(width_m, spacing_m)
    xs = np.arange(nx) * float(spacing_m)
    ys = np.arange(ny) * float(spacing_m)
    gx, gy = np.meshgrid(xs, ys)
    coords = np.column_stack([gx.ravel(), gy.ravel()])

    idx = np.arange(nx * ny).reshape(ny, nx)
    ll, lr = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    ul, ur = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    # triangles (ll, lr, ur) and (ll, ur, ul)
    cand = np.concatenate(
        [np.column_stack(p) for p in ((ll, lr), (lr, ur), (ll, ur), (ur, ul), (ul, ll))]
    )
    cand.sort(axis=1)
    edges = np.unique(cand, axis=0)
    return MeshGraph.from_edges(coords, edges, spacing_m)


def normalize_adjacency(graph_edges, num_nodes: int):
    """Return D~^{-1/2} (A + I) D~^{-1/2} as (rows, cols, values), sorted by row then col."""
    edges = np.asarray(graph_edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise IndexError("edge references a node outside [0, num_nodes)")
    if np.any(edges[:, 0] == edges[:, 1]):
        raise ValueError("input edges must not contain self-loops")
    diag = np.arange(num_nodes, dtype=np.int64)
    rows = np.concatenate([edges[:, 0], edges[:, 1], diag])
    cols = np.concatenate([edges[:, 1], edges[:, 0], diag])
    a = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(num_nodes, num_nodes)).tocsr()
    a.sum_duplicates()
    a.data[:] = 1.0  # duplicated input edges collapse to a 0/1 pattern
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = a.tocoo()
    order = np.lexsort((coo.col, coo.row))
    r, c = coo.row[order].astype(np.int64), coo.col[order].astype(np.int64)
    vals = inv_sqrt[r] * inv_sqrt[c]
    return r, c, vals


def propagate(norm_adj, node_matrix) -> np.ndarray:
    """Sparse (N x N) times dense (N x F). ``norm_adj`` may be a MeshGraph, a CSR
    matrix, or a triples tuple."""
    if isinstance(norm_adj, MeshGraph):
        op = norm_adj.operator
    elif sp.issparse(norm_adj):
        op = norm_adj
    else:
        r, c, v = norm_adj
        n = int(max(r.max(), c.max())) + 1
        op = sp.csr_matrix((v, (r, c)), shape=(n, n))
    x = np.asarray(node_matrix, dtype=np.float64)
    if x.shape[0] != op.shape[0]:
        raise ValueError(f"node matrix has {x.shape[0]} rows, operator has {op.shape[0]}")
    return np.asarray(op @ x)
