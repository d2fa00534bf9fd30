"""Structural node embeddings.

Local view: heat-kernel wavelet characteristic functions on a cascade graph
(GraphWave).  Global view: truncated-log factorization of the DeepWalk
co-occurrence matrix of the global graph, exact below a size threshold and
path-sampled above it (NetMF / NetSMF).
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from .data import CascadeGraph, GlobalGraph

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_POINTS = tuple(np.linspace(0.0, 100.0, 16))


@dataclass
class StructuralEmbeddings:
    local: dict[str, np.ndarray]
    global_: dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# local view


def _symmetric_adjacency(nodes: Sequence[str], edges) -> np.ndarray:
    index = {u: i for i, u in enumerate(nodes)}
    a = np.zeros((len(nodes), len(nodes)))
    for s, d in edges:
        if s != d:
            a[index[s], index[d]] = a[index[d], index[s]] = 1.0
    return a


def heat_scales(eigenvalues: np.ndarray, n_scales: int = 2, eta: float = 0.85, gamma: float = 0.95) -> np.ndarray:
    """Scales spanning GraphWave's recommended range for the given Laplacian spectrum."""
    nonzero = eigenvalues[eigenvalues > 1e-3]
    if nonzero.size == 0:
        return np.ones(n_scales)
    geo = np.sqrt(nonzero.min() * nonzero.max())
    s_min, s_max = -np.log(gamma) / geo, -np.log(eta) / geo
    return np.linspace(s_min, s_max, n_scales)


def graphwave_embed(g: CascadeGraph, scales: Sequence[float] | None = None,
                    sample_points: Sequence[float] = DEFAULT_SAMPLE_POINTS, n_scales: int = 2) -> dict[str, np.ndarray]:
    """Per-node characteristic-function embedding of dimension 2*|scales|*|sample_points|.

    ``scales=None`` picks ``n_scales`` scales from the spectrum heuristic.
    Output layout per scale: real parts at every sample point, then
    imaginary parts.
    """
    if not g.nodes:
        raise ValueError("empty graph")
    a = _symmetric_adjacency(g.nodes, g.edges)
    lap = np.diag(a.sum(1)) - a
    lam, u = np.linalg.eigh(lap)
    lam = np.clip(lam, 0.0, None)
    if scales is None:
        scales = heat_scales(lam, n_scales)
    t = np.asarray(sample_points, dtype=float)
    blocks = []
    for s in scales:
        psi = (u * np.exp(-s * lam)) @ u.T  # row a = wavelet centred on node a (symmetric)
        blocks.append(np.stack([np.cos(psi * tp).mean(axis=1) for tp in t], axis=1))
        blocks.append(np.stack([np.sin(psi * tp).mean(axis=1) for tp in t], axis=1))
    emb = np.concatenate(blocks, axis=1)
    return {node: emb[i] for i, node in enumerate(g.nodes)}


# ---------------------------------------------------------------------------
# global view


def _global_adjacency(g: GlobalGraph) -> tuple[list[str], sp.csr_matrix]:
    nodes = list(g.nodes)
    index = {u: i for i, u in enumerate(nodes)}
    rows, cols, vals = [], [], []
    for (s, d), m in g.edges.items():
        if s == d:
            continue
        rows += [index[s], index[d]]
        cols += [index[d], index[s]]
        vals += [float(m), float(m)]
    n = len(nodes)
    a = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    a.sum_duplicates()
    return nodes, a


def deepwalk_matrix(a: np.ndarray, window: int, negative: float) -> np.ndarray:
    """Dense ``vol/(bT) * sum_r (D^-1 A)^r D^-1``; rows/cols of isolated nodes are zero."""
    deg = a.sum(1)
    vol = deg.sum()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    p = inv[:, None] * a
    acc = np.zeros_like(a)
    power = np.eye(len(a))
    for _ in range(window):
        power = power @ p
        acc += power
    return vol / (negative * window) * acc * inv[None, :]


def sampled_deepwalk_matrix(a: sp.csr_matrix, window: int, negative: float, n_samples: int,
                            rng: np.random.Generator) -> sp.csr_matrix:
    """Path-sampling sparsifier estimate of :func:`deepwalk_matrix`.

    Each sample picks an edge (u, v) with probability proportional to its
    weight, a length r in 1..T and a split k in 1..r, then walks k-1 steps
    from u and r-k steps from v.  The endpoint pair receives weight
    vol / (2 * n_samples) in each direction, giving an unbiased estimate of
    ``(1/T) sum_r D (D^-1 A)^r``.
    """
    a = a.tocsr()
    n = a.shape[0]
    deg = np.asarray(a.sum(1)).ravel()
    vol = deg.sum()
    coo = sp.triu(a, k=1).tocoo()
    w = coo.data / coo.data.sum()
    pick = rng.choice(len(w), size=n_samples, p=w)
    flip = rng.random(n_samples) < 0.5
    u = np.where(flip, coo.col[pick], coo.row[pick])
    v = np.where(flip, coo.row[pick], coo.col[pick])
    r = rng.integers(1, window + 1, size=n_samples)
    k = (rng.random(n_samples) * r).astype(int) + 1
    u = _walk(a, u, k - 1, rng)
    v = _walk(a, v, r - k, rng)
    vals = np.full(n_samples, vol / (2.0 * n_samples))
    est = sp.coo_matrix((np.concatenate([vals, vals]), (np.concatenate([u, v]), np.concatenate([v, u]))),
                        shape=(n, n)).tocsr()
    est.sum_duplicates()
    inv = sp.diags(np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0))
    return (vol / negative) * (inv @ est @ inv)


def _walk(a: sp.csr_matrix, start: np.ndarray, steps: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Weighted random walks, all advanced in lock-step; walker i stops after steps[i]."""
    pos = start.copy()
    indptr, indices = a.indptr, a.indices
    cum = np.concatenate([[0.0], np.cumsum(a.data)])
    for step in range(int(steps.max(initial=0))):
        live = steps > step
        p = pos[live]
        lo, hi = cum[indptr[p]], cum[indptr[p + 1]]
        target = lo + rng.random(p.size) * (hi - lo)
        j = np.searchsorted(cum, target, side="right") - 1
        j = np.clip(j, indptr[p], indptr[p + 1] - 1)
        pos[live] = indices[j]
    return pos


def _fix_signs(u: np.ndarray) -> np.ndarray:
    pivot = np.abs(u).argmax(axis=0)
    signs = np.sign(u[pivot, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def global_embed(g: GlobalGraph, dim: int = 64, window: int = 10, negative: float = 1.0, rank: int | None = None,
                 seed: int = 0, dense_limit: int = 2000, samples_per_edge: int = 20) -> dict[str, np.ndarray]:
    """Global-view embeddings of every node in ``g`` (dimension ``dim``).

    ``rank`` singular pairs are kept (default ``dim``); requests above the
    node count are clamped with a warning and the remaining coordinates are
    zero.
    """
    if not g.nodes:
        raise ValueError("empty global graph")
    rank = dim if rank is None else rank
    nodes, a = _global_adjacency(g)
    n = len(nodes)
    if rank > n:
        warnings.warn(f"rank {rank} exceeds node count {n}; clamped", stacklevel=2)
        rank = n
    if rank > dim:
        raise ValueError("rank cannot exceed the embedding dimension")
    out = np.zeros((n, dim))
    if a.nnz and rank:
        if n <= dense_limit:
            m = deepwalk_matrix(a.toarray(), window, negative)
            m = np.log(np.maximum(m, 1.0))
            uu, s, _ = np.linalg.svd(m)
            uu, s = uu[:, :rank], s[:rank]
        else:
            rng = np.random.default_rng(seed)
            n_samples = samples_per_edge * window * (a.nnz // 2)
            m = sampled_deepwalk_matrix(a, window, negative, n_samples, rng)
            m.data = np.log(np.maximum(m.data, 1.0))
            m.eliminate_zeros()
            k = min(rank, n - 1)
            v0 = np.random.default_rng(seed).standard_normal(n)
            uu, s, _ = svds(m, k=k, v0=v0)
            order = np.argsort(s)[::-1]
            uu, s = uu[:, order], s[order]
        uu = _fix_signs(uu)
        out[:, : len(s)] = uu * np.sqrt(s)
    return {node: out[i] for i, node in enumerate(nodes)}


def lookup(table: dict[str, np.ndarray], users: Sequence[str], dim: int) -> np.ndarray:
    """Stack embeddings for ``users``; users missing from ``table`` get zeros."""
    zero = np.zeros(dim)
    return np.stack([table.get(u, zero) for u in users]) if users else np.zeros((0, dim))


# ---------------------------------------------------------------------------
# disk cache


def graph_hash(nodes: Sequence[str], edges) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(list(nodes)).encode())
    items = sorted(edges.items()) if isinstance(edges, dict) else sorted(edges)
    h.update(json.dumps(items).encode())
    return h.hexdigest()


def write_matrix(path, users: Sequence[str], matrix: np.ndarray, meta: dict | None = None) -> None:
    """One JSON header line, then the matrix as row-major little-endian float64."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    header = {"rows": matrix.shape[0], "cols": matrix.shape[1], "dtype": "<f8", "order": "C",
              "users": list(users), "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(matrix.tobytes(order="C"))


def read_matrix(path) -> tuple[list[str], np.ndarray, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    return header["users"], data.reshape(header["rows"], header["cols"]).copy(), header["meta"]


class EmbeddingCache:
    """Directory of matrix files plus ``index.json`` mapping cache keys to file names."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self.index = json.loads(self.index_path.read_text()) if self.index_path.exists() else {}

    @staticmethod
    def key(graph_digest: str, params: dict) -> str:
        blob = json.dumps({"graph": graph_digest, "params": params}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:32]

    def get(self, key: str) -> dict[str, np.ndarray] | None:
        name = self.index.get(key)
        if name is None or not (self.root / name).exists():
            return None
        users, mat, _ = read_matrix(self.root / name)
        return {u: mat[i] for i, u in enumerate(users)}

    def put(self, key: str, table: dict[str, np.ndarray], meta: dict | None = None) -> None:
        users = list(table)
        mat = np.stack([table[u] for u in users]) if users else np.zeros((0, 0))
        name = f"{key}.bin"
        write_matrix(self.root / name, users, mat, meta)
        self.index[key] = name
        tmp = self.index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.index, indent=1))
        os.replace(tmp, self.index_path)
