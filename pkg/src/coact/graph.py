"""Prior-knowledge account graph: co-appearance weights plus filtering.

Edge weights count the sequences in which two accounts both appear. Two
filters sharpen the raw counts: an elementwise power (exponent p >= 1),
and a temporal-overlap rule that only counts a sequence when the accounts'
[first, last] activity intervals inside it overlap by more than a
threshold. The pairwise potential used downstream normalizes each edge by
1/sqrt(d_u d_v), which is where low-value edges get suppressed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .events import Dataset

__all__ = [
    "KnowledgeGraph",
    "co_occurrence",
    "filter_power",
    "filter_temporal_logic",
    "pairwise_potential",
    "save_graph",
    "load_graph",
]


@dataclass
class KnowledgeGraph:
    accounts: list             # account keys, index-aligned with w
    w: np.ndarray              # (V, V) symmetric, zero diagonal, >= 0
    filter_tag: str = "none"
    deg: np.ndarray = field(init=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        n = len(self.accounts)
        if self.w.shape != (n, n):
            raise ValueError("weight matrix must be square over the accounts")
        if not np.allclose(self.w, self.w.T):
            raise ValueError("weight matrix must be symmetric")
        if np.any(np.diag(self.w) != 0):
            raise ValueError("diagonal must be zero")
        if not np.all(np.isfinite(self.w)) or np.any(self.w < 0):
            raise ValueError("weights must be finite and non-negative")
        self.deg = self.w.sum(axis=1)

    @property
    def n(self) -> int:
        return len(self.accounts)

    def coupling(self) -> np.ndarray:
        """Degree-normalized weights w_uv / sqrt(d_u d_v); 0 for isolated nodes."""
        d = self.deg
        denom = np.sqrt(np.outer(d, d))
        out = np.zeros_like(self.w)
        np.divide(self.w, denom, out=out, where=denom > 0)
        return out


def _membership(d: Dataset) -> np.ndarray:
    """Binary (n_sequences, V) presence matrix."""
    Z = np.zeros((len(d.sequences), len(d.registry)), dtype=np.float64)
    for i, s in enumerate(d.sequences):
        for e in s.events:
            Z[i, d.registry.index(e.account)] = 1.0
    return Z


def co_occurrence(d: Dataset) -> KnowledgeGraph:
    """Raw weights: number of sequences containing both accounts.

    Presence counts once per sequence regardless of how often an account
    appears in it.
    """
    if not d.sequences:
        raise ValueError("dataset is empty")
    Z = _membership(d)
    w = Z.T @ Z
    np.fill_diagonal(w, 0.0)
    return KnowledgeGraph(d.registry.keys, w, "none")


def filter_power(g: KnowledgeGraph, p: float) -> KnowledgeGraph:
    """Elementwise p-th power of the raw co-occurrence counts."""
    if p < 1:
        raise ValueError("power exponent must be >= 1")
    if g.filter_tag != "none":
        raise ValueError(f"expected raw co-occurrence weights, got {g.filter_tag!r}")
    return KnowledgeGraph(g.accounts, g.w ** p, f"power(p={p:g})")


def filter_temporal_logic(d: Dataset, c: float) -> KnowledgeGraph:
    """Count co-appearances only when active intervals overlap by more than c.

    An account's active interval within a sequence spans its first to last
    event there; a single appearance gives a point interval, so it can never
    satisfy a positive threshold.
    """
    if c < 0:
        raise ValueError("overlap threshold must be non-negative")
    if not d.sequences:
        raise ValueError("dataset is empty")
    V = len(d.registry)
    w = np.zeros((V, V))
    for s in d.sequences:
        first: dict[int, float] = {}
        last: dict[int, float] = {}
        for e in s.events:
            i = d.registry.index(e.account)
            if i not in first:
                first[i] = e.t
            last[i] = e.t
        idx = np.fromiter(first.keys(), dtype=np.intp)
        lo = np.fromiter(first.values(), dtype=np.float64)
        hi = np.fromiter(last.values(), dtype=np.float64)
        overlap = np.minimum.outer(hi, hi) - np.maximum.outer(lo, lo)
        hit = (overlap > c).astype(np.float64)
        w[np.ix_(idx, idx)] += hit
    np.fill_diagonal(w, 0.0)
    return KnowledgeGraph(d.registry.keys, w, f"temporal_logic(c={c:g})")


def pairwise_potential(g: KnowledgeGraph, u: int, v: int, y_u: int, y_v: int) -> float:
    """Degree-normalized edge reward, paid only for equal group labels."""
    if y_u != y_v:
        return 0.0
    du, dv = g.deg[u], g.deg[v]
    if du <= 0 or dv <= 0:
        return 0.0
    return float(g.w[u, v] / np.sqrt(du * dv))


def save_graph(g: KnowledgeGraph, path) -> None:
    """CSV triplets ``u,v,weight`` (upper triangle, nonzero), tagged header."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# filter_tag={g.filter_tag} accounts={json.dumps(g.accounts)}\n")
        fh.write("u,v,weight\n")
        rows, cols = np.nonzero(np.triu(g.w, k=1))
        for u, v in zip(rows, cols):
            fh.write(f"{g.accounts[u]},{g.accounts[v]},{float(g.w[u, v])!r}\n")


def load_graph(path) -> KnowledgeGraph:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        meta = fh.readline().strip()
        if not meta.startswith("# filter_tag="):
            raise ValueError(f"{path}: missing filter_tag header line")
        tag, _, accounts_json = meta[len("# filter_tag="):].partition(" accounts=")
        accounts = json.loads(accounts_json)
        header = fh.readline().strip()
        if header != "u,v,weight":
            raise ValueError(f"{path}: expected 'u,v,weight' header")
        index = {a: i for i, a in enumerate(accounts)}
        w = np.zeros((len(accounts), len(accounts)))
        for line in fh:
            line = line.strip()
            if not line:
                continue
            u, v, weight = line.split(",")
            w[index[u], index[v]] = w[index[v], index[u]] = float(weight)
    return KnowledgeGraph(accounts, w, tag)
