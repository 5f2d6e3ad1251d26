"""Conditional random field over group assignments, with mean-field inference.

The potential of an assignment Y is a sum of learnable unary scores (one
feed-forward scorer applied per account embedding) and fixed pairwise
rewards B_uv = w_uv / sqrt(d_u d_v) paid once per unordered co-appearing
pair with equal labels:

    Phi(Y) = sum_u theta_u(y_u) + sum_{u<v} B_uv * 1(y_u = y_v)

P(Y) proportional to exp(Phi(Y)) is intractable in general, so inference
fits a fully factorized distribution Q by coordinate ascent on the
free-energy functional E_Q[Phi] + H(Q). The row update is

    Q_u = softmax_m( theta_u(m) + sum_v B_uv Q_v(m) ),

whose fixed points are exactly the stationary points of the functional
under this unordered-pair counting. A Jacobi schedule updates all rows from
a snapshot; the Gauss-Seidel schedule updates rows in place and never
decreases the free energy. Exhaustive-enumeration versions of the partition
function and marginals serve as test oracles for small instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from .autodiff import Tensor
from .graph import KnowledgeGraph

__all__ = [
    "UnaryScorer",
    "CrfParams",
    "MeanField",
    "potential",
    "enumerate_assignments",
    "log_partition_bruteforce",
    "marginals_bruteforce",
    "estep_update",
    "estep_converge",
    "mean_field_free_energy",
]

ENUMERATION_LIMIT = 10 ** 6


class UnaryScorer:
    """Two-layer feed-forward map from an account embedding to M group scores."""

    def __init__(self, d_embed: int, n_groups: int, hidden: int = 64, seed: int = 0):
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(6.0 / (d_embed + hidden))
        lim2 = np.sqrt(6.0 / (hidden + n_groups))
        self.n_groups = n_groups
        self.params = {
            "W1": Tensor(rng.uniform(-lim1, lim1, size=(d_embed, hidden))),
            "b1": Tensor(np.zeros(hidden)),
            "W2": Tensor(rng.uniform(-lim2, lim2, size=(hidden, n_groups))),
            "b2": Tensor(np.zeros(n_groups)),
        }

    def forward_t(self, E: Tensor) -> Tensor:
        h = (E @ self.params["W1"] + self.params["b1"]).tanh()
        return h @ self.params["W2"] + self.params["b2"]

    def scores(self, E: np.ndarray) -> np.ndarray:
        """(V, M) score matrix, no gradient tracking."""
        return self.forward_t(Tensor(np.asarray(E, dtype=np.float64))).data

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


@dataclass
class CrfParams:
    scorer: UnaryScorer
    graph: KnowledgeGraph
    n_groups: int

    def __post_init__(self):
        if self.n_groups < 2:
            raise ValueError("need at least 2 groups")
        if self.scorer.n_groups != self.n_groups:
            raise ValueError("scorer output width must equal the group count")

    def unary(self, E: np.ndarray) -> np.ndarray:
        return self.scorer.scores(E)

    def coupling(self) -> np.ndarray:
        return self.graph.coupling()


@dataclass
class MeanField:
    """Per-account categorical beliefs; clamped rows are held fixed."""

    q: np.ndarray                    # (V, M), rows on the simplex
    clamped: np.ndarray | None = None  # (V,) bool

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        if np.any(self.q < 0):
            raise ValueError("beliefs must be non-negative")
        if np.max(np.abs(self.q.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("belief rows must sum to 1")
        if self.clamped is None:
            self.clamped = np.zeros(len(self.q), dtype=bool)

    @property
    def n_groups(self) -> int:
        return self.q.shape[1]


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def potential(Y, crf: CrfParams, E: np.ndarray) -> float:
    """Phi(Y): unary scores plus one pairwise reward per unordered pair."""
    Y = np.asarray(Y, dtype=np.intp)
    theta = crf.unary(E)
    B = crf.coupling()
    same = Y[:, None] == Y[None, :]
    return float(theta[np.arange(len(Y)), Y].sum() + 0.5 * (B * same).sum())


def enumerate_assignments(n: int, m: int) -> np.ndarray:
    """All m**n assignments as an (m**n, n) integer array."""
    if m ** n > ENUMERATION_LIMIT:
        raise ValueError(f"instance too large to enumerate: {m}**{n}")
    grids = np.meshgrid(*([np.arange(m)] * n), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _all_potentials(crf: CrfParams, E: np.ndarray) -> np.ndarray:
    theta = crf.unary(E)
    B = crf.coupling()
    n = len(theta)
    Y_all = enumerate_assignments(n, crf.n_groups)
    phi = theta[np.arange(n), Y_all].sum(axis=1)
    for u in range(n):
        for v in range(u + 1, n):
            if B[u, v] != 0.0:
                phi = phi + B[u, v] * (Y_all[:, u] == Y_all[:, v])
    return phi


def log_partition_bruteforce(crf: CrfParams, E: np.ndarray) -> float:
    """log sum_Y exp(Phi(Y)) by exhaustive enumeration (small instances only)."""
    return float(np_logsumexp(_all_potentials(crf, E)))


def marginals_bruteforce(crf: CrfParams, E: np.ndarray) -> MeanField:
    """Exact per-account marginals of P(Y) by enumeration."""
    phi = _all_potentials(crf, E)
    weights = np.exp(phi - np_logsumexp(phi))
    n = len(crf.unary(E))
    Y_all = enumerate_assignments(n, crf.n_groups)
    q = np.zeros((n, crf.n_groups))
    for m in range(crf.n_groups):
        q[:, m] = weights @ (Y_all == m)
    q /= q.sum(axis=1, keepdims=True)
    return MeanField(q)


def _sweep(q, theta, B, clamped, schedule):
    if schedule == "jacobi":
        out = _row_softmax(theta + B @ q)
        out[clamped] = q[clamped]
        return out
    if schedule == "gauss_seidel":
        out = q.copy()
        for u in range(len(q)):
            if clamped[u]:
                continue
            logits = theta[u] + B[u] @ out
            z = logits - logits.max()
            e = np.exp(z)
            out[u] = e / e.sum()
        return out
    raise ValueError(f"unknown schedule {schedule!r}")


def estep_update(mf: MeanField, crf: CrfParams, E: np.ndarray,
                 schedule: str = "jacobi") -> MeanField:
    """One full sweep of the fixed-point update; clamped rows are skipped."""
    theta = crf.unary(E)
    B = crf.coupling()
    return MeanField(_sweep(mf.q, theta, B, mf.clamped, schedule), mf.clamped.copy())


def estep_converge(crf: CrfParams, E: np.ndarray, init: MeanField,
                   tol: float = 1e-6, max_iter: int = 10,
                   schedule: str = "jacobi") -> tuple:
    """Sweep until the max row-wise L-inf change drops below ``tol``.

    Returns (MeanField, iterations used). Default iteration cap is 10.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    theta = crf.unary(E)
    B = crf.coupling()
    q = init.q.copy()
    clamped = init.clamped.copy()
    iterations = 0
    for iterations in range(1, max_iter + 1):
        q_next = _sweep(q, theta, B, clamped, schedule)
        delta = np.max(np.abs(q_next - q)) if len(q) else 0.0
        q = q_next
        if delta < tol:
            break
    return MeanField(q, clamped), iterations


def mean_field_free_energy(mf: MeanField, crf: CrfParams, E: np.ndarray) -> float:
    """E_Q[Phi] + H(Q); log Z minus this value is the exact KL(Q || P)."""
    theta = crf.unary(E)
    B = crf.coupling()
    q = mf.q
    expected_unary = float((q * theta).sum())
    expected_pair = 0.5 * float((B * (q @ q.T)).sum())  # B has zero diagonal
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0, q * np.log(q), 0.0)
    entropy = -float(plogp.sum())
    return expected_unary + expected_pair + entropy


def softmax_init(crf: CrfParams, E: np.ndarray, clamp_rows=None,
                 clamp_groups=None) -> MeanField:
    """Unary-only warm start: rows are softmax(theta_u), clamps one-hot."""
    q = _row_softmax(crf.unary(E))
    clamped = np.zeros(len(q), dtype=bool)
    if clamp_rows is not None and len(clamp_rows):
        rows = np.asarray(clamp_rows, dtype=np.intp)
        groups = np.asarray(clamp_groups, dtype=np.intp)
        if np.any(groups < 0) or np.any(groups >= crf.n_groups):
            raise ValueError("clamp groups out of range")
        q[rows] = 0.0
        q[rows, groups] = 1.0
        clamped[rows] = True
    return MeanField(q, clamped)
