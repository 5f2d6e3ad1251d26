"""Variational EM joining the sequence model and the assignment field.

Starting from a pretrained sequence model, the unary scorer is fitted to
k-means clusters of the account embeddings. Each EM loop then alternates an
E-step (mean-field fixed-point sweeps, with any revealed accounts clamped to
one-hot beliefs) and an M-step that ascends

    sum_S log p(S | E)  +  lambda * sum_u sum_m Q_u(m) log softmax_m(theta_u)

over the embeddings, the encoder/decoder weights and the scorer, with the
beliefs Q held fixed. The second term is the tractable surrogate for the
expected assignment log-probability: the partition function of the full
field is bounded by the best pairwise score (a constant here) plus the
factorized unary partition, so the cross-entropy of the unary softmax
against Q is a valid lower bound up to constants; ``check_prop1_bound``
verifies the inequality numerically on enumerable instances. A final E-step
after the last M-step produces the beliefs that the detection scores are
read from, so a single loop is genuinely different from the E-step-only
(post-processing) mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from . import autodiff as ad
from .autodiff import Tensor
from .crf import (
    CrfParams,
    MeanField,
    UnaryScorer,
    enumerate_assignments,
    estep_converge,
    log_partition_bruteforce,
    softmax_init,
)
from .events import Dataset, train_val_test_split
from .graph import KnowledgeGraph
from .pointprocess import SequenceModel, TrainingDiverged

__all__ = [
    "EmConfig",
    "DetectionResult",
    "kmeans",
    "initialize",
    "m_step_objective",
    "m_step_gradients",
    "check_prop1_bound",
    "run_em",
    "select_group_count",
    "identify_coordinated_group",
]


@dataclass
class EmConfig:
    n_groups: int = 2
    n_loops: int = 1            # pick from {1, 2, 3} on validation data
    estep_only: bool = False    # single E-step as pure post-processing
    m_step_epochs: int = 50
    m_step_lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 64
    patience: int = 8
    estep_tol: float = 1e-6
    estep_max_iter: int = 10
    estep_schedule: str = "jacobi"
    lambda_balance: float = 1.0
    threshold: float = 0.5
    fractions: tuple = (0.70, 0.15, 0.15)
    scorer_hidden: int = 64
    scorer_weight_decay: float = 1e-3
    seed: int = 0
    coordinated_heuristic: str = "auto"  # auto | smaller_cluster | revealed_labels

    def __post_init__(self):
        if self.n_loops < 1:
            raise ValueError("n_loops must be >= 1")
        if self.lambda_balance <= 0:
            raise ValueError("lambda_balance must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d


@dataclass
class DetectionResult:
    accounts: list
    mean_field: MeanField
    scores: np.ndarray        # coordinated-group probability per account
    labels: np.ndarray        # scores >= threshold
    group_of: np.ndarray      # argmax group per account
    coordinated_group: int
    revealed_mask: np.ndarray
    history: list = field(default_factory=list)


# ---- clustering ----

def _kpp_seeds(X, k, rng):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            pick = int(rng.integers(n))
        centers[j] = X[pick]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, centers, k, max_iter):
    labels = None
    for _ in range(max_iter):
        d2 = (
            (X * X).sum(axis=1)[:, None]
            - 2.0 * X @ centers.T
            + (centers * centers).sum(axis=1)[None, :]
        )
        new_labels = d2.argmin(axis=1)
        if np.any(np.bincount(new_labels, minlength=k) == 0):
            return None, None, np.inf  # empty cluster: abandon this start
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        centers = np.stack([X[labels == j].mean(axis=0) for j in range(k)])
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels, centers, inertia


def kmeans(X, k, seed: int, max_iter: int = 300, n_init: int = 10, restarts: int = 10):
    """Best of ``n_init`` Lloyd runs from k-means++ seeds (lowest inertia).

    Deterministic given ``seed``. A start that produces an empty cluster is
    abandoned and replaced from the continuing random stream, up to
    ``restarts`` extra attempts beyond the planned starts.
    """
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= k <= len(X):
        raise ValueError(f"cannot place {k} clusters on {len(X)} points")
    rng = np.random.default_rng(seed)
    best = (None, None, np.inf)
    completed = 0
    for attempt in range(n_init + restarts):
        labels, centers, inertia = _lloyd(X, _kpp_seeds(X, k, rng), k, max_iter)
        if labels is None:
            continue
        completed += 1
        if inertia < best[2]:
            best = (labels, centers, inertia)
        if completed >= n_init:
            break
    if best[0] is None:
        raise RuntimeError(f"k-means kept producing empty clusters over {n_init + restarts} starts")
    return best[0], best[1]


# ---- initialization ----

def _align_to_revealed(labels, n_groups, rows, groups):
    """Permute cluster indices to best agree with revealed group labels.

    Cluster numbering out of k-means is arbitrary; when beliefs will be
    clamped to revealed labels the initialization must not fight them.
    """
    from itertools import permutations

    best_perm, best_hits = None, -1
    for perm in permutations(range(n_groups)):
        hits = sum(1 for r, g_ in zip(rows, groups) if perm[labels[r]] == g_)
        if hits > best_hits:
            best_perm, best_hits = perm, hits
    return np.asarray(best_perm, dtype=np.intp)[labels]


def initialize(
    pretrained: SequenceModel,
    n_groups: int,
    seed: int,
    graph: KnowledgeGraph | None = None,
    hidden: int = 64,
    fit_epochs: int = 300,
    fit_tol: float = 1e-7,
    fit_weight_decay: float = 1e-3,
    align_rows=None,
    align_groups=None,
) -> CrfParams:
    """Cluster the embeddings and fit the unary scorer to the clusters.

    The scorer is trained by cross-entropy against the one-hot k-means
    assignment until the regularized loss stops improving; the L2 term keeps
    the fitted scores calibrated instead of saturating, which leaves the
    pairwise messages room to act. With ``graph=None`` the field carries a
    zero prior graph (unary-only). ``align_rows``/``align_groups`` relabel
    the clusters to agree with revealed accounts (semi-supervised runs).
    """
    if n_groups < 2:
        raise ValueError("need at least 2 groups")
    E = pretrained.params["E"].data.copy()
    labels, _ = kmeans(E, n_groups, seed)
    if align_rows is not None and len(align_rows):
        labels = _align_to_revealed(labels, n_groups, align_rows, align_groups)
    scorer = UnaryScorer(E.shape[1], n_groups, hidden=hidden, seed=seed)
    onehot = np.eye(n_groups)[labels]
    opt = ad.Adam(scorer.params, lr=1e-2, weight_decay=fit_weight_decay)
    last = np.inf
    stale = 0
    for _ in range(fit_epochs):
        opt.zero_grad()
        theta = scorer.forward_t(Tensor(E))
        log_probs = theta - ad.logsumexp(theta, axis=1, keepdims=True)
        loss = -(Tensor(onehot) * log_probs).sum() * (1.0 / len(E))
        loss.backward()
        opt.step()
        if last - loss.item() < fit_tol * (1.0 + abs(loss.item())):
            stale += 1
            if stale >= 5:
                break
        else:
            stale = 0
        last = loss.item()
    if graph is None:
        graph = KnowledgeGraph(list(pretrained.accounts),
                               np.zeros((len(E), len(E))), "none")
    return CrfParams(scorer, graph, n_groups)


# ---- M-step objective ----

def _crossent_t(scorer: UnaryScorer, E: Tensor, Q: np.ndarray) -> Tensor:
    """sum_u sum_m Q_u(m) log softmax_m(theta_u); gradient flows into E too."""
    theta = scorer.forward_t(E)
    log_probs = theta - ad.logsumexp(theta, axis=1, keepdims=True)
    return (Tensor(Q) * log_probs).sum()


def m_step_objective(batch, Q: np.ndarray, model: SequenceModel,
                     crf: CrfParams, lambda_balance: float = 1.0) -> float:
    """Summed sequence log-likelihood plus the weighted surrogate term."""
    ll = sum(model.log_likelihood(s) for s in batch)
    ce = _crossent_t(crf.scorer, Tensor(model.params["E"].data), Q).item()
    return ll + lambda_balance * ce


def m_step_gradients(batch, Q: np.ndarray, model: SequenceModel,
                     crf: CrfParams, lambda_balance: float = 1.0) -> dict:
    """Exact gradients of the objective; scorer keys prefixed ``unary_``."""
    model.zero_grad()
    crf.scorer.zero_grad()
    for s in batch:
        mark, time = model._ll_terms_t(s)
        (mark + time).backward()
    (_crossent_t(crf.scorer, model.params["E"], Q) * lambda_balance).backward()
    grads = {
        k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for k, t in model.params.items()
    }
    for k, t in crf.scorer.params.items():
        grads[f"unary_{k}"] = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
    model.zero_grad()
    crf.scorer.zero_grad()
    return grads


def check_prop1_bound(crf: CrfParams, E: np.ndarray) -> tuple:
    """Verify log Z <= max_Y pairwise(Y) + sum_u log sum_m exp(theta_u(m)).

    Returns (lhs, rhs) and raises if the inequality fails. Equality holds
    when all pairwise weights vanish.
    """
    lhs = log_partition_bruteforce(crf, E)
    theta = crf.unary(E)
    B = crf.coupling()
    n = len(theta)
    Y_all = enumerate_assignments(n, crf.n_groups)
    pair_scores = np.zeros(len(Y_all))
    for u in range(n):
        for v in range(u + 1, n):
            if B[u, v] != 0.0:
                pair_scores += B[u, v] * (Y_all[:, u] == Y_all[:, v])
    rhs = float(pair_scores.max() + np_logsumexp(theta, axis=1).sum())
    if lhs > rhs + 1e-9:
        raise AssertionError(f"partition-bound violation: {lhs} > {rhs}")
    return lhs, rhs


# ---- EM driver ----

def _val_objective(model, scorer, val_seqs, Q, lam) -> float:
    ll = sum(model.log_likelihood(s) for s in val_seqs)
    ce = _crossent_t(scorer, Tensor(model.params["E"].data), Q).item()
    return ll + lam * ce


def _m_step(model, crf, train_seqs, val_seqs, Q, cfg: EmConfig, rng):
    """Ascend the surrogate objective; early stop on the validation version."""
    params = dict(model.params)
    for k, t in crf.scorer.params.items():
        params[f"unary_{k}"] = t
    opt = ad.Adam(params, lr=cfg.m_step_lr, weight_decay=cfg.weight_decay)
    before = _val_objective(model, crf.scorer, val_seqs, Q, cfg.lambda_balance)
    best_val = before
    best = ad.snapshot(params)
    bad = 0
    n_train = len(train_seqs)
    for epoch in range(cfg.m_step_epochs):
        order = rng.permutation(n_train)
        for lo in range(0, n_train, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            for i in idx:
                mark, time = model._ll_terms_t(train_seqs[i])
                loss = (mark + time) * -1.0
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"non-finite loss in M-step epoch {epoch}")
                loss.backward()
            # spread the account-level term across the epoch's batches
            ce_weight = cfg.lambda_balance * len(idx) / n_train
            (_crossent_t(crf.scorer, model.params["E"], Q) * -ce_weight).backward()
            opt.step()
        value = _val_objective(model, crf.scorer, val_seqs, Q, cfg.lambda_balance)
        if not np.isfinite(value):
            raise TrainingDiverged(f"non-finite validation objective in M-step epoch {epoch}")
        if value > best_val + 1e-12:
            best_val = value
            best = ad.snapshot(params)
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    ad.restore(params, best)
    return before, best_val


def run_em(
    d: Dataset,
    g: KnowledgeGraph,
    pretrained: SequenceModel,
    cfg: EmConfig,
    revealed: dict | None = None,
) -> DetectionResult:
    """Full detection: initialize, alternate E/M, score the coordinated group.

    ``revealed`` maps account keys to group indices; those beliefs are
    clamped one-hot through every E-step and their rows are flagged in the
    result so evaluation can exclude them.
    """
    accounts = d.registry.keys
    if g.accounts != accounts or pretrained.accounts != accounts:
        raise ValueError("dataset, graph and model must share the account registry")

    clamp_rows, clamp_groups = [], []
    if revealed:
        for account, group in revealed.items():
            clamp_rows.append(d.registry.index(account))
            clamp_groups.append(int(group))
    clamp_rows = np.asarray(clamp_rows, dtype=np.intp)
    clamp_groups = np.asarray(clamp_groups, dtype=np.intp)

    model = pretrained.copy()
    crf = initialize(model, cfg.n_groups, cfg.seed, graph=g, hidden=cfg.scorer_hidden,
                     fit_weight_decay=cfg.scorer_weight_decay,
                     align_rows=clamp_rows, align_groups=clamp_groups)

    train_ds, val_ds, _ = train_val_test_split(d, cfg.fractions, cfg.seed)
    train_seqs = train_ds.sequences or d.sequences
    val_seqs = val_ds.sequences or train_seqs

    def estep(init_mf):
        mf, iters = estep_converge(
            crf, model.params["E"].data, init_mf,
            tol=cfg.estep_tol, max_iter=cfg.estep_max_iter,
            schedule=cfg.estep_schedule,
        )
        return mf, iters

    history = []
    mf = softmax_init(crf, model.params["E"].data, clamp_rows, clamp_groups)
    mf, iters = estep(mf)
    history.append({"loop": 0, "estep_iterations": iters})

    if not cfg.estep_only:
        rng = np.random.default_rng(cfg.seed + 1)
        for loop in range(1, cfg.n_loops + 1):
            before, after = _m_step(model, crf, train_seqs, val_seqs, mf.q, cfg, rng)
            mf, iters = estep(MeanField(mf.q.copy(), mf.clamped.copy()))
            history.append({
                "loop": loop,
                "estep_iterations": iters,
                "val_objective_before": before,
                "val_objective_after": after,
            })

    heuristic = cfg.coordinated_heuristic
    if heuristic == "auto":
        heuristic = "revealed_labels" if revealed else "smaller_cluster"
    coord = identify_coordinated_group(
        mf.q, heuristic, revealed_rows=clamp_rows, revealed_groups=clamp_groups
    )
    scores = mf.q[:, coord].copy()
    revealed_mask = np.zeros(len(accounts), dtype=bool)
    revealed_mask[clamp_rows] = True
    return DetectionResult(
        accounts=accounts,
        mean_field=mf,
        scores=scores,
        labels=(scores >= cfg.threshold).astype(np.intp),
        group_of=mf.q.argmax(axis=1),
        coordinated_group=int(coord),
        revealed_mask=revealed_mask,
        history=history,
    )


# ---- model selection and group identification ----

def select_group_count(pretrained: SequenceModel, candidates, seed: int = 0) -> int:
    """Group count whose k-means clustering maximizes the mean silhouette.

    Ties break toward the smaller count.
    """
    from .metrics import silhouette

    candidates = sorted(set(int(c) for c in candidates))
    if len(candidates) < 2:
        raise ValueError("need at least 2 candidate group counts")
    if candidates[0] < 2:
        raise ValueError("candidate group counts must be >= 2")
    E = pretrained.params["E"].data
    if np.allclose(E, E[0]):
        raise ValueError("degenerate embeddings: all accounts identical")
    best_m, best_score = None, -np.inf
    for m in candidates:
        labels, _ = kmeans(E, m, seed)
        score = silhouette(E, labels)
        if score > best_score:
            best_m, best_score = m, score
    return best_m


def identify_coordinated_group(
    q: np.ndarray,
    heuristic: str = "smaller_cluster",
    revealed_rows=None,
    revealed_groups=None,
    positive_label: int = 1,
) -> int:
    """Map a group index to the coordinated class.

    ``smaller_cluster`` (binary only) picks the group with smaller expected
    mass; ``revealed_labels`` picks the group most often assigned to the
    revealed coordinated accounts. Exact ties raise.
    """
    q = np.asarray(q, dtype=np.float64)
    if heuristic == "smaller_cluster":
        if q.shape[1] != 2:
            raise ValueError("smaller_cluster requires exactly 2 groups")
        masses = q.sum(axis=0)
        if masses[0] == masses[1]:
            raise ValueError("group masses tie exactly; pick the group explicitly")
        return int(masses.argmin())
    if heuristic == "revealed_labels":
        if revealed_rows is None or len(revealed_rows) == 0:
            raise ValueError("revealed_labels heuristic needs revealed accounts")
        rows = np.asarray(revealed_rows, dtype=np.intp)
        groups = np.asarray(revealed_groups, dtype=np.intp)
        coord_rows = rows[groups == positive_label]
        if len(coord_rows) == 0:
            raise ValueError("no revealed coordinated accounts")
        votes = np.bincount(q[coord_rows].argmax(axis=1), minlength=q.shape[1])
        top = votes.max()
        winners = np.nonzero(votes == top)[0]
        if len(winners) > 1:
            raise ValueError("revealed accounts split evenly; pick the group explicitly")
        return int(winners[0])
    raise ValueError(f"unknown heuristic {heuristic!r}")
