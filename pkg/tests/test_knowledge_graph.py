import numpy as np
import pytest

from coact.events import Dataset, Event, EventSequence
from coact.graph import (
    KnowledgeGraph,
    co_occurrence,
    filter_power,
    filter_temporal_logic,
    load_graph,
    pairwise_potential,
    save_graph,
)


def seq(sid, *pairs):
    return EventSequence(sid, [Event(a, float(t)) for a, t in pairs])


def random_dataset(rng, n_accounts=8, n_sequences=12):
    accounts = [f"u{i}" for i in range(n_accounts)]
    seqs = []
    for i in range(n_sequences):
        n = int(rng.integers(1, 10))
        ev = [
            Event(accounts[int(rng.integers(n_accounts))], float(t))
            for t in np.sort(rng.uniform(0, 100, n))
        ]
        seqs.append(EventSequence(f"s{i}", ev))
    return Dataset.from_sequences(seqs)


def test_co_occurrence_example():
    d = Dataset.from_sequences([
        seq("s1", ("A", 0), ("B", 1), ("A", 2)),
        seq("s2", ("B", 0), ("C", 1)),
    ])
    g = co_occurrence(d)
    i = d.registry.index
    assert g.w[i("A"), i("B")] == 1  # duplicate A counts once
    assert g.w[i("B"), i("C")] == 1
    assert g.w[i("A"), i("C")] == 0


def test_co_occurrence_disjoint_zero():
    d = Dataset.from_sequences([seq("s1", ("A", 0)), seq("s2", ("B", 0))])
    g = co_occurrence(d)
    assert np.all(g.w == 0)


def test_co_occurrence_matches_bruteforce():
    rng = np.random.default_rng(7)
    for _ in range(50):
        d = random_dataset(rng)
        g = co_occurrence(d)
        brute = np.zeros_like(g.w)
        for s in d.sequences:
            present = {d.registry.index(e.account) for e in s.events}
            for i in present:
                for j in present:
                    if i != j:
                        brute[i, j] += 1
        # brute counted each ordered pair once per sequence
        assert np.array_equal(g.w, brute)


def test_filter_power_example():
    d = Dataset.from_sequences([seq(f"s{k}", ("A", 0), ("B", 1)) for k in range(2)])
    g = filter_power(co_occurrence(d), 3.0)
    i = d.registry.index
    assert g.w[i("A"), i("B")] == 8.0
    assert g.filter_tag == "power(p=3)"


def test_filter_power_identity():
    rng = np.random.default_rng(1)
    d = random_dataset(rng)
    g = co_occurrence(d)
    assert np.array_equal(filter_power(g, 1.0).w, g.w)


def test_filter_power_matches_elementwise():
    rng = np.random.default_rng(2)
    for _ in range(10):
        d = random_dataset(rng)
        g = co_occurrence(d)
        assert np.array_equal(filter_power(g, 2.0).w, g.w * g.w)


def test_filter_power_rejects_small_exponent():
    d = Dataset.from_sequences([seq("s", ("A", 0), ("B", 1))])
    with pytest.raises(ValueError):
        filter_power(co_occurrence(d), 0.5)


def test_filter_power_preserves_order():
    rng = np.random.default_rng(3)
    d = random_dataset(rng, n_accounts=6, n_sequences=30)
    g = co_occurrence(d)
    gp = filter_power(g, 3.0)
    iu = np.triu_indices(g.n, k=1)
    order_raw = np.argsort(g.w[iu], kind="stable")
    order_pow = np.argsort(gp.w[iu], kind="stable")
    assert np.array_equal(order_raw, order_pow)


def test_temporal_logic_worked_example():
    # u active [0, 50000], v active [10000, 60000]: overlap 40000 <= 43200
    d = Dataset.from_sequences([
        seq("s", ("u", 0), ("u", 50_000), ("v", 10_000), ("v", 60_000)),
    ])
    g = filter_temporal_logic(d, 43_200.0)
    i = d.registry.index
    assert g.w[i("u"), i("v")] == 0.0
    g2 = filter_temporal_logic(d, 39_999.0)
    assert g2.w[i("u"), i("v")] == 1.0


def test_temporal_logic_full_overlap_counted():
    d = Dataset.from_sequences([
        seq("s", ("u", 0), ("v", 0), ("u", 100_000), ("v", 100_000)),
    ])
    g = filter_temporal_logic(d, 43_200.0)
    i = d.registry.index
    assert g.w[i("u"), i("v")] == 1.0


def test_temporal_logic_point_interval_never_counts():
    d = Dataset.from_sequences([
        seq("s", ("u", 5), ("v", 0), ("v", 100_000)),
    ])
    g = filter_temporal_logic(d, 1e-9)
    i = d.registry.index
    assert g.w[i("u"), i("v")] == 0.0


def test_temporal_logic_rejects_negative_threshold():
    d = Dataset.from_sequences([seq("s", ("u", 0))])
    with pytest.raises(ValueError):
        filter_temporal_logic(d, -1.0)


def test_temporal_logic_matches_bruteforce():
    rng = np.random.default_rng(11)
    for trial in range(50):
        d = random_dataset(rng)
        c = float(rng.uniform(0, 50))
        g = filter_temporal_logic(d, c)
        V = len(d.registry)
        brute = np.zeros((V, V))
        for s in d.sequences:
            first, last = {}, {}
            for e in s.events:
                k = d.registry.index(e.account)
                first.setdefault(k, e.t)
                last[k] = e.t
            keys = sorted(first)
            for a in keys:
                for b in keys:
                    if a == b:
                        continue
                    if min(last[a], last[b]) - max(first[a], first[b]) > c:
                        brute[a, b] += 1
        assert np.array_equal(g.w, brute)


def test_temporal_logic_bounded_by_co_occurrence():
    rng = np.random.default_rng(13)
    d = random_dataset(rng)
    g0 = co_occurrence(d)
    gt = filter_temporal_logic(d, 0.0)
    assert np.all(gt.w <= g0.w)


def test_pairwise_potential_values():
    g = KnowledgeGraph(["a", "b"], np.array([[0.0, 4.0], [4.0, 0.0]]), "none")
    assert pairwise_potential(g, 0, 1, 1, 1) == 1.0
    assert pairwise_potential(g, 0, 1, 0, 1) == 0.0


def test_pairwise_potential_isolated_node():
    g = KnowledgeGraph(["a", "b", "c"],
                       np.array([[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
                       "none")
    assert pairwise_potential(g, 0, 2, 1, 1) == 0.0


def test_pairwise_potential_symmetry():
    rng = np.random.default_rng(5)
    w = rng.uniform(0, 3, (5, 5))
    w = np.triu(w, 1)
    w = w + w.T
    g = KnowledgeGraph([f"u{i}" for i in range(5)], w, "none")
    for _ in range(50):
        u, v = rng.integers(5, size=2)
        a, b = rng.integers(3, size=2)
        assert pairwise_potential(g, u, v, a, b) == pairwise_potential(g, v, u, b, a)


def test_graph_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    d = random_dataset(rng)
    g = filter_power(co_occurrence(d), 3.0)
    p = tmp_path / "graph.csv"
    save_graph(g, p)
    g2 = load_graph(p)
    assert g2.accounts == g.accounts
    assert g2.filter_tag == g.filter_tag
    assert np.allclose(g2.w, g.w)


def test_graph_validation_rejects_asymmetry():
    with pytest.raises(ValueError):
        KnowledgeGraph(["a", "b"], np.array([[0.0, 1.0], [2.0, 0.0]]), "none")
