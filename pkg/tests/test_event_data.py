import numpy as np
import pytest

from coact.events import (
    DataError,
    Dataset,
    Event,
    EventSequence,
    load_dataset,
    load_labels,
    save_dataset,
    save_labels,
    split_long_sequences,
    train_val_test_split,
)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_load_jsonl_basic(tmp_path):
    p = write(tmp_path, "d.jsonl",
              '{"seq_id": "a", "events": [{"account": "u", "t": 1.0}, {"account": "v", "t": 2.0}]}\n')
    d = load_dataset(p)
    assert len(d.sequences) == 1
    assert len(d.registry) == 2
    assert [e.account for e in d.sequences[0].events] == ["u", "v"]


def test_load_sorts_events(tmp_path):
    p = write(tmp_path, "d.jsonl",
              '{"seq_id": "a", "events": [{"account": "v", "t": 2.0}, {"account": "u", "t": 1.0}]}\n')
    d = load_dataset(p)
    assert [e.t for e in d.sequences[0].events] == [1.0, 2.0]


def test_negative_timestamp_rejected(tmp_path):
    p = write(tmp_path, "d.jsonl",
              '{"seq_id": "a", "events": [{"account": "u", "t": -1.0}]}\n')
    with pytest.raises(DataError, match="negative timestamp"):
        load_dataset(p)


def test_empty_file_rejected(tmp_path):
    p = write(tmp_path, "d.jsonl", "")
    with pytest.raises(DataError):
        load_dataset(p)


def test_parse_error_carries_line_number(tmp_path):
    p = write(tmp_path, "d.jsonl",
              '{"seq_id": "a", "events": [{"account": "u", "t": 1.0}]}\n{oops\n')
    with pytest.raises(DataError, match=":2"):
        load_dataset(p)


def test_load_csv(tmp_path):
    p = write(tmp_path, "d.csv", "seq_id,account,t\ns1,u,1.0\ns1,v,2.5\ns2,w,0.0\n")
    d = load_dataset(p, format="csv")
    assert len(d.sequences) == 2
    assert d.sequences[0].seq_id == "s1"
    assert d.sequences[1].events[0].t == 0.0


def test_csv_header_required(tmp_path):
    p = write(tmp_path, "d.csv", "s1,u,1.0\n")
    with pytest.raises(DataError, match="header"):
        load_dataset(p, format="csv")


def test_min_account_count(tmp_path):
    lines = [
        '{"seq_id": "a", "events": [{"account": "u", "t": 1.0}, {"account": "rare", "t": 2.0}]}',
        '{"seq_id": "b", "events": [{"account": "u", "t": 1.0}]}',
    ]
    p = write(tmp_path, "d.jsonl", "\n".join(lines) + "\n")
    d = load_dataset(p, min_account_count=2)
    assert "rare" not in d.registry
    assert len(d.registry) == 1


def test_duplicate_events_retained(tmp_path):
    p = write(tmp_path, "d.jsonl",
              '{"seq_id": "a", "events": [{"account": "u", "t": 1.0}, {"account": "u", "t": 1.0}]}\n')
    d = load_dataset(p)
    assert len(d.sequences[0].events) == 2


def test_round_trip(tmp_path):
    p = write(tmp_path, "d.jsonl", "\n".join([
        '{"seq_id": "a", "events": [{"account": "v", "t": 2.0}, {"account": "u", "t": 1.25}]}',
        '{"seq_id": "b", "events": [{"account": "w", "t": 0.125}]}',
    ]) + "\n")
    d1 = load_dataset(p)
    out = tmp_path / "copy.jsonl"
    save_dataset(d1, out)
    d2 = load_dataset(out)
    assert d1 == d2
    # identical bytes load to identical registries
    out2 = tmp_path / "copy2.jsonl"
    save_dataset(d2, out2)
    assert out.read_bytes() == out2.read_bytes()


def test_labels_round_trip(tmp_path):
    labels = {"u": 0, "v": 1}
    p = tmp_path / "labels.csv"
    save_labels(labels, p)
    assert load_labels(p) == labels


def test_split_long_chunks():
    events = [Event("u", float(i)) for i in range(300)]
    d = Dataset.from_sequences([EventSequence("s", events)])
    out = split_long_sequences(d, 128)
    assert [len(s) for s in out.sequences] == [128, 128, 44]
    merged = [e for s in out.sequences for e in s.events]
    assert merged == d.sequences[0].events


def test_split_long_noop_below_limit():
    d = Dataset.from_sequences([EventSequence("s", [Event("u", float(i)) for i in range(5)])])
    out = split_long_sequences(d, 128)
    assert out.sequences[0].seq_id == "s"
    assert len(out.sequences) == 1


def test_split_long_remainder():
    d = Dataset.from_sequences([EventSequence("s", [Event("u", float(i)) for i in range(10)])])
    out = split_long_sequences(d, 3)
    assert [len(s) for s in out.sequences] == [3, 3, 3, 1]


def test_split_long_requires_min_two():
    d = Dataset.from_sequences([EventSequence("s", [Event("u", 0.0)])])
    with pytest.raises(ValueError):
        split_long_sequences(d, 1)


def test_split_preserves_counts():
    rng = np.random.default_rng(0)
    seqs = []
    for i in range(20):
        n = int(rng.integers(1, 40))
        ev = [Event(f"u{int(rng.integers(5))}", float(t)) for t in np.sort(rng.uniform(0, 10, n))]
        seqs.append(EventSequence(f"s{i}", ev))
    d = Dataset.from_sequences(seqs)
    out = split_long_sequences(d, 7)
    assert out.n_events() == d.n_events()
    def account_counts(ds):
        counts = {}
        for s in ds.sequences:
            for e in s.events:
                counts[e.account] = counts.get(e.account, 0) + 1
        return counts
    assert account_counts(out) == account_counts(d)


def make_dataset(n):
    return Dataset.from_sequences(
        [EventSequence(f"s{i}", [Event("u", float(i))]) for i in range(n)]
    )


def test_split_sizes():
    tr, va, te = train_val_test_split(make_dataset(100), (0.7, 0.15, 0.15), seed=1)
    assert (len(tr.sequences), len(va.sequences), len(te.sequences)) == (70, 15, 15)


def test_split_deterministic():
    d = make_dataset(50)
    a = train_val_test_split(d, (0.6, 0.2, 0.2), seed=5)
    b = train_val_test_split(d, (0.6, 0.2, 0.2), seed=5)
    for x, y in zip(a, b):
        assert [s.seq_id for s in x.sequences] == [s.seq_id for s in y.sequences]


def test_split_is_partition():
    d = make_dataset(41)
    tr, va, te = train_val_test_split(d, (0.7, 0.15, 0.15), seed=3)
    ids = [s.seq_id for part in (tr, va, te) for s in part.sequences]
    assert len(ids) == len(set(ids)) == 41


def test_split_rejects_oversum():
    with pytest.raises(ValueError):
        train_val_test_split(make_dataset(10), (0.8, 0.3, 0.1), seed=0)
