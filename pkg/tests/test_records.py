import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperswap.records import (
    Checkpoint,
    JsonlSink,
    decode_checkpoint,
    dumps_jsonl,
    encode_checkpoint,
    load_checkpoint,
    read_jsonl,
    save_checkpoint,
    write_atomic,
)


@given(
    st.integers(0, 2**32 - 1),
    st.integers(0, 100),
    st.integers(0, 2**63),
    st.lists(st.integers(1, 1000), min_size=1, max_size=5),
    st.lists(st.floats(allow_nan=False), max_size=50),
)
def test_checkpoint_round_trip(rid, slot, step, sizes, weights):
    ck = Checkpoint(rid, slot, step, tuple(sizes), np.array(weights, dtype=np.float64))
    back = decode_checkpoint(encode_checkpoint(ck))
    assert (back.replica_id, back.slot, back.step, back.layer_sizes) == (rid, slot, step, tuple(sizes))
    assert back.weights.tobytes() == ck.weights.tobytes()


def test_checkpoint_layout():
    buf = encode_checkpoint(Checkpoint(7, 2, 300, (2, 4, 2), np.array([1.5, -2.0])))
    assert buf[:8] == b"HSWPCKPT"
    assert len(buf) == 32 + 4 * 3 + 8 + 8 * 2
    assert np.frombuffer(buf[-16:], "<f8").tolist() == [1.5, -2.0]


def test_checkpoint_corruption():
    buf = encode_checkpoint(Checkpoint(0, 0, 0, (3,), np.arange(3.0)))
    with pytest.raises(ValueError, match="magic"):
        decode_checkpoint(b"XXXXXXXX" + buf[8:])
    with pytest.raises(ValueError, match="expected 24"):
        decode_checkpoint(buf[:-1])
    with pytest.raises(ValueError, match="header"):
        decode_checkpoint(buf[:10])
    with pytest.raises(ValueError, match="version"):
        decode_checkpoint(buf[:8] + (9).to_bytes(4, "little") + buf[12:])


def test_save_load(tmp_path):
    ck = Checkpoint(1, 1, 10, (2,), np.array([0.25, 4.0]))
    save_checkpoint(tmp_path / "a" / "r1.ckpt", ck)
    back = load_checkpoint(tmp_path / "a" / "r1.ckpt")
    assert back.weights.tolist() == [0.25, 4.0]


def test_write_atomic_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "f.txt"
    write_atomic(p, "one")
    write_atomic(p, b"two")
    assert p.read_text() == "two"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_write_atomic_failure_keeps_old(tmp_path):
    p = tmp_path / "f.txt"
    write_atomic(p, "old")
    with pytest.raises(TypeError):
        write_atomic(p, 12345)
    assert p.read_text() == "old"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_jsonl(tmp_path):
    rows = [{"a": 1, "b": 0.5}, {"a": 2, "b": float("inf")}]
    p = tmp_path / "m.jsonl"
    write_atomic(p, dumps_jsonl(rows))
    assert read_jsonl(p) == rows


def test_sink_commit_and_abandon(tmp_path):
    s = JsonlSink(tmp_path / "m.jsonl")
    s.write({"x": 1})
    assert not (tmp_path / "m.jsonl").exists()
    s.commit()
    assert read_jsonl(tmp_path / "m.jsonl") == [{"x": 1}]
    s = JsonlSink(tmp_path / "e.jsonl")
    s.write({"y": 2})
    dest = s.abandon()
    assert dest.name == "e.partial.jsonl"
    assert not (tmp_path / "e.jsonl").exists()
    assert read_jsonl(dest) == [{"y": 2}]
