import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qkdsim.errors import FormatError
from qkdsim.tags import (
    TagStream,
    TimeTag,
    channel_of,
    from_binary,
    from_csv,
    read_tags,
    to_binary,
    to_csv,
    write_tags,
)

streams = st.lists(st.tuples(st.integers(0, 2**62), st.integers(0, 3)), max_size=100).map(
    lambda ev: TagStream(np.array(sorted(e[0] for e in ev), np.int64),
                         np.array([e[1] for e in ev], np.uint8))
)


@given(streams)
def test_binary_roundtrip(s):
    assert from_binary(to_binary(s)) == s


@given(streams)
def test_csv_roundtrip(s):
    assert from_csv(to_csv(s)) == s


def test_binary_layout():
    s = TagStream(np.array([1, 2**40]), np.array([3, 0]))
    data = to_binary(s)
    assert data[:4] == b"QTAG"
    assert struct.unpack_from("<H", data, 4)[0] == 1
    assert data[6:16] == bytes(10)
    assert len(data) == 16 + 2 * 9
    assert struct.unpack_from("<QB", data, 16) == (1, 3)


def test_binary_errors():
    good = to_binary(TagStream(np.array([5]), np.array([1])))
    with pytest.raises(FormatError):
        from_binary(b"XTAG" + good[4:])
    with pytest.raises(FormatError):
        from_binary(good[:-1])
    with pytest.raises(FormatError):
        from_binary(good[:8])
    bad_version = good[:4] + struct.pack("<H", 7) + good[6:]
    with pytest.raises(FormatError):
        from_binary(bad_version)


def test_unsorted_and_bad_channel_rejected():
    with pytest.raises(FormatError):
        from_csv(b"time_ps,channel\n5,0\n3,1\n")
    with pytest.raises(FormatError):
        from_csv(b"time_ps,channel\n5,4\n")
    with pytest.raises(FormatError):
        from_csv(b"t,c\n5,0\n")


def test_empty_csv():
    assert len(from_csv(b"time_ps,channel\n")) == 0


def test_file_dispatch(tmp_path):
    s = TagStream(np.array([10, 20, 30]), np.array([0, 1, 2]))
    for name in ("a.csv", "a.qtag"):
        p = tmp_path / name
        write_tags(p, s)
        assert read_tags(p) == s
    assert (tmp_path / "a.qtag").read_bytes()[:4] == b"QTAG"
    assert (tmp_path / "a.csv").read_bytes().startswith(b"time_ps,channel")


def test_time_tag_fields():
    tag = TimeTag(7, 3)
    assert (tag.basis, tag.outcome) == (1, 1)
    assert channel_of(1, 0) == 2
    with pytest.raises(FormatError):
        TimeTag(0, 4)


def test_window_and_counts():
    s = TagStream(np.arange(10) * 100, np.arange(10) % 4)
    w = s.window(200, 500)
    assert w.times.tolist() == [200, 300, 400]
    assert s.counts_per_channel().tolist() == [3, 3, 2, 2]
