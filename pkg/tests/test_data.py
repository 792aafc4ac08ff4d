import gzip

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from disco.data import (
    EmptyFileError,
    MalformedLineError,
    NonAscendingIndexError,
    PartitionMode,
    SparseDataset,
    block_boundaries,
    load_libsvm,
    parse_libsvm,
    partition,
    reassemble,
    write_libsvm,
)


def test_parse_worked_example():
    ds = parse_libsvm("1 1:0.5 3:2.0\n-1 2:1.0")
    assert (ds.n, ds.d, ds.nnz) == (2, 3, 3)
    np.testing.assert_array_equal(ds.y, [1.0, -1.0])
    np.testing.assert_array_equal(ds.X.toarray(), [[0.5, 0.0], [0.0, 1.0], [2.0, 0.0]])


def test_parse_empty_input():
    with pytest.raises(EmptyFileError):
        parse_libsvm("")
    with pytest.raises(EmptyFileError):
        parse_libsvm("\n  \n")


def test_parse_non_ascending_reports_line():
    with pytest.raises(NonAscendingIndexError) as info:
        parse_libsvm("1 3:1 2:1")
    assert info.value.line == 1
    with pytest.raises(NonAscendingIndexError) as info:
        parse_libsvm("1 1:1\n-1 2:1 2:3")
    assert info.value.line == 2


@pytest.mark.parametrize("text, line", [
    ("abc 1:1", 1),
    ("1 1:1\n1 2-3", 2),
    ("1 0:4", 1),
    ("1 1:x", 1),
])
def test_parse_malformed_lines(text, line):
    with pytest.raises(MalformedLineError) as info:
        parse_libsvm(text)
    assert info.value.line == line


def test_parse_keeps_decimals_exactly():
    ds = parse_libsvm("0.1 2:0.30000000000000004 5:1e-300\n")
    assert ds.y[0] == 0.1
    assert ds.X[1, 0] == 0.30000000000000004
    assert ds.X[4, 0] == 1e-300


def test_load_plain_and_compressed_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    X = sp.random(9, 13, density=0.3, random_state=rng, format="lil")
    # make sure the last feature is present so d survives the round trip
    X[8, 0] = 0.25
    ds = SparseDataset(X, rng.choice([-1.0, 1.0], size=13))
    for name in ("a.svm", "a.svm.gz", "a.svm.bz2"):
        path = tmp_path / name
        write_libsvm(ds, path)
        back = load_libsvm(path)
        assert back.d == ds.d and back.n == ds.n
        assert (back.X != ds.X).nnz == 0
        np.testing.assert_array_equal(back.y, ds.y)
    with gzip.open(tmp_path / "a.svm.gz", "rt") as fh:
        assert fh.readline().split()[0] in ("1", "-1")


def test_block_boundaries_are_balanced():
    np.testing.assert_array_equal(np.diff(block_boundaries(10, 4)), [3, 3, 2, 2])
    with pytest.raises(ValueError):
        block_boundaries(3, 4)


def _random_dataset(seed, d, n, density=0.4):
    rng = np.random.default_rng(seed)
    X = sp.random(d, n, density=density, random_state=rng, format="csc")
    return SparseDataset(X, rng.standard_normal(n))


def test_partition_by_samples_sizes():
    ds = _random_dataset(1, 4, 10)
    shards = partition(ds, 4, PartitionMode.BY_SAMPLES)
    assert [s.X.shape[1] for s in shards] == [3, 3, 2, 2]
    assert all(s.X.shape[0] == 4 for s in shards)
    assert [s.offset for s in shards] == [0, 3, 6, 8]


@pytest.mark.parametrize("mode", list(PartitionMode))
def test_single_node_partition_is_identity(mode):
    ds = _random_dataset(2, 6, 8)
    (shard,) = partition(ds, 1, mode)
    assert (shard.X != ds.X).nnz == 0
    np.testing.assert_array_equal(shard.y, ds.y)


def test_feature_partition_restacks():
    ds = _random_dataset(3, 7, 12)
    shards = partition(ds, 3, "features")
    assert [s.X.shape[0] for s in shards] == [3, 2, 2]
    stacked = np.vstack([s.X.toarray() for s in shards])
    np.testing.assert_array_equal(stacked, ds.X.toarray())
    # labels are replicated on every feature shard
    for s in shards:
        np.testing.assert_array_equal(s.y, ds.y)


def test_partition_rejects_too_many_nodes():
    ds = _random_dataset(4, 3, 5)
    with pytest.raises(ValueError):
        partition(ds, 4, "features")
    with pytest.raises(ValueError):
        partition(ds, 6, "samples")


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    m=st.sampled_from([1, 2, 3, 5]),
    mode=st.sampled_from(list(PartitionMode)),
    density=st.floats(0.0, 1.0),
)
def test_partition_round_trip(seed, m, mode, density):
    ds = _random_dataset(seed, 11, 9, density)
    shards = partition(ds, m, mode)
    sizes = [s.size for s in shards]
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == (ds.n if mode is PartitionMode.BY_SAMPLES else ds.d)
    back = reassemble(shards[::-1])
    assert back.X.shape == ds.X.shape
    assert (back.X != ds.X).nnz == 0
    np.testing.assert_array_equal(back.y, ds.y)
