import math

import numpy as np
import pytest

from eca_lab.dataset import (
    MAGIC,
    BadMagicError,
    DatasetConsistencyError,
    DatasetHeader,
    ResampleBudgetError,
    SplitSpec,
    TruncatedDatasetError,
    VersionMismatchError,
    generate_sample,
    generate_split,
    read_dataset,
    read_packed,
    rule_set,
    write_dataset,
    write_packed,
    write_split,
)
from eca_lab.rng import derive_seed, mix64, random_int, stream_word


def test_mix64_reference_values():
    # SplitMix64 seeded with 0 produces these first outputs
    assert int(stream_word(0, 0)) == 0xE220A8397B1DCDAF
    assert int(stream_word(0, 1)) == 0x6E789E6AA1B965F4
    assert int(stream_word(0, 2)) == 0x06C45D188009454F
    assert mix64(np.array([1, 2], np.uint64)).dtype == np.uint64


def test_derive_seed_vectorized_matches_scalar():
    idx = np.arange(10, dtype=np.uint64)
    vec = derive_seed(42, 7, idx)
    assert [int(v) for v in vec] == [int(derive_seed(42, 7, int(i))) for i in range(10)]
    assert len(set(int(v) for v in vec)) == 10


def test_random_int_wide():
    v = random_int(123, 128, 0)
    assert v >> 64 == int(stream_word(123, 1)) and v & (2**64 - 1) == int(stream_word(123, 0))


def test_generate_sample_deterministic():
    a = generate_sample(2, 20, 20, 99)
    b = generate_sample(2, 20, 20, 99)
    assert a == b
    assert a.reproduces()
    assert generate_sample(2, 20, 20, 100) != a


def test_generate_sample_invalid():
    with pytest.raises(ValueError):
        generate_sample(2, 4, 20, 1)
    with pytest.raises(ValueError):
        generate_sample(2, 20, 1, 1)


def test_initial_bits_balanced():
    n = 10_000
    train, _ = generate_split(SplitSpec(train_count=n, test_count=0, master_seed=17))
    bits = train.orbit_bits()[:, 0]
    total = bits.size
    sigma = math.sqrt(total * 0.25)
    assert abs(bits.sum() - total / 2) < 3 * sigma
    rb = train.rule_bits()
    assert abs(rb.sum() - rb.size / 2) < 3 * math.sqrt(rb.size * 0.25)


def test_vectorized_split_matches_generate_sample():
    spec = SplitSpec(train_count=20, test_count=20, master_seed=5)
    train, test = generate_split(spec)
    for i, s in enumerate(test.samples()):
        assert s == generate_sample(2, 20, 20, int(derive_seed(5, 0x74657374, i)))
    assert all(s.reproduces() for s in train.samples())


def test_split_disjoint_and_deterministic(tmp_path):
    spec = SplitSpec(train_count=1000, test_count=1000, master_seed=3)
    train, test = generate_split(spec)
    assert not rule_set(train) & rule_set(test)
    a = write_split(spec, tmp_path / "a")
    b = write_split(spec, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_resampling_small_radius():
    # r=1 has only 256 rules, so collisions are frequent and must be redrawn
    spec = SplitSpec(train_count=500, test_count=100, master_seed=1, radius=1, width=9, steps=5)
    train, test = generate_split(spec)
    assert not rule_set(train) & rule_set(test)
    assert all(s.reproduces() for s in train.samples())


def test_resample_budget_exhausted():
    with pytest.raises(ResampleBudgetError):
        generate_split(SplitSpec(train_count=50, test_count=5000, master_seed=1, radius=1, width=9, steps=5))


def test_roundtrip_packed_and_streaming(tmp_path):
    train, _ = generate_split(SplitSpec(train_count=100, test_count=0, master_seed=8))
    path = tmp_path / "d.ecad"
    write_packed(path, train)
    back = read_packed(path)
    assert back.header == train.header
    assert np.array_equal(back.rules, train.rules) and np.array_equal(back.rows, train.rows)
    header, it = read_dataset(path)
    assert list(it) == list(train.samples())

    path2 = tmp_path / "e.ecad"
    write_dataset(path2, header, train.samples())
    assert path2.read_bytes() == path.read_bytes()


def test_wide_lattice_roundtrip(tmp_path):
    train, test = generate_split(SplitSpec(train_count=6, test_count=3, master_seed=2, radius=3, width=70, steps=4))
    path = tmp_path / "w.ecad"
    write_packed(path, train)
    header, it = read_dataset(path)
    assert header.rule_bytes == 16 and header.row_bytes == 9
    assert list(it) == list(train.samples())
    back = read_packed(path)
    assert list(back.samples()) == list(train.samples())


def test_empty_dataset(tmp_path):
    path = tmp_path / "empty.ecad"
    write_dataset(path, DatasetHeader(2, 20, 20, 0, 0), [])
    header, it = read_dataset(path)
    assert header.sample_count == 0 and list(it) == []
    assert len(read_packed(path)) == 0


def test_truncated_file(tmp_path):
    train, _ = generate_split(SplitSpec(train_count=10, test_count=0))
    path = tmp_path / "t.ecad"
    write_packed(path, train)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 30])
    _, it = read_dataset(path)
    got = []
    with pytest.raises(TruncatedDatasetError):
        for s in it:
            got.append(s)
    assert len(got) == 9
    with pytest.raises(TruncatedDatasetError):
        read_packed(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "x.ecad"
    path.write_bytes(b"NOPE" + bytes(28))
    with pytest.raises(BadMagicError):
        read_dataset(path)
    header = DatasetHeader(2, 20, 20, 0, 0, format_version=9)
    path.write_bytes(header.pack())
    with pytest.raises(VersionMismatchError):
        read_dataset(path)


def test_trailing_bytes_and_count_mismatch(tmp_path):
    train, _ = generate_split(SplitSpec(train_count=3, test_count=0))
    path = tmp_path / "x.ecad"
    write_packed(path, train)
    path.write_bytes(path.read_bytes() + b"\x00")
    _, it = read_dataset(path)
    with pytest.raises(DatasetConsistencyError):
        list(it)
    with pytest.raises(DatasetConsistencyError):
        read_packed(path)
    with pytest.raises(DatasetConsistencyError):
        write_dataset(tmp_path / "y.ecad", DatasetHeader(2, 20, 20, 5, 0), train.samples())


def test_header_describe():
    text = DatasetHeader(2, 20, 20, 7, 11).describe()
    assert MAGIC.decode() in text and "sample_count   7" in text
