"""Deterministic (rule, orbit) datasets with rule-disjoint train/test splits.

File layout (all integers little-endian)::

    header   32 bytes  struct "<4sHHIIQQ":
                       magic b"ECAD", format_version, radius, width, steps,
                       sample_count, master_seed
    record   rule number in ceil(2**(2r+1) / 8) bytes, then ``steps`` rows of
             ceil(W / 8) bytes each; cell w of a row is bit (w % 8) of byte w // 8

format_version 1 freezes the SplitMix64 stream layout documented in
:mod:`eca_lab.rng`: a sample draws its rule number from words starting at 0
and its initial state from the words that follow.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import _kernels
from .eca import LatticeError, LatticeState, Orbit, RuleTable, orbit as run_orbit, table_size
from .rng import derive_seed, random_bits, random_int, words_needed

MAGIC = b"ECAD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHIIQQ")

TRAIN_TAG = 0x747261696E  # "train"
TEST_TAG = 0x74657374  # "test"
RESAMPLE_TAG = 0x726573  # "res"
MAX_RESAMPLE_ATTEMPTS = 64


class DatasetError(ValueError):
    pass


class BadMagicError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


class TruncatedDatasetError(DatasetError):
    pass


class DatasetConsistencyError(DatasetError):
    """Header and payload disagree."""


class ResampleBudgetError(RuntimeError):
    """Too few rules left outside the test set to draw the training split."""


@dataclass(frozen=True)
class DatasetHeader:
    radius: int
    width: int
    steps: int
    sample_count: int
    master_seed: int
    format_version: int = FORMAT_VERSION
    magic: bytes = MAGIC

    def validate(self):
        if self.width < 2 * self.radius + 1 or self.radius < 1:
            raise DatasetConsistencyError(f"invalid lattice: W={self.width}, r={self.radius}")
        if self.steps < 2:
            raise DatasetConsistencyError(f"orbits need at least 2 steps, header says {self.steps}")
        if self.sample_count < 0:
            raise DatasetConsistencyError("negative sample count")

    @property
    def rule_bytes(self) -> int:
        return table_size(self.radius) // 8

    @property
    def row_bytes(self) -> int:
        return (self.width + 7) // 8

    @property
    def record_bytes(self) -> int:
        return self.rule_bytes + self.steps * self.row_bytes

    def pack(self) -> bytes:
        return _HEADER.pack(
            self.magic, self.format_version, self.radius, self.width, self.steps, self.sample_count, self.master_seed
        )

    def describe(self) -> str:
        return "\n".join(
            [
                f"magic          {self.magic.decode('ascii', 'replace')}",
                f"format_version {self.format_version}",
                f"radius         {self.radius}",
                f"width          {self.width}",
                f"steps          {self.steps}",
                f"sample_count   {self.sample_count}",
                f"master_seed    {self.master_seed}",
                f"record_bytes   {self.record_bytes}",
            ]
        )


@dataclass(frozen=True)
class Sample:
    rule: RuleTable
    orbit: Orbit

    def reproduces(self) -> bool:
        return run_orbit(self.rule, self.orbit.states[0], len(self.orbit)) == self.orbit


@dataclass(frozen=True)
class SplitSpec:
    train_count: int = 950_000
    test_count: int = 100_000
    master_seed: int = 0
    radius: int = 2
    width: int = 20
    steps: int = 20

    def validate(self):
        if self.train_count < 0 or self.test_count < 0:
            raise ValueError("sample counts must be non-negative")
        if self.radius < 1 or self.width < 2 * self.radius + 1:
            raise LatticeError(f"invalid lattice: W={self.width}, r={self.radius}")
        if self.steps < 2:
            raise ValueError("orbits need at least 2 steps")


PROFILES = {
    "paper": SplitSpec(),
    "desk": SplitSpec(train_count=100_000, test_count=10_000),
}


def _check_dims(radius, width, steps):
    if radius < 1 or width < 2 * radius + 1:
        raise LatticeError(f"invalid lattice: W={width}, r={radius}")
    if steps < 2:
        raise ValueError(f"orbits need at least 2 steps, got {steps}")


def generate_sample(radius: int, width: int, steps: int, sub_seed: int) -> Sample:
    """One sample drawn from the stream ``sub_seed``: uniform rule, uniform initial state."""
    _check_dims(radius, width, steps)
    size = table_size(radius)
    rule = RuleTable(radius, random_int(sub_seed, size, 0))
    initial = LatticeState(width, random_int(sub_seed, width, words_needed(size)))
    return Sample(rule, run_orbit(rule, initial, steps))


def _packed_from_subs(subs, radius, width, steps):
    size = table_size(radius)
    rules = random_bits(subs, size, 0)
    initial = random_bits(subs, width, words_needed(size))
    return rules, _kernels.evolve(rules, initial, width, radius, steps)


@dataclass
class PackedSamples:
    """Samples as arrays: rule numbers ``(n,)`` and packed orbits ``(n, steps)``.

    Uses uint64 when the lattice fits the packed kernels, Python-int object
    arrays otherwise.
    """

    header: DatasetHeader
    rules: np.ndarray
    rows: np.ndarray

    def __len__(self):
        return len(self.rules)

    def samples(self) -> Iterator[Sample]:
        h = self.header
        for rule, row in zip(self.rules, self.rows):
            yield Sample(RuleTable(h.radius, int(rule)), Orbit(tuple(LatticeState(h.width, int(v)) for v in row)))

    def orbit_bits(self, start=0, stop=None) -> np.ndarray:
        """``(n, steps, W)`` uint8 cells for samples ``start:stop``."""
        rows = self.rows[start:stop]
        w = self.header.width
        if rows.dtype == object:
            return np.array([[[(int(v) >> c) & 1 for c in range(w)] for v in row] for row in rows], dtype=np.uint8)
        return ((rows[..., None] >> np.arange(w, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)

    def rule_bits(self, start=0, stop=None) -> np.ndarray:
        """``(n, 2**(2r+1))`` uint8 rule outputs for samples ``start:stop``."""
        rules = self.rules[start:stop]
        size = table_size(self.header.radius)
        if rules.dtype == object:
            return np.array([[(int(v) >> n) & 1 for n in range(size)] for v in rules], dtype=np.uint8)
        return ((rules[:, None] >> np.arange(size, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)

    def subset(self, start, stop) -> "PackedSamples":
        rules, rows = self.rules[start:stop], self.rows[start:stop]
        h = self.header
        header = DatasetHeader(h.radius, h.width, h.steps, len(rules), h.master_seed, h.format_version)
        return PackedSamples(header, rules, rows)


def _generate_block(subs, radius, width, steps):
    if _kernels.supports(width, radius):
        return _packed_from_subs(subs, radius, width, steps)
    samples = [generate_sample(radius, width, steps, int(s)) for s in subs]
    rules = np.empty(len(samples), dtype=object)
    rules[:] = [s.rule.number for s in samples]
    rows = np.empty((len(samples), steps), dtype=object)
    for i, s in enumerate(samples):
        rows[i] = [st.packed for st in s.orbit.states]
    return rules, rows


def _rules_in(rules, reject):
    if rules.dtype == object:
        return np.array([int(r) in reject for r in rules], dtype=bool)
    return np.isin(rules, np.fromiter(reject, dtype=np.uint64, count=len(reject)))


def generate_split(spec: SplitSpec) -> tuple[PackedSamples, PackedSamples]:
    """Train and test samples whose rule-number sets are disjoint.

    Test samples are drawn first. A training sample whose rule lands in the
    test set is redrawn from ``derive_seed(sub_seed, RESAMPLE_TAG, attempt)``.
    """
    spec.validate()
    r, w, t = spec.radius, spec.width, spec.steps
    test_subs = derive_seed(spec.master_seed, TEST_TAG, np.arange(spec.test_count, dtype=np.uint64))
    test_rules, test_rows = _generate_block(test_subs, r, w, t)
    reject = {int(x) for x in test_rules}
    available = (1 << table_size(r)) - len(reject)
    if spec.train_count and available <= 0:
        raise ResampleBudgetError("the test split uses every rule; no rules remain for training")

    base = derive_seed(spec.master_seed, TRAIN_TAG, np.arange(spec.train_count, dtype=np.uint64))
    train_rules, train_rows = _generate_block(base, r, w, t)
    bad = np.flatnonzero(_rules_in(train_rules, reject)) if reject else np.array([], dtype=np.int64)
    attempt = 0
    while bad.size:
        attempt += 1
        if attempt > MAX_RESAMPLE_ATTEMPTS:
            raise ResampleBudgetError(
                f"{bad.size} training samples still collide with test rules after "
                f"{MAX_RESAMPLE_ATTEMPTS} redraws ({available} rules available)"
            )
        subs = derive_seed(base[bad], RESAMPLE_TAG, attempt)
        new_rules, new_rows = _generate_block(subs, r, w, t)
        train_rules[bad] = new_rules
        train_rows[bad] = new_rows
        bad = bad[_rules_in(new_rules, reject)]

    def packed(rules, rows):
        header = DatasetHeader(r, w, t, len(rules), spec.master_seed)
        return PackedSamples(header, rules, rows)

    return packed(train_rules, train_rows), packed(test_rules, test_rows)


def _encode_records(data: PackedSamples) -> bytes:
    h = data.header
    n = len(data)
    if data.rules.dtype != object:
        rule_b = data.rules.astype("<u8").view(np.uint8).reshape(n, 8)[:, : h.rule_bytes]
        row_b = data.rows.astype("<u8").view(np.uint8).reshape(n, h.steps, 8)[:, :, : h.row_bytes]
        return np.concatenate([rule_b, row_b.reshape(n, -1)], axis=1).tobytes()
    out = bytearray()
    for rule, row in zip(data.rules, data.rows):
        out += int(rule).to_bytes(h.rule_bytes, "little")
        for v in row:
            out += int(v).to_bytes(h.row_bytes, "little")
    return bytes(out)


def write_packed(path, data: PackedSamples):
    header = data.header
    header.validate()
    if header.sample_count != len(data):
        raise DatasetConsistencyError(f"header declares {header.sample_count} samples, got {len(data)}")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header.pack())
        chunk = 65536
        for start in range(0, len(data), chunk):
            fh.write(_encode_records(data.subset(start, start + chunk)))
    os.replace(tmp, path)


def write_dataset(path, header: DatasetHeader, samples: Iterable[Sample]):
    """Write ``samples`` after ``header``; the count must match the header."""
    header.validate()
    tmp = Path(str(path) + ".tmp")
    written = 0
    with open(tmp, "wb") as fh:
        fh.write(header.pack())
        for s in samples:
            if s.rule.radius != header.radius or s.orbit.width != header.width or len(s.orbit) != header.steps:
                raise DatasetConsistencyError("sample dimensions do not match the header")
            fh.write(s.rule.number.to_bytes(header.rule_bytes, "little"))
            for st in s.orbit.states:
                fh.write(st.packed.to_bytes(header.row_bytes, "little"))
            written += 1
    if written != header.sample_count:
        tmp.unlink()
        raise DatasetConsistencyError(f"header declares {header.sample_count} samples, wrote {written}")
    os.replace(tmp, path)


def read_header(fh) -> DatasetHeader:
    raw = fh.read(_HEADER.size)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"not a dataset file (magic {raw[:4]!r}, expected {MAGIC!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedDatasetError(f"header is {len(raw)} bytes, expected {_HEADER.size}")
    magic, version, radius, width, steps, count, seed = _HEADER.unpack(raw)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"dataset format version {version}, this reader supports {FORMAT_VERSION}")
    header = DatasetHeader(radius, width, steps, count, seed, version, magic)
    header.validate()
    return header


def _decode_record(header, rec) -> Sample:
    rb, wb = header.rule_bytes, header.row_bytes
    rule = RuleTable(header.radius, int.from_bytes(rec[:rb], "little"))
    states = []
    for t in range(header.steps):
        v = int.from_bytes(rec[rb + t * wb : rb + (t + 1) * wb], "little")
        if v >> header.width:
            raise DatasetConsistencyError(f"row {t} has bits set beyond width {header.width}")
        states.append(LatticeState(header.width, v))
    return Sample(rule, Orbit(tuple(states)))


def read_dataset(path) -> tuple[DatasetHeader, Iterator[Sample]]:
    """Header plus a streaming iterator over samples."""
    fh = open(path, "rb")
    try:
        header = read_header(fh)
    except Exception:
        fh.close()
        raise

    def samples():
        with fh:
            for i in range(header.sample_count):
                rec = fh.read(header.record_bytes)
                if len(rec) < header.record_bytes:
                    raise TruncatedDatasetError(
                        f"{path}: sample {i} of {header.sample_count} is cut short ({len(rec)} of {header.record_bytes} bytes)"
                    )
                yield _decode_record(header, rec)
            if fh.read(1):
                raise DatasetConsistencyError(f"{path}: trailing bytes after {header.sample_count} samples")

    return header, samples()


def read_packed(path) -> PackedSamples:
    """Load a whole dataset as arrays (requires W <= 64 and r <= 2)."""
    with open(path, "rb") as fh:
        header = read_header(fh)
        if not _kernels.supports(header.width, header.radius):
            rules, rows = [], []
            _, it = read_dataset(path)
            for s in it:
                rules.append(s.rule.number)
                rows.append([st.packed for st in s.orbit.states])
            obj_rules = np.empty(len(rules), dtype=object)
            obj_rules[:] = rules
            obj_rows = np.empty((len(rows), header.steps), dtype=object)
            for i, row in enumerate(rows):
                obj_rows[i] = row
            return PackedSamples(header, obj_rules, obj_rows)
        payload = fh.read()
    n, rec = header.sample_count, header.record_bytes
    if len(payload) < n * rec:
        raise TruncatedDatasetError(f"{path}: payload has {len(payload)} bytes, expected {n * rec}")
    if len(payload) > n * rec:
        raise DatasetConsistencyError(f"{path}: trailing bytes after {n} samples")
    buf = np.frombuffer(payload, dtype=np.uint8).reshape(n, rec)
    rule_b = np.zeros((n, 8), dtype=np.uint8)
    rule_b[:, : header.rule_bytes] = buf[:, : header.rule_bytes]
    row_b = np.zeros((n, header.steps, 8), dtype=np.uint8)
    row_b[:, :, : header.row_bytes] = buf[:, header.rule_bytes :].reshape(n, header.steps, header.row_bytes)
    rules = rule_b.view("<u8").reshape(n).astype(np.uint64)
    rows = row_b.view("<u8").reshape(n, header.steps).astype(np.uint64)
    if np.any(rows >> np.uint64(header.width)):
        raise DatasetConsistencyError(f"{path}: rows have bits set beyond width {header.width}")
    return PackedSamples(header, rules, rows)


def rule_set(data: PackedSamples) -> set[int]:
    return {int(x) for x in data.rules}


def write_split(spec: SplitSpec, out_dir) -> tuple[Path, Path]:
    """Generate a split and write ``train.ecad`` / ``test.ecad`` under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = generate_split(spec)
    train_path, test_path = out_dir / "train.ecad", out_dir / "test.ecad"
    write_packed(train_path, train)
    write_packed(test_path, test)
    return train_path, test_path
