"""Lazy, lineage-tracking partitioned datasets with caching and spilling.

A Dataset is a node in an immutable transformation DAG; nothing is computed
until force() or reduce_average() asks for it.  Any partition is a pure
function of (lineage, partition index), so a dropped partition can always be
rebuilt, and a cached one can be dropped at will.

The CacheManager is the single authority over resident payload bytes: strict
LRU within a hard byte budget, with eviction optionally spilling to disk
depending on the owning dataset's storage level.  Spill files carry an
8-byte FNV-1a checksum trailer so a torn write is detected and recomputed,
never silently returned.
"""

from __future__ import annotations

import shutil
import struct
import threading
import uuid
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core import (
    BenchmarkParams,
    IndivisibleLength,
    InvalidParams,
    LoadBinary,
    RecordCodec,
    Vec3,
    assign_blocks_to_partitions,
    decode_vectors,
    encode_vectors,
    generate_vectors,
)
from .errors import ScalemapError

_F64 = RecordCodec(24)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmptyDataset(ScalemapError):
    pass


class SpillIOFailure(ScalemapError):
    pass


class UnknownPartition(ScalemapError):
    pass


class RecomputeFailure(ScalemapError):
    """Lineage execution failed, e.g. a backing input file vanished."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


class StorageLevel(Enum):
    NONE = "none"
    MEMORY_ONLY = "memory_only"
    DISK_ONLY = "disk_only"
    MEMORY_AND_DISK = "memory_and_disk"


@dataclass(frozen=True)
class SourceNode:
    """Root of a lineage chain.

    For file-backed sources the file list is resolved once, at dataset
    creation, and frozen into the lineage; recomputation reads the same
    files even if the directory has since gained or lost entries.
    """

    params: BenchmarkParams
    files: tuple[str, ...] | None = None

    @property
    def n_blocks(self) -> int:
        return len(self.files) if self.files is not None else self.params.blocks


@dataclass(frozen=True)
class MappedNode:
    parent: "Dataset"
    delta: Vec3


class Dataset:
    """One lineage DAG node.  Only the storage level (a policy, not data)
    ever mutates; the lineage and partitioning are fixed at creation."""

    def __init__(self, dataset_id: int, lineage: SourceNode | MappedNode, partitions: int):
        self.dataset_id = dataset_id
        self.lineage = lineage
        self.partitions = partitions
        self.storage = StorageLevel.NONE

    def __repr__(self):
        kind = "source" if isinstance(self.lineage, SourceNode) else "mapped"
        return (f"Dataset(id={self.dataset_id}, {kind}, "
                f"partitions={self.partitions}, storage={self.storage.value})")


@dataclass(frozen=True)
class MaterializationReport:
    """Exact counts from one force() call.

    recomputed_partitions counts partitions produced by executing lineage
    during this call (first-time or after eviction), as opposed to served
    from memory or spill.  spilled_partitions counts spill-file writes
    triggered while the call ran.
    """

    partition_count: int
    bytes_materialized: int
    recomputed_partitions: int
    spilled_partitions: int


@dataclass
class EngineCounters:
    generate_calls: int = 0
    file_loads: int = 0
    partitions_computed: int = 0
    spill_writes: int = 0
    spill_reads: int = 0
    spill_corrupt: int = 0
    evictions: int = 0


class CacheManager:
    """Synchronized LRU store of partition payloads under a hard byte budget.

    Per-key order stamp is refreshed on get(); eviction pops the least
    recently used entry, insertion order breaking ties.  A payload larger
    than the whole budget is refused rather than evicting everything for
    nothing.  All mutation happens under one lock, including the eviction
    callback, so eviction decisions are serial.
    """

    def __init__(self, memory_budget_bytes: int, on_evict=None):
        if memory_budget_bytes < 0:
            raise InvalidParams(f"memory budget must be >= 0, got {memory_budget_bytes}")
        self.memory_budget_bytes = int(memory_budget_bytes)
        self.on_evict = on_evict
        self.resident_bytes = 0
        self.peak_resident_bytes = 0
        self._entries: OrderedDict[tuple[int, int], np.ndarray] = OrderedDict()
        self._lock = threading.RLock()

    def get(self, key) -> np.ndarray | None:
        with self._lock:
            arr = self._entries.get(key)
            if arr is not None:
                self._entries.move_to_end(key)
            return arr

    def insert(self, key, arr: np.ndarray) -> bool:
        with self._lock:
            old = self._entries.pop(key, None)
            if old is not None:
                self.resident_bytes -= old.nbytes
            if arr.nbytes > self.memory_budget_bytes:
                return False
            while self.resident_bytes + arr.nbytes > self.memory_budget_bytes:
                self._evict_lru()
            self._entries[key] = arr
            self.resident_bytes += arr.nbytes
            self.peak_resident_bytes = max(self.peak_resident_bytes, self.resident_bytes)
            return True

    def _evict_lru(self):
        key, arr = self._entries.popitem(last=False)
        self.resident_bytes -= arr.nbytes
        if self.on_evict is not None:
            self.on_evict(key, arr)

    def drop(self, key):
        with self._lock:
            arr = self._entries.pop(key, None)
            if arr is not None:
                self.resident_bytes -= arr.nbytes

    def drop_dataset(self, dataset_id: int):
        with self._lock:
            for key in [k for k in self._entries if k[0] == dataset_id]:
                self.drop(key)

    def keys(self):
        with self._lock:
            return list(self._entries)


class _KeyedLocks:
    """One lock per (dataset, partition), so a given partition is computed
    by at most one slot at a time."""

    def __init__(self):
        self._locks: dict = {}
        self._guard = threading.Lock()

    @contextmanager
    def hold(self, key):
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            yield


_FOLD_CHUNK = 1 << 16


def leftfold_sum(arr: np.ndarray) -> np.ndarray:
    """Sequential left-fold component sums down axis 0.

    np.add.accumulate evaluates the recurrence r[i] = r[i-1] + a[i], which
    is exactly a record-order fold; the accumulator row is carried across
    chunks so temporaries stay small.  Plain np.sum would use pairwise
    summation and round differently.
    """
    acc = np.zeros(3, dtype=np.float64)
    for lo in range(0, arr.shape[0], _FOLD_CHUNK):
        rows = np.vstack((acc[None, :], arr[lo:lo + _FOLD_CHUNK]))
        acc = np.add.accumulate(rows, axis=0)[-1]
    return acc


class Engine:
    """Materializes dataset partitions on a pool of local slots.

    memory_budget_bytes caps cache residency and must be given explicitly;
    scratch_dir hosts spill files under a per-engine subdirectory named
    {dataset_id}/{partition}.bin so concurrent engines never collide.
    """

    def __init__(self, memory_budget_bytes: int, scratch_dir, slots: int = 1):
        self.slots = max(1, int(slots))
        self.scratch = Path(scratch_dir) / f"eng-{uuid.uuid4().hex[:8]}"
        self.counters = EngineCounters()
        self.cache = CacheManager(memory_budget_bytes, on_evict=self._on_evict)
        self._lock = threading.RLock()
        self._materialized: set[tuple[int, int]] = set()
        self._datasets: dict[int, Dataset] = {}
        self._next_id = 0
        self._inflight = _KeyedLocks()

    # ---- dataset construction ------------------------------------------

    def source(self, params: BenchmarkParams) -> Dataset:
        params.validate()
        files = None
        if isinstance(params.source, LoadBinary):
            root = Path(params.source.path)
            if not root.is_dir():
                raise InvalidParams(f"input path is not a directory: {root}")
            files = tuple(sorted(str(p) for p in root.iterdir() if p.is_file()))
            if not files:
                raise InvalidParams(f"no block files under {root}")
        return self._register(SourceNode(params, files), params.partitions)

    def map_shift(self, d: Dataset, delta: Vec3) -> Dataset:
        return self._register(MappedNode(d, delta), d.partitions)

    def _register(self, lineage, partitions: int) -> Dataset:
        with self._lock:
            d = Dataset(self._next_id, lineage, partitions)
            self._next_id += 1
            self._datasets[d.dataset_id] = d
            return d

    def persist(self, d: Dataset, level: StorageLevel) -> Dataset:
        if level is StorageLevel.NONE:
            return self.unpersist(d)
        d.storage = level
        return d

    def unpersist(self, d: Dataset) -> Dataset:
        self.cache.drop_dataset(d.dataset_id)
        shutil.rmtree(self.scratch / str(d.dataset_id), ignore_errors=True)
        d.storage = StorageLevel.NONE
        return d

    # ---- materialization -----------------------------------------------

    def get_partition(self, d: Dataset, p: int) -> np.ndarray:
        return self.materialize(d, p)[0]

    def materialize(self, d: Dataset, p: int) -> tuple[np.ndarray, bool]:
        """Partition payload plus whether lineage had to run to produce it."""
        if not 0 <= p < d.partitions:
            raise UnknownPartition(f"partition {p} outside 0..{d.partitions - 1}")
        return self._materialize(d, p)

    def force(self, d: Dataset) -> MaterializationReport:
        with self._lock:
            spills_before = self.counters.spill_writes

        def one(p: int) -> tuple[int, bool]:
            arr, computed = self._materialize(d, p)
            return arr.nbytes, computed

        with ThreadPoolExecutor(max_workers=self.slots) as pool:
            sized = list(pool.map(one, range(d.partitions)))
        with self._lock:
            spilled = self.counters.spill_writes - spills_before
        return MaterializationReport(
            partition_count=d.partitions,
            bytes_materialized=sum(nb for nb, _ in sized),
            recomputed_partitions=sum(1 for _, c in sized if c),
            spilled_partitions=spilled,
        )

    def reduce_average(self, d: Dataset) -> Vec3:
        """Component-wise mean over every record.

        Order is pinned for bit-reproducibility: records fold sequentially
        within a partition, partial (sum, count) pairs combine in ascending
        partition index, and the division happens last.  The result is
        therefore identical across runs and storage levels at a fixed
        partition count (and only there; other partitionings round
        differently).
        """

        def partial(p: int) -> tuple[np.ndarray, int]:
            arr, _ = self._materialize(d, p)
            return leftfold_sum(arr), arr.shape[0]

        with ThreadPoolExecutor(max_workers=self.slots) as pool:
            partials = list(pool.map(partial, range(d.partitions)))
        total = np.zeros(3, dtype=np.float64)
        count = 0
        for vec_sum, n in partials:
            total = total + vec_sum
            count += n
        if count == 0:
            raise EmptyDataset("reduce over a dataset with zero records")
        mean = total / count
        return Vec3(float(mean[0]), float(mean[1]), float(mean[2]))

    def evict_and_recompute_check(self, d: Dataset, p: int) -> bool:
        """Drop every stored copy of the partition, rebuild it from lineage,
        and compare bit-for-bit.  Test hook for the recomputation contract."""
        key = (d.dataset_id, p)
        with self._lock:
            known = key in self._materialized
        if not known:
            raise UnknownPartition(f"partition {p} of dataset {d.dataset_id} never materialized")
        original, _ = self._materialize(d, p)
        snapshot = original.tobytes()
        self.cache.drop(key)
        self._spill_delete(key)
        fresh = self._compute(d, p)
        fresh.setflags(write=False)
        with self._lock:
            self.counters.partitions_computed += 1
        self._store(d, p, fresh)
        return snapshot == fresh.tobytes()

    def _materialize(self, d: Dataset, p: int) -> tuple[np.ndarray, bool]:
        key = (d.dataset_id, p)
        with self._inflight.hold(key):
            level = d.storage
            if level in (StorageLevel.MEMORY_ONLY, StorageLevel.MEMORY_AND_DISK):
                arr = self.cache.get(key)
                if arr is not None:
                    self._mark(key)
                    return arr, False
            if level in (StorageLevel.DISK_ONLY, StorageLevel.MEMORY_AND_DISK):
                arr = self._spill_read(key)
                if arr is not None:
                    with self._lock:
                        self.counters.spill_reads += 1
                    if level is StorageLevel.MEMORY_AND_DISK:
                        self.cache.insert(key, arr)
                    self._mark(key)
                    return arr, False
            arr = self._compute(d, p)
            arr.setflags(write=False)
            with self._lock:
                self.counters.partitions_computed += 1
            self._store(d, p, arr)
            self._mark(key)
            return arr, True

    def _mark(self, key):
        with self._lock:
            self._materialized.add(key)

    def _compute(self, d: Dataset, p: int) -> np.ndarray:
        node = d.lineage
        if isinstance(node, MappedNode):
            parent, _ = self._materialize(node.parent, p)
            return parent + node.delta.as_array()
        params = node.params
        block_ids = assign_blocks_to_partitions(node.n_blocks, d.partitions)[p]
        pieces = []
        for b in block_ids:
            if node.files is not None:
                codec = RecordCodec(params.source.record_bytes)
                try:
                    data = Path(node.files[b]).read_bytes()
                except OSError as e:
                    raise RecomputeFailure(f"block file unreadable: {node.files[b]}: {e}") from e
                try:
                    pieces.append(decode_vectors(data, codec))
                except IndivisibleLength as e:
                    raise RecomputeFailure(f"block file misaligned: {node.files[b]}: {e}") from e
                with self._lock:
                    self.counters.file_loads += 1
            else:
                pieces.append(generate_vectors(params.seed, b, params.vectors_per_block))
                with self._lock:
                    self.counters.generate_calls += 1
        if not pieces:
            return np.empty((0, 3), dtype=np.float64)
        return pieces[0] if len(pieces) == 1 else np.concatenate(pieces)

    def _store(self, d: Dataset, p: int, arr: np.ndarray):
        key = (d.dataset_id, p)
        level = d.storage
        if level in (StorageLevel.MEMORY_ONLY, StorageLevel.MEMORY_AND_DISK):
            cached = self.cache.insert(key, arr)
            if not cached and level is StorageLevel.MEMORY_AND_DISK:
                self._ensure_spilled(key, arr)
        elif level is StorageLevel.DISK_ONLY:
            self._ensure_spilled(key, arr)

    def _on_evict(self, key, arr):
        with self._lock:
            self.counters.evictions += 1
            d = self._datasets.get(key[0])
        if d is not None and d.storage is StorageLevel.MEMORY_AND_DISK:
            self._ensure_spilled(key, arr)

    # ---- spill files -----------------------------------------------------

    def _spill_path(self, key) -> Path:
        return self.scratch / str(key[0]) / f"{key[1]}.bin"

    def _ensure_spilled(self, key, arr):
        path = self._spill_path(key)
        if path.exists():
            return
        self._spill_write(key, arr)

    def _spill_write(self, key, arr):
        path = self._spill_path(key)
        payload = encode_vectors(arr, _F64)
        trailer = struct.pack("<Q", fnv1a64(payload))
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            with open(tmp, "wb") as f:
                f.write(payload)
                f.write(trailer)
            tmp.replace(path)
        except OSError as e:
            raise SpillIOFailure(f"spill write failed: {path}: {e}") from e
        with self._lock:
            self.counters.spill_writes += 1

    def _spill_read(self, key) -> np.ndarray | None:
        path = self._spill_path(key)
        try:
            data = path.read_bytes()
        except OSError:
            return None
        ok = len(data) >= 8
        if ok:
            payload, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
            ok = fnv1a64(payload) == stored and len(payload) % 24 == 0
        if not ok:
            with self._lock:
                self.counters.spill_corrupt += 1
            path.unlink(missing_ok=True)
            return None
        arr = decode_vectors(payload, _F64)
        arr.setflags(write=False)
        return arr

    def _spill_delete(self, key):
        self._spill_path(key).unlink(missing_ok=True)

    # ---- lifecycle --------------------------------------------------------

    def close(self):
        shutil.rmtree(self.scratch, ignore_errors=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def serialize_pipeline(d: Dataset) -> dict:
    """Lineage chain as a JSON-safe stage list, root first, with per-stage
    storage levels, sufficient to rebuild the dataset in another process."""
    stages = []
    node = d
    while True:
        lin = node.lineage
        if isinstance(lin, MappedNode):
            stages.append({"op": "shift", "delta": list(lin.delta.as_tuple()),
                           "storage": node.storage.value})
            node = lin.parent
        else:
            stages.append({"op": "source", "params": lin.params.to_json_dict(),
                           "storage": node.storage.value})
            break
    return {"stages": stages[::-1]}


def build_pipeline(engine: Engine, spec: dict) -> Dataset:
    d = None
    for stage in spec["stages"]:
        if stage["op"] == "source":
            d = engine.source(BenchmarkParams.from_json_dict(stage["params"]))
        elif stage["op"] == "shift":
            if d is None:
                raise InvalidParams("shift stage before any source")
            d = engine.map_shift(d, Vec3.from_sequence(stage["delta"]))
        else:
            raise InvalidParams(f"unknown pipeline stage {stage['op']!r}")
        level = StorageLevel(stage.get("storage", "none"))
        if level is not StorageLevel.NONE:
            engine.persist(d, level)
    if d is None:
        raise InvalidParams("pipeline has no stages")
    return d
