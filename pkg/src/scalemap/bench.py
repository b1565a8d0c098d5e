"""The timed micro-benchmark pipeline and strong/weak scaling sweeps.

One run is four stages: build the source dataset and force it (create),
shift every vector and force that (map), then take the global average
(reduce).  Each stage is timed with the monotonic clock and the engine's
materialization counts ride along in the record.

A strong sweep holds total blocks fixed while node count grows; a weak
sweep holds blocks per node fixed, so totals grow with node count.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import BenchmarkParams, Vec3
from .engine import Engine, StorageLevel
from . import cluster as cluster_mod
from .errors import ConfigError

MODE_LOCAL = "local"
MODE_CLUSTER = "cluster"


class ScalingMode(str, Enum):
    STRONG = "strong"
    WEAK = "weak"


@dataclass(frozen=True)
class StageTimings:
    create_s: float
    map_s: float
    reduce_s: float
    total_s: float
    counters: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"create_s": self.create_s, "map_s": self.map_s,
                "reduce_s": self.reduce_s, "total_s": self.total_s}


@dataclass(frozen=True)
class RunRecord:
    params: BenchmarkParams
    mode: str
    timings: StageTimings
    result: Vec3 | None
    rep: int
    timestamp: float
    scaling: ScalingMode | None = None

    @property
    def units_nodes(self) -> int:
        return self.params.nodes

    @property
    def units_cores(self) -> int:
        return self.params.nodes * self.params.cores

    def to_json_dict(self) -> dict:
        return {
            "params": self.params.to_json_dict(),
            "mode": self.mode,
            "timings": self.timings.to_json_dict(),
            "result": None if self.result is None else list(self.result.as_tuple()),
            "rep": self.rep,
            "timestamp": self.timestamp,
            "scaling": None if self.scaling is None else self.scaling.value,
            "counters": self.timings.counters,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunRecord":
        t = d["timings"]
        timings = StageTimings(
            create_s=float(t["create_s"]), map_s=float(t["map_s"]),
            reduce_s=float(t["reduce_s"]), total_s=float(t["total_s"]),
            counters=d.get("counters", {}),
        )
        res = d.get("result")
        scaling = d.get("scaling")
        return cls(
            params=BenchmarkParams.from_json_dict(d["params"]),
            mode=d["mode"],
            timings=timings,
            result=None if res is None else Vec3.from_sequence(res),
            rep=int(d["rep"]),
            timestamp=float(d["timestamp"]),
            scaling=None if scaling is None else ScalingMode(scaling),
        )


def make_pipeline_spec(params: BenchmarkParams, storage: StorageLevel) -> dict:
    """The job description shared by local and cluster execution paths."""
    return {"stages": [
        {"op": "source", "params": params.to_json_dict(), "storage": storage.value},
        {"op": "shift", "delta": list(params.shift_delta.as_tuple()),
         "storage": storage.value},
    ]}


def _report_dict(report) -> dict:
    return {"bytes": report.bytes_materialized,
            "recomputed": report.recomputed_partitions,
            "spilled": report.spilled_partitions}


def run_pipeline(params: BenchmarkParams, mode: str = MODE_LOCAL, *,
                 memory_budget: int = 1 << 30, scratch=None,
                 master_addr: tuple[str, int] | None = None,
                 storage: StorageLevel = StorageLevel.MEMORY_ONLY,
                 skip_reduce: bool = False, rep: int = 0,
                 scaling: ScalingMode | None = None) -> RunRecord:
    params.validate()
    if mode == MODE_LOCAL:
        timings = _run_local(params, memory_budget, scratch, storage, skip_reduce)
    elif mode == MODE_CLUSTER:
        if master_addr is None:
            raise ConfigError("cluster mode needs a master address")
        timings = _run_cluster(params, master_addr, storage, skip_reduce)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    stage_timings, result = timings
    return RunRecord(params=params, mode=mode, timings=stage_timings,
                     result=result, rep=rep, timestamp=time.time(),
                     scaling=scaling)


def _run_local(params, memory_budget, scratch, storage, skip_reduce):
    if scratch is None:
        raise ConfigError("local mode needs a scratch directory")
    # local stand-in for an N-node cluster: one slot per (node, core) pair
    slots = params.nodes * params.cores
    with Engine(memory_budget, scratch, slots=slots) as engine:
        t0 = time.monotonic()
        d = engine.persist(engine.source(params), storage)
        create_report = engine.force(d)
        t1 = time.monotonic()
        m = engine.persist(engine.map_shift(d, params.shift_delta), storage)
        map_report = engine.force(m)
        t2 = time.monotonic()
        result = None if skip_reduce else engine.reduce_average(m)
        t3 = time.monotonic()
    counters = {"create": _report_dict(create_report), "map": _report_dict(map_report)}
    timings = StageTimings(create_s=t1 - t0, map_s=t2 - t1,
                           reduce_s=0.0 if skip_reduce else t3 - t2,
                           total_s=t3 - t0, counters=counters)
    return timings, result


def _run_cluster(params, master_addr, storage, skip_reduce):
    spec = make_pipeline_spec(params, storage)
    jr = cluster_mod.submit(master_addr, spec, skip_reduce=skip_reduce)
    t = jr.timings
    timings = StageTimings(create_s=t["create_s"], map_s=t["map_s"],
                           reduce_s=t["reduce_s"], total_s=t["total_s"],
                           counters=dict(jr.phases))
    return timings, jr.result


def sweep_configurations(base: BenchmarkParams, node_counts: list[int],
                         scaling: ScalingMode) -> list[BenchmarkParams]:
    """Per-node-count parameter sets; validates the sweep axis up front.

    In weak mode the base blocks value is read as blocks per node.
    """
    if not node_counts:
        raise ConfigError("node_counts must be nonempty")
    if sorted(node_counts) != list(node_counts) or len(set(node_counts)) != len(node_counts):
        raise ConfigError(f"node_counts must be strictly ascending, got {node_counts}")
    out = []
    for n in node_counts:
        if scaling is ScalingMode.STRONG:
            p = base.replaced(nodes=n)
        else:
            p = base.replaced(nodes=n, blocks=base.blocks * n)
        if p.blocks < p.partitions:
            raise ConfigError(
                f"{p.blocks} blocks over {p.partitions} partitions leaves "
                f"zero-block partitions at nodes={n}")
        out.append(p)
    return out


def run_sweep(base: BenchmarkParams, node_counts: list[int], scaling: ScalingMode,
              reps: int = 3, mode: str = MODE_LOCAL, **run_kwargs) -> list[RunRecord]:
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}")
    records = []
    for params in sweep_configurations(base, node_counts, scaling):
        for rep in range(reps):
            records.append(run_pipeline(params, mode, rep=rep, scaling=scaling,
                                        **run_kwargs))
    return records


def write_records_jsonl(records: list[RunRecord], path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r.to_json_dict()) + "\n")


def read_records_jsonl(path) -> list[RunRecord]:
    text = Path(path).read_text(encoding="utf-8")
    records = []
    for line in text.splitlines():
        if line.strip():
            records.append(RunRecord.from_json_dict(json.loads(line)))
    return records
