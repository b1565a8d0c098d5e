"""Standalone master/worker execution of engine pipelines over TCP.

Wire format: every frame is a 4-byte big-endian length prefix (counting the
tag byte plus payload), one tag byte, then a tag-specific payload whose
integers are little-endian and whose floats are IEEE-754 little-endian.
Partial reduce sums cross the wire as raw float64 bits, so the distributed
result is bit-identical to a single-process run at the same partition count.

Scheduling is a pull: the master pushes up to `slots` tasks to each worker
and sends the next pending task whenever a result arrives.  A dead worker's
in-flight tasks are requeued to survivors, which is safe because every task
is a pure function of its serialized lineage.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum

from .core import BenchmarkParams
from .engine import Engine, StorageLevel, build_pipeline, leftfold_sum
from .core import Vec3
from .errors import ScalemapError

MAX_FRAME = 64 * 1024 * 1024
PING_PAYLOAD_BYTES = 16


class ProtocolError(ScalemapError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class BindFailure(ScalemapError):
    pass


class ConnectFailure(ScalemapError):
    pass


class WorkerTimeout(ScalemapError):
    pass


class JobFailure(ScalemapError):
    def __init__(self, message: str, causes: dict | None = None):
        super().__init__(message)
        self.causes = causes or {}


class MessageTag(IntEnum):
    REGISTER = 1
    TASK = 2
    RESULT = 3
    HEARTBEAT = 4
    ERROR = 5
    SHUTDOWN = 6
    PING = 7
    DATA = 8
    SUBMIT = 9
    JOB_DONE = 10


ACTION_FORCE = 0
ACTION_PARTIAL_REDUCE = 1


# ---- messages -------------------------------------------------------------

@dataclass(frozen=True)
class Register:
    slots: int
    name: str = ""


@dataclass(frozen=True)
class Task:
    task_id: int
    partition: int
    action: int
    pipeline_json: str


@dataclass(frozen=True)
class TaskResult:
    task_id: int
    partition: int
    action: int
    sum_x: float
    sum_y: float
    sum_z: float
    count: int
    nbytes: int
    computed: bool


@dataclass(frozen=True)
class Heartbeat:
    seq: int


@dataclass(frozen=True)
class ErrorMsg:
    task_id: int
    message: str


@dataclass(frozen=True)
class Shutdown:
    pass


@dataclass(frozen=True)
class Ping:
    nonce: bytes


@dataclass(frozen=True)
class Data:
    payload: bytes


@dataclass(frozen=True)
class Submit:
    job_json: str


@dataclass(frozen=True)
class JobDone:
    report_json: str


_REGISTER = struct.Struct("<H")
_TASK = struct.Struct("<IIB")
_RESULT = struct.Struct("<IIBdddQQB")
_HEARTBEAT = struct.Struct("<I")
_ERROR = struct.Struct("<I")


def encode_message(msg) -> tuple[int, bytes]:
    """Returns (tag, payload)."""
    if isinstance(msg, Register):
        return MessageTag.REGISTER, _REGISTER.pack(msg.slots) + msg.name.encode()
    if isinstance(msg, Task):
        head = _TASK.pack(msg.task_id, msg.partition, msg.action)
        return MessageTag.TASK, head + msg.pipeline_json.encode()
    if isinstance(msg, TaskResult):
        return MessageTag.RESULT, _RESULT.pack(
            msg.task_id, msg.partition, msg.action,
            msg.sum_x, msg.sum_y, msg.sum_z,
            msg.count, msg.nbytes, int(msg.computed))
    if isinstance(msg, Heartbeat):
        return MessageTag.HEARTBEAT, _HEARTBEAT.pack(msg.seq)
    if isinstance(msg, ErrorMsg):
        return MessageTag.ERROR, _ERROR.pack(msg.task_id) + msg.message.encode()
    if isinstance(msg, Shutdown):
        return MessageTag.SHUTDOWN, b""
    if isinstance(msg, Ping):
        return MessageTag.PING, msg.nonce
    if isinstance(msg, Data):
        return MessageTag.DATA, msg.payload
    if isinstance(msg, Submit):
        return MessageTag.SUBMIT, msg.job_json.encode()
    if isinstance(msg, JobDone):
        return MessageTag.JOB_DONE, msg.report_json.encode()
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def decode_message(tag: int, payload: bytes):
    try:
        if tag == MessageTag.REGISTER:
            (slots,) = _REGISTER.unpack_from(payload)
            return Register(slots, payload[_REGISTER.size:].decode())
        if tag == MessageTag.TASK:
            tid, part, action = _TASK.unpack_from(payload)
            return Task(tid, part, action, payload[_TASK.size:].decode())
        if tag == MessageTag.RESULT:
            f = _RESULT.unpack(payload)
            return TaskResult(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], bool(f[8]))
        if tag == MessageTag.HEARTBEAT:
            return Heartbeat(_HEARTBEAT.unpack(payload)[0])
        if tag == MessageTag.ERROR:
            (tid,) = _ERROR.unpack_from(payload)
            return ErrorMsg(tid, payload[_ERROR.size:].decode())
        if tag == MessageTag.SHUTDOWN:
            return Shutdown()
        if tag == MessageTag.PING:
            return Ping(payload)
        if tag == MessageTag.DATA:
            return Data(payload)
        if tag == MessageTag.SUBMIT:
            return Submit(payload.decode())
        if tag == MessageTag.JOB_DONE:
            return JobDone(payload.decode())
    except (struct.error, UnicodeDecodeError) as e:
        raise ProtocolError(f"malformed payload for tag {tag}: {e}") from e
    raise ProtocolError(f"unknown message tag {tag}")


# ---- framing ----------------------------------------------------------------

def send_frame(sock: socket.socket, tag: int, payload: bytes):
    if 1 + len(payload) > MAX_FRAME:
        raise ProtocolError(f"frame too large: {len(payload)} bytes")
    sock.sendall(struct.pack(">I", 1 + len(payload)) + bytes([tag]) + payload)


def send_message(sock: socket.socket, msg):
    tag, payload = encode_message(msg)
    send_frame(sock, tag, payload)


def recvall(sock: socket.socket, n: int) -> bytes | None:
    """None on clean EOF at a frame boundary start; TruncatedFrame mid-read."""
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(min(n - got, 1 << 20))
        if not chunk:
            if got == 0:
                return None
            raise TruncatedFrame(f"connection closed {got}/{n} bytes into a read")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> tuple[int, bytes] | None:
    """Returns (tag, payload), or None on clean EOF between frames."""
    head = recvall(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack(">I", head)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    body = recvall(sock, length)
    if body is None:
        raise TruncatedFrame("connection closed before frame body")
    return body[0], body[1:]


def recv_message(sock: socket.socket):
    frame = recv_frame(sock)
    if frame is None:
        return None
    return decode_message(*frame)


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ScalemapError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


# ---- configuration ---------------------------------------------------------

@dataclass
class ClusterConfig:
    host: str = "127.0.0.1"
    port: int = 0
    expected_workers: int = 1
    heartbeat_interval_ms: int = 0
    network_timeout_ms: int = 120_000
    slots: int = 1
    registration_retries: int = 1


@dataclass(frozen=True)
class JobResult:
    result: Vec3 | None
    timings: dict
    phases: dict
    stats: dict


@dataclass
class MasterStats:
    rescheduled: int = 0
    heartbeats: dict = field(default_factory=dict)
    worker_errors: int = 0
    workers_lost: int = 0


class _WorkerConn:
    def __init__(self, wid: int, sock: socket.socket, slots: int, name: str):
        self.wid = wid
        self.sock = sock
        self.slots = max(1, slots)
        self.name = name or f"worker-{wid}"
        self.alive = True
        self.in_flight: set[int] = set()
        self.wlock = threading.Lock()


class _Phase:
    """Scheduling state for one wave of tasks; guarded by the master lock."""

    def __init__(self, tasks: dict[int, Task]):
        self.tasks = tasks
        self.pending = deque(sorted(tasks))
        self.done: dict[int, TaskResult] = {}
        self.failed: dict[int, str] = {}
        self.finished = threading.Event()
        self.aborted: str | None = None

    def complete(self) -> bool:
        return len(self.done) + len(self.failed) == len(self.tasks)


class Master:
    """Accepts worker registrations and client job submissions on one port.

    Worker connections send REGISTER then stream RESULT/HEARTBEAT/ERROR;
    client connections send SUBMIT (answered with JOB_DONE), PING (echoed),
    or SHUTDOWN (stops the whole cluster).
    """

    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.stats = MasterStats()
        self.on_result = None  # test hook: called as on_result(task_result, worker_id)
        self._lock = threading.RLock()
        self._workers: dict[int, _WorkerConn] = {}
        self._next_wid = 0
        self._next_tid = 0
        self._ready = threading.Event()
        self._stopping = threading.Event()
        self._phase: _Phase | None = None
        self._job_lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        if cfg.expected_workers <= 0:
            self._ready.set()

    # -- lifecycle

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    def start(self):
        try:
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            sock.bind((self.cfg.host, self.cfg.port))
            sock.listen(128)
        except OSError as e:
            raise BindFailure(f"cannot bind {self.cfg.host}:{self.cfg.port}: {e}") from e
        self._listener = sock
        t = threading.Thread(target=self._accept_loop, daemon=True, name="master-accept")
        t.start()
        self._threads.append(t)
        return self

    def wait_ready(self, timeout_s: float | None = None) -> bool:
        return self._ready.wait(timeout_s)

    def wait_stopped(self, timeout_s: float | None = None) -> bool:
        return self._stopping.wait(timeout_s)

    def shutdown(self):
        if self._stopping.is_set():
            return
        self._stopping.set()
        with self._lock:
            workers = list(self._workers.values())
        for w in workers:
            try:
                with w.wlock:
                    send_message(w.sock, Shutdown())
                w.sock.close()
            except OSError:
                pass
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass

    def live_workers(self) -> int:
        with self._lock:
            return sum(1 for w in self._workers.values() if w.alive)

    # -- connection handling

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                conn, _addr = self._listener.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_conn(self, sock: socket.socket):
        sock.settimeout(self.cfg.network_timeout_ms / 1000.0)
        try:
            first = recv_message(sock)
        except (ProtocolError, OSError, socket.timeout):
            sock.close()
            return
        if isinstance(first, Register):
            self._serve_worker(sock, first)
        else:
            self._serve_client(sock, first)

    def _serve_worker(self, sock: socket.socket, reg: Register):
        with self._lock:
            w = _WorkerConn(self._next_wid, sock, reg.slots, reg.name)
            self._next_wid += 1
            self._workers[w.wid] = w
            self.stats.heartbeats.setdefault(w.wid, 0)
            if sum(1 for x in self._workers.values() if x.alive) >= self.cfg.expected_workers:
                self._ready.set()
            self._pump()
        while not self._stopping.is_set():
            try:
                msg = recv_message(sock)
            except socket.timeout:
                with self._lock:
                    busy = bool(w.in_flight)
                if busy:
                    self._worker_lost(w, f"no response within {self.cfg.network_timeout_ms} ms")
                    return
                continue
            except (ProtocolError, OSError):
                self._worker_lost(w, "connection error")
                return
            if msg is None:
                self._worker_lost(w, "connection closed")
                return
            if isinstance(msg, Heartbeat):
                with self._lock:
                    self.stats.heartbeats[w.wid] += 1
            elif isinstance(msg, TaskResult):
                self._on_result(w, msg)
            elif isinstance(msg, ErrorMsg):
                self._on_error(w, msg)

    def _serve_client(self, sock: socket.socket, first):
        msg = first
        try:
            while msg is not None and not self._stopping.is_set():
                if isinstance(msg, Submit):
                    report = self._run_job(json.loads(msg.job_json))
                    send_message(sock, JobDone(json.dumps(report)))
                elif isinstance(msg, Ping):
                    send_message(sock, Ping(msg.nonce))
                elif isinstance(msg, Shutdown):
                    self.shutdown()
                    return
                else:
                    return
                msg = recv_message(sock)
        except (ProtocolError, OSError, socket.timeout):
            pass
        finally:
            sock.close()

    # -- scheduling

    def _pump(self):
        """Dispatch pending tasks to free slots; caller holds the lock."""
        phase = self._phase
        if phase is None:
            return
        while phase.pending:
            free = [w for w in self._workers.values()
                    if w.alive and len(w.in_flight) < w.slots]
            if not free:
                break
            w = min(free, key=lambda x: (len(x.in_flight), x.wid))
            tid = phase.pending.popleft()
            w.in_flight.add(tid)
            try:
                with w.wlock:
                    send_message(w.sock, phase.tasks[tid])
            except OSError:
                self._worker_lost_locked(w, "send failed")
                phase = self._phase
                if phase is None:
                    return

    def _on_result(self, w: _WorkerConn, res: TaskResult):
        hook = None
        with self._lock:
            w.in_flight.discard(res.task_id)
            phase = self._phase
            if phase is not None and res.task_id in phase.tasks and res.task_id not in phase.done:
                phase.done[res.task_id] = res
                if phase.complete():
                    phase.finished.set()
            self._pump()
            if self.on_result is not None:
                hook = self.on_result
        if hook is not None:
            hook(res, w.wid)

    def _on_error(self, w: _WorkerConn, err: ErrorMsg):
        with self._lock:
            self.stats.worker_errors += 1
            w.in_flight.discard(err.task_id)
            phase = self._phase
            if phase is not None and err.task_id in phase.tasks:
                task = phase.tasks[err.task_id]
                phase.failed[task.partition] = err.message
                if phase.complete():
                    phase.finished.set()
            self._pump()

    def _worker_lost(self, w: _WorkerConn, why: str):
        with self._lock:
            self._worker_lost_locked(w, why)

    def _worker_lost_locked(self, w: _WorkerConn, why: str):
        if not w.alive:
            return
        w.alive = False
        self.stats.workers_lost += 1
        try:
            w.sock.close()
        except OSError:
            pass
        phase = self._phase
        if phase is not None:
            requeue = [tid for tid in w.in_flight if tid not in phase.done]
            for tid in sorted(requeue):
                phase.pending.append(tid)
            self.stats.rescheduled += len(requeue)
        w.in_flight.clear()
        if not any(x.alive for x in self._workers.values()):
            if phase is not None:
                phase.aborted = f"no live workers remain (last lost: {w.name}: {why})"
                phase.finished.set()
        else:
            self._pump()

    # -- job orchestration

    def _run_job(self, job: dict) -> dict:
        with self._job_lock:
            try:
                return self._run_job_inner(job)
            except JobFailure as e:
                return {"ok": False, "error": str(e),
                        "causes": {str(k): v for k, v in e.causes.items()}}
            except Exception as e:  # noqa: BLE001 - client must always get a reply
                return {"ok": False, "error": f"{type(e).__name__}: {e}", "causes": {}}

    def _run_job_inner(self, job: dict) -> dict:
        if not self.wait_ready(self.cfg.network_timeout_ms / 1000.0):
            raise JobFailure("master not ready: expected workers never registered")
        if self.live_workers() == 0:
            raise JobFailure("NoWorkers: no live workers registered")
        stages = job["stages"]
        params = BenchmarkParams.from_json_dict(stages[0]["params"])
        partitions = params.partitions
        skip_reduce = bool(job.get("skip_reduce", False))

        t_start = time.monotonic()
        timings = {"create_s": 0.0, "map_s": 0.0, "reduce_s": 0.0}
        phase_reports = {}
        for i, stage in enumerate(stages):
            prefix = json.dumps({"stages": stages[: i + 1]})
            label = "create" if stage["op"] == "source" else "map"
            t0 = time.monotonic()
            results = self._run_phase(ACTION_FORCE, prefix, partitions)
            timings[label + "_s"] += time.monotonic() - t0
            report = phase_reports.setdefault(label, {"bytes": 0, "recomputed": 0})
            report["bytes"] += sum(r.nbytes for r in results.values())
            report["recomputed"] += sum(1 for r in results.values() if r.computed)

        result_vec = None
        if not skip_reduce:
            full = json.dumps({"stages": stages})
            t0 = time.monotonic()
            results = self._run_phase(ACTION_PARTIAL_REDUCE, full, partitions)
            timings["reduce_s"] = time.monotonic() - t0
            # ascending partition order, division last: bit-compatible with
            # the single-process reduce at the same partition count
            sx = sy = sz = 0.0
            count = 0
            for p in sorted(results):
                r = results[p]
                sx, sy, sz = sx + r.sum_x, sy + r.sum_y, sz + r.sum_z
                count += r.count
            if count == 0:
                raise JobFailure("EmptyDataset: reduce over zero records")
            result_vec = [sx / count, sy / count, sz / count]

        timings["total_s"] = time.monotonic() - t_start
        return {
            "ok": True,
            "result": result_vec,
            "timings": timings,
            "phases": phase_reports,
            "stats": {
                "rescheduled": self.stats.rescheduled,
                "workers": self.live_workers(),
                "partitions": partitions,
            },
        }

    def _run_phase(self, action: int, pipeline_json: str, partitions: int) -> dict[int, TaskResult]:
        with self._lock:
            tasks = {}
            for p in range(partitions):
                tasks[self._next_tid] = Task(self._next_tid, p, action, pipeline_json)
                self._next_tid += 1
            phase = _Phase(tasks)
            self._phase = phase
            if not any(w.alive for w in self._workers.values()):
                phase.aborted = "no live workers"
                phase.finished.set()
            else:
                self._pump()
        phase.finished.wait()
        with self._lock:
            self._phase = None
        if phase.aborted:
            raise JobFailure(f"NoWorkers: {phase.aborted}")
        if phase.failed:
            raise JobFailure(f"{len(phase.failed)} partition(s) failed", causes=phase.failed)
        return {t.partition: phase.done[tid] for tid, t in phase.tasks.items()}


# ---- worker ------------------------------------------------------------------

class Worker:
    """Executes tasks against a local engine, one concurrent task per slot.

    Pipelines are cached per stage-list prefix, so the force phases of a job
    warm exactly the datasets its reduce phase reads.
    """

    def __init__(self, cfg: ClusterConfig, scratch_dir, memory_budget_bytes: int,
                 name: str = ""):
        self.cfg = cfg
        self.name = name
        self.engine = Engine(memory_budget_bytes, scratch_dir, slots=cfg.slots)
        self._pipelines: dict[str, object] = {}
        self._plock = threading.Lock()
        self._wlock = threading.Lock()
        self._stop = threading.Event()
        self._sock: socket.socket | None = None

    def _connect(self) -> socket.socket:
        last = None
        for attempt in range(self.cfg.registration_retries + 1):
            if attempt:
                time.sleep(0.2 * attempt)
            try:
                return socket.create_connection(
                    (self.cfg.host, self.cfg.port),
                    timeout=self.cfg.network_timeout_ms / 1000.0)
            except OSError as e:
                last = e
        raise ConnectFailure(f"cannot reach master {self.cfg.host}:{self.cfg.port}: {last}")

    def run(self):
        """Registers and serves tasks until SHUTDOWN or master EOF."""
        sock = self._connect()
        sock.settimeout(None)  # idle is legal; EOF or SHUTDOWN ends the worker
        self._sock = sock
        send_message(sock, Register(self.cfg.slots, self.name))
        hb = None
        if self.cfg.heartbeat_interval_ms > 0:
            hb = threading.Thread(target=self._heartbeat_loop, daemon=True)
            hb.start()
        try:
            with ThreadPoolExecutor(max_workers=self.cfg.slots) as pool:
                while not self._stop.is_set():
                    try:
                        frame = recv_frame(sock)
                    except (OSError, ProtocolError):
                        break
                    if frame is None:
                        break
                    tag, payload = frame
                    if tag == MessageTag.SHUTDOWN:
                        break
                    if tag == MessageTag.TASK:
                        try:
                            task = decode_message(tag, payload)
                            json.loads(task.pipeline_json)
                        except (ProtocolError, ValueError) as e:
                            self._send(ErrorMsg(0, f"malformed task: {e}"))
                            continue
                        pool.submit(self._execute, task)
        finally:
            self._stop.set()
            self.engine.close()
            try:
                sock.close()
            except OSError:
                pass

    def stop(self):
        self._stop.set()
        if self._sock is not None:
            try:
                self._sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

    def _send(self, msg):
        with self._wlock:
            try:
                send_message(self._sock, msg)
            except OSError:
                self._stop.set()

    def _heartbeat_loop(self):
        interval = self.cfg.heartbeat_interval_ms / 1000.0
        t0 = time.monotonic()
        seq = 0
        while not self._stop.is_set():
            seq += 1
            delay = t0 + seq * interval - time.monotonic()
            if delay > 0 and self._stop.wait(delay):
                return
            self._send(Heartbeat(seq))

    def _dataset_for(self, stages: list):
        key = json.dumps(stages, sort_keys=True)
        with self._plock:
            d = self._pipelines.get(key)
            if d is None:
                d = build_pipeline(self.engine, {"stages": stages})
                self._pipelines[key] = d
            return d

    def _execute(self, task: Task):
        try:
            stages = json.loads(task.pipeline_json)["stages"]
            d = self._dataset_for(stages)
            arr, computed = self.engine.materialize(d, task.partition)
            if task.action == ACTION_PARTIAL_REDUCE:
                s = leftfold_sum(arr)
                res = TaskResult(task.task_id, task.partition, task.action,
                                 float(s[0]), float(s[1]), float(s[2]),
                                 arr.shape[0], arr.nbytes, computed)
            else:
                res = TaskResult(task.task_id, task.partition, task.action,
                                 0.0, 0.0, 0.0, arr.shape[0], arr.nbytes, computed)
            self._send(res)
        except Exception as e:  # noqa: BLE001 - reported to master, never silent
            self._send(ErrorMsg(task.task_id, f"{type(e).__name__}: {e}"))


def run_master(cfg: ClusterConfig) -> Master:
    master = Master(cfg).start()
    return master


def run_worker(cfg: ClusterConfig, scratch_dir, memory_budget_bytes: int, name: str = ""):
    Worker(cfg, scratch_dir, memory_budget_bytes, name=name).run()


def submit(master_addr: tuple[str, int], pipeline_spec: dict,
           skip_reduce: bool = False, timeout_s: float = 300.0) -> JobResult:
    """Runs one job on the cluster and returns its result and timings."""
    job = dict(pipeline_spec)
    job["skip_reduce"] = skip_reduce
    try:
        sock = socket.create_connection(master_addr, timeout=10.0)
    except OSError as e:
        raise ConnectFailure(f"cannot reach master {master_addr}: {e}") from e
    try:
        sock.settimeout(timeout_s)
        send_message(sock, Submit(json.dumps(job)))
        reply = recv_message(sock)
    except socket.timeout as e:
        raise JobFailure(f"no reply from master within {timeout_s} s") from e
    finally:
        sock.close()
    if not isinstance(reply, JobDone):
        raise ProtocolError(f"expected JOB_DONE, got {type(reply).__name__}")
    report = json.loads(reply.report_json)
    if not report.get("ok"):
        raise JobFailure(report.get("error", "job failed"),
                         causes=report.get("causes", {}))
    vec = report["result"]
    return JobResult(
        result=None if vec is None else Vec3(*vec),
        timings=report["timings"],
        phases=report["phases"],
        stats=report["stats"],
    )


def send_shutdown(master_addr: tuple[str, int]):
    """Asks a running master to stop itself and its workers."""
    try:
        with socket.create_connection(master_addr, timeout=10.0) as sock:
            send_message(sock, Shutdown())
    except OSError as e:
        raise ConnectFailure(f"cannot reach master {master_addr}: {e}") from e
