"""Capture task management and the JSON-lines control daemon.

A :class:`TaskManager` owns one frame source and any number of capture tasks
(feature extraction to CSV, raw capture to PCAP).  The same five operations
are exposed over a local stream socket, one JSON object per line::

    -> {"id": 7, "cmd": "start_pcap", "args": {"sink": "/tmp/x.pcap", "filter": "wpan.src16 == 0x1a01"}}
    <- {"id": 7, "ok": true, "result": {"task": "pcap-1"}}
"""
from __future__ import annotations

import itertools
import json
import logging
import os
import socket
import socketserver
import threading
import time
from importlib import resources
from typing import Any, Optional

from .features import FeatureCsvWriter, WindowAggregator, WindowConfig
from .filters import FilterError, compile_filter, parse_filter
from .pcapio import PcapWriter
from .pipeline import DEFAULT_QUEUE_CAPACITY, BoundedQueue, Dispatcher, OverflowPolicy, Packet, Source, Subscriber

log = logging.getLogger(__name__)


class ServiceError(Exception):
    code = "ServiceError"

    def to_json(self) -> dict:
        return {"type": self.code, "message": str(self)}


class BadFilter(ServiceError):
    code = "BadFilter"

    def __init__(self, err: FilterError):
        super().__init__(str(err))
        self.position = err.position

    def to_json(self) -> dict:
        return {**super().to_json(), "position": self.position}


class SinkUnwritable(ServiceError):
    code = "SinkUnwritable"


class NoSource(ServiceError):
    code = "NoSource"


class UnknownTask(ServiceError):
    code = "UnknownTask"


class TaskStillRunning(ServiceError):
    code = "TaskStillRunning"


class BadRequest(ServiceError):
    code = "BadRequest"


RUNNING, STOPPED, FAILED = "running", "stopped", "failed"


class CaptureTask(Subscriber):
    kind = "abstract"

    def __init__(self, task_id: str, queue: BoundedQueue, filter_text: Optional[str],
                 policy: OverflowPolicy, sink: str, order: int):
        predicate = None
        if filter_text:
            predicate = compile_filter(parse_filter(filter_text))
        super().__init__(queue, predicate, policy)
        self.id = task_id
        self.filter_text = filter_text or None
        self.sink = sink
        self.state = RUNNING
        self.reason: Optional[str] = None
        self.frames_processed = 0
        self.started_at = time.time()
        self.order = order
        self._finish = threading.Event()
        self._done = threading.Event()
        self._thread = threading.Thread(target=self._run, name=f"task-{task_id}", daemon=True)

    # sink hooks
    def process(self, pkt: Packet) -> None:
        raise NotImplementedError

    def finalize(self) -> None:
        raise NotImplementedError

    def abort(self) -> None:
        pass

    def start(self) -> None:
        self._thread.start()

    def _run(self) -> None:
        q = self.queue
        try:
            while True:
                pkt = q.get(timeout=0.05)
                if pkt is None:
                    if self._finish.is_set() and q.occupancy == 0:
                        break
                    continue
                self.process(pkt)
                self.frames_processed += 1
            self.finalize()
        except Exception as e:  # sink failure ends the task, never the daemon
            log.exception("task %s failed", self.id)
            self.accepting = False
            self.state = FAILED
            self.reason = f"{type(e).__name__}: {e}"
            self.abort()
        finally:
            q.close()
            self._done.set()

    def request_stop(self, reason: str) -> None:
        self.accepting = False
        if self.state == RUNNING:
            self.state = STOPPED
            self.reason = reason
        self._finish.set()

    def on_overflow_stop(self) -> None:
        self.request_stop("overflow")

    def join(self, timeout: Optional[float] = None) -> bool:
        return self._done.wait(timeout)

    @property
    def idle(self) -> bool:
        """No frame queued or in flight."""
        q = self.queue
        return q.occupancy == 0 and q.popped == self.frames_processed

    def status(self) -> dict[str, Any]:
        q = self.queue
        return {
            "task": self.id,
            "kind": self.kind,
            "state": self.state,
            "reason": self.reason,
            "filter": self.filter_text,
            "policy": self.policy.value,
            "sink": self.sink,
            "frames_processed": self.frames_processed,
            "frames_dropped": q.dropped,
            "windows_emitted": 0,
            "started_at": self.started_at,
            "queue": q.counters(),
        }


class FeatureTask(CaptureTask):
    kind = "features"

    def __init__(self, task_id, queue, filter_text, policy, sink, order, config: WindowConfig):
        super().__init__(task_id, queue, filter_text, policy, sink, order)
        self.config = config
        self.aggregator = WindowAggregator(config)
        self.writer = FeatureCsvWriter(sink, config)

    def process(self, pkt: Packet) -> None:
        if pkt.mac is None:
            return
        rows = self.aggregator.ingest(pkt.mac)
        if rows:
            self.writer.write_rows(rows)

    def finalize(self) -> None:
        self.writer.write_rows(self.aggregator.flush(truncated=True))
        self.writer.close()

    def abort(self) -> None:
        try:
            self.writer.close()
        except Exception:
            pass

    def status(self) -> dict[str, Any]:
        st = super().status()
        st["windows_emitted"] = self.aggregator.windows_emitted
        st["rows_written"] = self.writer.count
        st["late_frames"] = self.aggregator.late_frames
        st["window"] = self.config.duration
        return st


class PcapTask(CaptureTask):
    kind = "pcap"

    def __init__(self, task_id, queue, filter_text, policy, sink, order, with_fcs: bool):
        super().__init__(task_id, queue, filter_text, policy, sink, order)
        self.writer = PcapWriter(sink, with_fcs=with_fcs)

    def process(self, pkt: Packet) -> None:
        self.writer.write(pkt.raw)

    def finalize(self) -> None:
        self.writer.close()

    def abort(self) -> None:
        try:
            self.writer.close()
        except Exception:
            pass

    def status(self) -> dict[str, Any]:
        st = super().status()
        st["frames_written"] = self.writer.count
        return st


def _policy(value) -> OverflowPolicy:
    if isinstance(value, OverflowPolicy):
        return value
    try:
        return OverflowPolicy(value)
    except ValueError:
        raise BadRequest(f"unknown overflow policy {value!r} (use 'drop' or 'stop')") from None


class TaskManager:
    """In-process implementation of the five service operations."""

    def __init__(self, source: Optional[Source] = None, queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
                 autostart: bool = False):
        # autostart: begin pumping the source when the first task registers,
        # so a replayed capture is not consumed before anyone listens.
        self.queue_capacity = queue_capacity
        self.autostart = autostart
        self.tasks: dict[str, CaptureTask] = {}
        self._lock = threading.RLock()
        self._ids = itertools.count(1)
        self._order = itertools.count()
        self.source: Optional[Source] = None
        self.dispatcher: Optional[Dispatcher] = None
        self._source_thread: Optional[threading.Thread] = None
        self.source_error: Optional[str] = None
        if source is not None:
            self.set_source(source)

    # -- source -----------------------------------------------------------
    def set_source(self, source: Source) -> None:
        with self._lock:
            if self._source_thread is not None and self._source_thread.is_alive():
                raise ServiceError("a source is already running")
            self.source = source
            old = self.dispatcher
            self.dispatcher = Dispatcher(fcs_present=source.fcs_present)
            if old is not None:
                for sub in old.subscribers:
                    self.dispatcher.register(sub)

    def start(self) -> None:
        with self._lock:
            if self.source is None:
                raise NoSource("no frame source configured")
            if self._source_thread is not None:
                return
            self._source_thread = threading.Thread(target=self._pump, name="source", daemon=True)
            self._source_thread.start()

    def _pump(self) -> None:
        try:
            self.dispatcher.run(self.source)
        except Exception as e:
            log.exception("source failed")
            self.source_error = f"{type(e).__name__}: {e}"

    @property
    def source_done(self) -> bool:
        t = self._source_thread
        return t is not None and not t.is_alive()

    def wait_source(self, timeout: Optional[float] = None) -> bool:
        t = self._source_thread
        if t is None:
            return False
        t.join(timeout)
        return not t.is_alive()

    def wait_idle(self, timeout: float = 30.0) -> bool:
        """Wait until the source is exhausted and every task has drained its queue."""
        deadline = time.monotonic() + timeout
        if not self.wait_source(timeout):
            return False
        while time.monotonic() < deadline:
            if all(t.idle or t.state != RUNNING for t in list(self.tasks.values())):
                return True
            time.sleep(0.005)
        return False

    # -- the five operations ----------------------------------------------
    def _prepare(self, filter_text: Optional[str], policy) -> OverflowPolicy:
        if self.source is None:
            raise NoSource("no frame source configured")
        if filter_text:
            try:
                parse_filter(filter_text)
            except FilterError as e:
                raise BadFilter(e) from e
        return _policy(policy)

    def _register(self, task: CaptureTask) -> str:
        self.tasks[task.id] = task
        task.start()
        self.dispatcher.register(task)
        if self.autostart and self._source_thread is None:
            self.start()
        return task.id

    def start_feature_task(self, config: WindowConfig, sink: str | os.PathLike, filter: Optional[str] = None,
                           queue_capacity: Optional[int] = None,
                           policy: OverflowPolicy | str = OverflowPolicy.DROP_NEWEST) -> str:
        with self._lock:
            pol = self._prepare(filter, policy)
            task_id = f"feat-{next(self._ids)}"
            q = BoundedQueue(queue_capacity or self.queue_capacity)
            try:
                task = FeatureTask(task_id, q, filter, pol, os.fspath(sink), next(self._order), config)
            except OSError as e:
                raise SinkUnwritable(f"cannot open {sink}: {e}") from e
            return self._register(task)

    def start_pcap_task(self, sink: str | os.PathLike, filter: Optional[str] = None,
                        queue_capacity: Optional[int] = None,
                        policy: OverflowPolicy | str = OverflowPolicy.DROP_NEWEST,
                        with_fcs: Optional[bool] = None) -> str:
        with self._lock:
            pol = self._prepare(filter, policy)
            task_id = f"pcap-{next(self._ids)}"
            q = BoundedQueue(queue_capacity or self.queue_capacity)
            fcs = self.source.fcs_present if with_fcs is None else with_fcs
            try:
                task = PcapTask(task_id, q, filter, pol, os.fspath(sink), next(self._order), fcs)
            except OSError as e:
                raise SinkUnwritable(f"cannot open {sink}: {e}") from e
            return self._register(task)

    def _get(self, task_id: str) -> CaptureTask:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise UnknownTask(f"no task {task_id!r}") from None

    def stop_task(self, task_id: str, timeout: float = 30.0) -> dict[str, Any]:
        """Stop, flush and close the task's sink; stopping twice is harmless."""
        with self._lock:
            task = self._get(task_id)
            task.request_stop("user")
            task.join(timeout)
            if self.dispatcher is not None:
                self.dispatcher.unregister(task)
            return task.status()

    def task_status(self, task_id: Optional[str] = None) -> dict[str, Any] | list[dict[str, Any]]:
        with self._lock:
            if task_id is not None:
                return self._get(task_id).status()
            return [t.status() for t in sorted(self.tasks.values(), key=lambda t: (t.started_at, t.order))]

    def remove_task(self, task_id: str) -> dict[str, Any]:
        with self._lock:
            task = self._get(task_id)
            if task.state == RUNNING:
                raise TaskStillRunning(f"task {task_id} is running; stop it first")
            task.join(30.0)
            if self.dispatcher is not None:
                self.dispatcher.unregister(task)
            del self.tasks[task_id]
            return {"task": task_id, "removed": True}

    def shutdown(self) -> None:
        with self._lock:
            if self.source is not None:
                self.source.stop()
            if self.dispatcher is not None:
                self.dispatcher.stop()
            for tid, task in list(self.tasks.items()):
                if task.state == RUNNING:
                    self.stop_task(tid)
        if self._source_thread is not None:
            self._source_thread.join(5.0)


# ---------------------------------------------------------------------------
# JSON-lines protocol

COMMANDS = ("start_features", "start_pcap", "stop", "status", "remove")


def load_schema() -> dict:
    return json.loads(resources.files("scent").joinpath("control_protocol.schema.json").read_text())


_validator = None


def _validate_request(req: Any) -> None:
    global _validator
    import jsonschema

    if _validator is None:
        schema = load_schema()
        _validator = jsonschema.Draft202012Validator({**schema["$defs"]["request"], "$defs": schema["$defs"]})
    errors = sorted(_validator.iter_errors(req), key=lambda e: list(e.path))
    if errors:
        raise BadRequest(errors[0].message)


def handle_request(manager: TaskManager, req: Any) -> dict[str, Any]:
    """Execute one control request; always returns exactly one response."""
    corr = req.get("id") if isinstance(req, dict) else None
    try:
        _validate_request(req)
        cmd = req["cmd"]
        args = req.get("args", {})
        if cmd == "start_features":
            cfg = WindowConfig.from_spec(args.get("window", 5.0), args.get("features", "all"),
                                         args.get("direction_split", True))
            result: Any = {"task": manager.start_feature_task(
                cfg, args["sink"], args.get("filter"), args.get("queue_capacity"), args.get("policy", "drop"))}
        elif cmd == "start_pcap":
            result = {"task": manager.start_pcap_task(
                args["sink"], args.get("filter"), args.get("queue_capacity"), args.get("policy", "drop"))}
        elif cmd == "stop":
            result = manager.stop_task(args["task"])
        elif cmd == "status":
            result = manager.task_status(args.get("task"))
        else:
            result = manager.remove_task(args["task"])
        return {"id": corr, "ok": True, "result": result}
    except ServiceError as e:
        return {"id": corr, "ok": False, "error": e.to_json()}
    except ValueError as e:
        return {"id": corr, "ok": False, "error": {"type": "BadRequest", "message": str(e)}}


def handle_line(manager: TaskManager, line: str | bytes) -> str:
    try:
        req = json.loads(line)
    except json.JSONDecodeError as e:
        resp = {"id": None, "ok": False, "error": {"type": "BadRequest", "message": f"invalid JSON: {e}"}}
    else:
        resp = handle_request(manager, req)
    return json.dumps(resp, separators=(",", ":")) + "\n"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for line in self.rfile:
            if not line.strip():
                continue
            with self.server.command_lock:
                out = handle_line(self.server.manager, line)
            self.wfile.write(out.encode())
            self.wfile.flush()


class ControlServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True

    def __init__(self, path: str | os.PathLike, manager: TaskManager):
        path = os.fspath(path)
        if os.path.exists(path):
            os.unlink(path)
        super().__init__(path, _Handler)
        self.path = path
        self.manager = manager
        self.command_lock = threading.Lock()

    def server_close(self) -> None:
        super().server_close()
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


class ControlClient:
    def __init__(self, path: str | os.PathLike, timeout: float = 30.0):
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.settimeout(timeout)
        self._sock.connect(os.fspath(path))
        self._rfile = self._sock.makefile("rb")
        self._ids = itertools.count(1)

    def request(self, cmd: str, **args) -> dict[str, Any]:
        req = {"id": next(self._ids), "cmd": cmd, "args": {k: v for k, v in args.items() if v is not None}}
        self._sock.sendall((json.dumps(req) + "\n").encode())
        return json.loads(self._rfile.readline())

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()

    def __enter__(self) -> "ControlClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
