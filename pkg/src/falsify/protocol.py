"""Wire protocol and server for driving simulators, plus an in-process path.

Frames are newline-delimited JSON objects with a ``type`` field.  A session
is exactly ``init`` then one or more ``step`` frames with strictly
increasing timestamps, then one ``done`` or ``error``.  The engine side
sends ``init`` (carrying a :class:`TestConfig`); the simulator side streams
``step`` frames and finishes the episode.

:class:`SimulatorServer` listens for simulator connections and hands each
one an episode; :func:`run_in_process` pushes the same message sequence
through the same state machine without sockets, so both paths validate and
build traces identically.  :func:`connect_simulator` is the client half,
used by tests and as a reference for writing external simulator plugins.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Union

from .mtl import Trace

__all__ = [
    "ProtocolError",
    "SimulatorError",
    "TestConfig",
    "InitMessage",
    "StepMessage",
    "DoneMessage",
    "ErrorMessage",
    "Message",
    "encode",
    "decode",
    "SessionStateMachine",
    "EpisodeResult",
    "SimulatorServer",
    "run_in_process",
    "connect_simulator",
]

DEFAULT_TIMEOUT = 60.0


class ProtocolError(ValueError):
    """Malformed frame or message out of order."""


class SimulatorError(RuntimeError):
    """The simulator itself failed while producing an episode."""


def _check_finite(value: float, what: str) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise ProtocolError(f"{what} must be finite, got {value!r}")
    return v


@dataclass(frozen=True)
class TestConfig:
    """Everything a simulator needs for one episode.

    ``features`` are the named environment values to apply; ``modes`` is an
    opaque key/value channel for intervention flags (perception override,
    rule toggles, noise seed) that the engine passes through untouched.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    episode_id: int
    features: Mapping[str, Union[float, str]]
    duration: float
    period: float
    modes: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.episode_id, int) or isinstance(self.episode_id, bool) or self.episode_id < 0:
            raise ValueError(f"episode_id must be a nonnegative integer, got {self.episode_id!r}")
        if not (isinstance(self.duration, (int, float)) and math.isfinite(self.duration) and self.duration > 0):
            raise ValueError(f"duration must be positive and finite, got {self.duration!r}")
        if not (isinstance(self.period, (int, float)) and math.isfinite(self.period) and self.period > 0):
            raise ValueError(f"period must be positive and finite, got {self.period!r}")
        clean: dict[str, Union[float, str]] = {}
        for name, value in self.features.items():
            if isinstance(value, str):
                clean[str(name)] = value
            elif isinstance(value, (int, float)) and not isinstance(value, bool):
                clean[str(name)] = _check_finite(value, f"feature {name!r}")
            else:
                raise ValueError(f"feature {name!r} must be a number or tag, got {value!r}")
        object.__setattr__(self, "features", clean)
        object.__setattr__(self, "modes", dict(self.modes))
        try:
            json.dumps(self.modes, allow_nan=False)
        except (TypeError, ValueError) as err:
            raise ValueError(f"modes must be JSON-safe: {err}") from None


@dataclass(frozen=True)
class InitMessage:
    config: TestConfig


@dataclass(frozen=True)
class StepMessage:
    t: float
    signals: Mapping[str, float]

    def __post_init__(self) -> None:
        _check_finite(self.t, "step timestamp")
        clean = {}
        for name, value in self.signals.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ProtocolError(f"signal {name!r} must be a number, got {value!r}")
            clean[str(name)] = _check_finite(value, f"signal {name!r}")
        if not clean:
            raise ProtocolError("a step must carry at least one signal")
        object.__setattr__(self, "signals", clean)


@dataclass(frozen=True)
class DoneMessage:
    status: str = "ok"


@dataclass(frozen=True)
class ErrorMessage:
    message: str


Message = Union[InitMessage, StepMessage, DoneMessage, ErrorMessage]


# ---------------------------------------------------------------------------
# Encoding


def _dump(obj: dict) -> str:
    try:
        return json.dumps(obj, allow_nan=False, separators=(",", ":")) + "\n"
    except ValueError as err:
        raise ProtocolError(f"refusing to encode non-finite value: {err}") from None


def encode(message: Message) -> str:
    """One message as one newline-terminated JSON line."""
    if isinstance(message, InitMessage):
        c = message.config
        return _dump(
            {
                "type": "init",
                "config": {
                    "episode_id": c.episode_id,
                    "features": dict(c.features),
                    "duration": c.duration,
                    "period": c.period,
                    "modes": dict(c.modes),
                },
            }
        )
    if isinstance(message, StepMessage):
        return _dump({"type": "step", "t": message.t, "signals": dict(message.signals)})
    if isinstance(message, DoneMessage):
        return _dump({"type": "done", "status": message.status})
    if isinstance(message, ErrorMessage):
        return _dump({"type": "error", "message": message.message})
    raise TypeError(f"not a protocol message: {message!r}")


def _reject_constant(text: str):
    raise ProtocolError(f"non-finite number {text!r} on the wire")


def _field(obj: dict, name: str, kind: str):
    if name not in obj:
        raise ProtocolError(f"{kind} frame is missing {name!r}")
    return obj[name]


def decode(line: str) -> Message:
    """Parse one frame; raises ProtocolError for anything malformed."""
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as err:
        raise ProtocolError(f"bad JSON frame: {err}") from None
    if not isinstance(obj, dict):
        raise ProtocolError(f"frame must be a JSON object, got {obj!r}")
    kind = obj.get("type")
    if kind == "init":
        raw = _field(obj, "config", "init")
        if not isinstance(raw, dict):
            raise ProtocolError("init config must be an object")
        try:
            config = TestConfig(
                episode_id=_field(raw, "episode_id", "init config"),
                features=_field(raw, "features", "init config"),
                duration=_field(raw, "duration", "init config"),
                period=_field(raw, "period", "init config"),
                modes=raw.get("modes", {}),
            )
        except (TypeError, ValueError) as err:
            raise ProtocolError(f"bad init config: {err}") from None
        return InitMessage(config)
    if kind == "step":
        t = _field(obj, "t", "step")
        signals = _field(obj, "signals", "step")
        if not isinstance(signals, dict):
            raise ProtocolError("step signals must be an object")
        try:
            return StepMessage(t=float(t), signals=signals)
        except (TypeError, ValueError) as err:
            raise ProtocolError(f"bad step frame: {err}") from None
    if kind == "done":
        status = obj.get("status", "ok")
        if not isinstance(status, str):
            raise ProtocolError("done status must be a string")
        return DoneMessage(status)
    if kind == "error":
        message = _field(obj, "message", "error")
        if not isinstance(message, str):
            raise ProtocolError("error message must be a string")
        return ErrorMessage(message)
    raise ProtocolError(f"unknown frame type {kind!r}")


# ---------------------------------------------------------------------------
# Session state machine


class SessionStateMachine:
    """Accepts exactly the language Init Step+ (Done | Error).

    Any other order raises ProtocolError and latches the ``failed`` state.
    Step timestamps must strictly increase and every step must carry the
    same signal names as the first one.
    """

    def __init__(self) -> None:
        self.state = "idle"
        self.config: Union[TestConfig, None] = None
        self.status: Union[str, None] = None
        self.error: Union[str, None] = None
        self._steps: list[tuple[float, Mapping[str, float]]] = []
        self._names: Union[frozenset, None] = None
        self._last_t: Union[float, None] = None

    def _violate(self, message: str) -> ProtocolError:
        self.state = "failed"
        self.error = message
        return ProtocolError(message)

    def handle(self, message: Message) -> None:
        if isinstance(message, InitMessage):
            if self.state != "idle":
                raise self._violate(f"init while {self.state}")
            self.config = message.config
            self.state = "running"
        elif isinstance(message, StepMessage):
            if self.state != "running":
                raise self._violate(f"step while {self.state}")
            if self._last_t is not None and message.t <= self._last_t:
                raise self._violate(
                    f"timestamps must strictly increase, got {message.t!r} after {self._last_t!r}"
                )
            names = frozenset(message.signals)
            if self._names is None:
                self._names = names
            elif names != self._names:
                raise self._violate("every step must carry the same signal set")
            self._last_t = message.t
            self._steps.append((message.t, message.signals))
        elif isinstance(message, DoneMessage):
            if self.state != "running":
                raise self._violate(f"done while {self.state}")
            if not self._steps:
                raise self._violate("done before any step")
            self.status = message.status
            self.state = "done"
        elif isinstance(message, ErrorMessage):
            self.state = "failed"
            self.error = message.message
        else:
            raise TypeError(f"not a protocol message: {message!r}")

    def trace(self) -> Trace:
        if self.state != "done":
            raise ProtocolError(f"no trace available in state {self.state!r}")
        return Trace.from_steps(self._steps)


# ---------------------------------------------------------------------------
# Server


@dataclass(frozen=True)
class EpisodeResult:
    """Outcome of driving one episode: 'done', 'error' or 'timeout'."""

    outcome: str
    trace: Union[Trace, None] = None
    status: Union[str, None] = None
    error: Union[str, None] = None


class SimulatorServer:
    """Listens for simulator clients and feeds them episodes.

    Each :meth:`run_episode` call pairs one pending episode with one
    connected client, sends the init frame, and reads the session to
    completion under a wall-clock timeout.  With ``keep_alive`` the
    connection is reused for further episodes instead of being closed after
    the first.
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        episode_timeout: float = DEFAULT_TIMEOUT,
        keep_alive: bool = False,
    ):
        self.episode_timeout = episode_timeout
        self.keep_alive = keep_alive
        self._listener = socket.create_server((host, port))
        self._connections: "queue.Queue[tuple]" = queue.Queue()
        self._closed = False
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._listener.getsockname()[:2]
        return host, port

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            self._connections.put((conn, None))

    def _acquire(self, deadline: float):
        remaining = deadline - time.monotonic()
        try:
            return self._connections.get(timeout=max(0.0, remaining))
        except queue.Empty:
            raise TimeoutError("no simulator connected before the episode timeout") from None

    def run_episode(self, config: TestConfig) -> EpisodeResult:
        deadline = time.monotonic() + self.episode_timeout
        try:
            conn, reader = self._acquire(deadline)
        except TimeoutError as err:
            return EpisodeResult(outcome="timeout", error=str(err))
        machine = SessionStateMachine()
        if reader is None:
            reader = conn.makefile("r", encoding="utf-8", newline="\n")
        try:
            machine.handle(InitMessage(config))
            conn.sendall(encode(InitMessage(config)).encode("utf-8"))
            while machine.state == "running":
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return EpisodeResult(outcome="timeout", error="episode timed out")
                conn.settimeout(remaining)
                line = reader.readline()
                if not line:
                    raise ProtocolError("connection closed mid-session")
                message = decode(line)
                if isinstance(message, InitMessage):
                    raise ProtocolError("client sent init")
                machine.handle(message)
            if machine.state == "done":
                result = EpisodeResult(outcome="done", trace=machine.trace(), status=machine.status)
                if self.keep_alive:
                    # Park the connection (and its read buffer) for the next
                    # episode instead of closing it.
                    conn.settimeout(None)
                    self._connections.put((conn, reader))
                    conn = None
            else:
                result = EpisodeResult(outcome="error", error=machine.error)
            return result
        except TimeoutError:
            return EpisodeResult(outcome="timeout", error="episode timed out")
        except ProtocolError as err:
            try:
                conn.sendall(encode(ErrorMessage(str(err))).encode("utf-8"))
            except OSError:
                pass
            return EpisodeResult(outcome="error", error=str(err))
        finally:
            if conn is not None:
                reader.close()
                try:
                    conn.close()
                except OSError:
                    pass

    def close(self) -> None:
        self._closed = True
        self._listener.close()
        while True:
            try:
                conn, reader = self._connections.get_nowait()
            except queue.Empty:
                break
            if reader is not None:
                reader.close()
            try:
                conn.close()
            except OSError:
                pass

    def __enter__(self) -> "SimulatorServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# In-process path


def run_in_process(config: TestConfig, simulator: Callable[[TestConfig], Trace]) -> Trace:
    """Run one episode without sockets, through the same session machinery.

    The simulator's trace is replayed message by message through a
    SessionStateMachine, so ordering, timestamp and signal-set rules are
    enforced exactly as on the wire and the resulting trace is equal to what
    the TCP path would hand back.
    """
    machine = SessionStateMachine()
    machine.handle(InitMessage(config))
    try:
        produced = simulator(config)
    except Exception as err:
        raise SimulatorError(f"simulator failed: {err}") from err
    for t, signals in produced.steps():
        machine.handle(StepMessage(t, signals))
    machine.handle(DoneMessage("ok"))
    return machine.trace()


# ---------------------------------------------------------------------------
# Client helper


def connect_simulator(
    address: tuple[str, int],
    simulator: Callable[[TestConfig], Trace],
    max_episodes: Union[int, None] = 1,
    timeout: float = DEFAULT_TIMEOUT,
) -> int:
    """Serve episodes to a SimulatorServer as a protocol client.

    Connects, waits for init frames, answers each with the simulator's trace
    as step frames plus done.  Returns the number of completed episodes;
    used by the loopback tests and as the reference client implementation.
    On a simulator failure an error frame is sent and the episode (but not
    the count of earlier ones) is abandoned.
    """
    completed = 0
    while max_episodes is None or completed < max_episodes:
        try:
            conn = socket.create_connection(address, timeout=timeout)
        except OSError:
            if completed:
                return completed
            raise
        reader = conn.makefile("r", encoding="utf-8", newline="\n")
        try:
            while max_episodes is None or completed < max_episodes:
                line = reader.readline()
                if not line:
                    return completed
                message = decode(line)
                if not isinstance(message, InitMessage):
                    raise ProtocolError(f"expected init, got {message!r}")
                try:
                    trace = simulator(message.config)
                except Exception as err:
                    conn.sendall(encode(ErrorMessage(f"simulator failed: {err}")).encode("utf-8"))
                    return completed
                out = []
                for t, signals in trace.steps():
                    out.append(encode(StepMessage(t, signals)))
                out.append(encode(DoneMessage("ok")))
                conn.sendall("".join(out).encode("utf-8"))
                completed += 1
        finally:
            reader.close()
            conn.close()
    return completed
