"""Execution engines: a deterministic virtual clock and a wall-clock twin.

Every active component in the system (informers, queue workers, the
scheduler loop, load generators, ...) is written as a plain generator that
yields :class:`Sleep` or :class:`WaitOn` commands. The same generator code
runs unchanged under both engines:

* :class:`SimEngine` interprets commands on a single-threaded event heap in
  virtual time. Given one seed, a run is fully deterministic.
* :class:`RealtimeEngine` drives each generator on its own thread, mapping
  ``Sleep`` to ``time.sleep`` and ``WaitOn`` to a condition wait.

Shared structures (stores, queues) carry ordinary locks, which are
uncontended no-ops under the virtual engine.
"""

from __future__ import annotations

import hashlib
import heapq
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Generator, Iterable

from .errors import DeadlineExceededError

ActorGen = Generator["Command", None, None]


class Command:
    __slots__ = ()


@dataclass(frozen=True)
class Sleep(Command):
    duration: float  # seconds; 0 yields control without advancing time


@dataclass(frozen=True)
class WaitOn(Command):
    """Park until ``signal.generation`` differs from the captured value.

    Capture the generation *before* checking the condition you are waiting
    for; a notify between check and park then wakes you immediately.
    """

    signal: "Signal"
    generation: int


class Signal:
    """Broadcast wakeup channel (eventcount style), created via ``engine.signal()``."""

    __slots__ = ("_engine", "_gen", "_cv", "_parked")

    def __init__(self, engine: "Engine"):
        self._engine = engine
        self._gen = 0
        self._cv = threading.Condition()
        self._parked: list = []  # SimEngine: tasks parked on this signal

    @property
    def generation(self) -> int:
        return self._gen

    def notify_all(self) -> None:
        self._engine._signal_notify(self)


def wait_until(signal: Signal, predicate: Callable[[], bool]) -> ActorGen:
    """Actor helper: block until ``predicate()`` holds, racelessly."""
    while True:
        gen = signal.generation
        if predicate():
            return
        yield WaitOn(signal, gen)


class Engine:
    """Common surface of both engines."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def now(self) -> float:
        raise NotImplementedError

    def spawn(self, gen: ActorGen, name: str = "actor"):
        raise NotImplementedError

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        raise NotImplementedError

    def signal(self) -> Signal:
        return Signal(self)

    def rng(self, label: str) -> random.Random:
        """A PRNG derived from (engine seed, label); stable across runs."""
        digest = hashlib.sha256(f"{self.seed}:{label}".encode()).digest()
        return random.Random(int.from_bytes(digest[:8], "big"))

    @property
    def running(self) -> bool:
        raise NotImplementedError

    def _signal_notify(self, signal: Signal) -> None:
        raise NotImplementedError


class _Task:
    __slots__ = ("gen", "name", "done")

    def __init__(self, gen: ActorGen, name: str):
        self.gen = gen
        self.name = name
        self.done = False


class SimEngine(Engine):
    """Deterministic discrete-event engine; time is integer microseconds."""

    def __init__(self, seed: int = 0, start_time: float = 0.0):
        super().__init__(seed)
        self._now_us = int(round(start_time * 1e6))
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._running = True

    @property
    def running(self) -> bool:
        return self._running

    def now(self) -> float:
        return self._now_us / 1e6

    def _push(self, at_us: int, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at_us, self._seq, kind, payload))

    def _delay_us(self, seconds: float) -> int:
        # A strictly positive delay must advance the clock by at least one
        # tick, otherwise an actor retrying a sub-microsecond wait (for
        # example a token bucket refill shaved thin by float error) would
        # respin at the same instant forever.
        if seconds <= 0.0:
            return 0
        return max(1, int(round(seconds * 1e6)))

    def spawn(self, gen: ActorGen, name: str = "actor") -> _Task:
        task = _Task(gen, name)
        self._push(self._now_us, "task", task)
        return task

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        self._push(self._now_us + self._delay_us(delay), "call", fn)

    def _signal_notify(self, signal: Signal) -> None:
        signal._gen += 1
        if signal._parked:
            for task in signal._parked:
                self._push(self._now_us, "task", task)
            signal._parked.clear()

    def _step_task(self, task: _Task) -> None:
        if task.done:
            return
        try:
            cmd = task.gen.send(None)
        except StopIteration:
            task.done = True
            return
        except Exception as exc:
            task.done = True
            raise RuntimeError(f"actor {task.name!r} crashed: {exc}") from exc
        if isinstance(cmd, Sleep):
            self._push(self._now_us + self._delay_us(cmd.duration), "task", task)
        elif isinstance(cmd, WaitOn):
            if cmd.signal.generation != cmd.generation:
                self._push(self._now_us, "task", task)
            else:
                cmd.signal._parked.append(task)
        else:
            task.done = True
            raise RuntimeError(f"actor {task.name!r} yielded unknown command {cmd!r}")

    def run(
        self,
        until: Callable[[], bool] | None = None,
        until_time: float | None = None,
        max_time: float | None = None,
    ) -> bool:
        """Process events in order.

        Stops when ``until()`` first holds (checked after each event), when
        virtual time would pass ``until_time``, or when the heap drains.
        Raises :class:`DeadlineExceededError` if ``max_time`` is reached with
        ``until`` still unsatisfied.
        """
        limit_us = None if until_time is None else int(round(until_time * 1e6))
        watchdog_us = None if max_time is None else int(round(max_time * 1e6))
        if until is not None and until():
            return True
        while self._heap:
            at_us = self._heap[0][0]
            if limit_us is not None and at_us > limit_us:
                self._now_us = max(self._now_us, limit_us)
                return until() if until is not None else True
            if watchdog_us is not None and at_us > watchdog_us:
                raise DeadlineExceededError(
                    f"virtual deadline {max_time}s exceeded (next event at {at_us / 1e6:.3f}s)"
                )
            _, _, kind, payload = heapq.heappop(self._heap)
            self._now_us = max(self._now_us, at_us)
            if kind == "task":
                self._step_task(payload)  # type: ignore[arg-type]
            else:
                payload()  # type: ignore[operator]
            if until is not None and until():
                return True
        if limit_us is not None:
            self._now_us = max(self._now_us, limit_us)
        return until() if until is not None else True

    def run_for(self, seconds: float) -> None:
        self.run(until_time=self.now() + seconds)


class RealtimeEngine(Engine):
    """Wall-clock engine; each actor runs on a daemon thread."""

    _STOP_POLL = 0.05

    def __init__(self, seed: int = 0):
        super().__init__(seed)
        self._t0 = time.monotonic()
        self._running = False
        self._started = False
        self._threads: list[threading.Thread] = []
        self._pending: list[tuple[ActorGen, str]] = []
        self._timers: list[threading.Timer] = []
        self._lock = threading.Lock()

    @property
    def running(self) -> bool:
        return self._running

    def now(self) -> float:
        return time.monotonic() - self._t0

    def spawn(self, gen: ActorGen, name: str = "actor"):
        with self._lock:
            if not self._started:
                self._pending.append((gen, name))
                return None
        return self._launch(gen, name)

    def _launch(self, gen: ActorGen, name: str) -> threading.Thread:
        thread = threading.Thread(target=self._drive, args=(gen, name), name=name, daemon=True)
        self._threads.append(thread)
        thread.start()
        return thread

    def start(self) -> None:
        with self._lock:
            self._t0 = time.monotonic()
            self._running = True
            self._started = True
            pending, self._pending = self._pending, []
        for gen, name in pending:
            self._launch(gen, name)

    def stop(self) -> None:
        self._running = False
        with self._lock:
            timers, self._timers = self._timers, []
        for timer in timers:
            timer.cancel()

    def join(self, timeout: float = 5.0) -> None:
        deadline = time.monotonic() + timeout
        for thread in self._threads:
            thread.join(max(0.0, deadline - time.monotonic()))

    def call_later(self, delay: float, fn: Callable[[], None]) -> None:
        timer = threading.Timer(delay, fn)
        timer.daemon = True
        with self._lock:
            self._timers.append(timer)
            # drop references to fired timers occasionally
            if len(self._timers) > 4096:
                self._timers = [t for t in self._timers if t.is_alive()]
        timer.start()

    def _signal_notify(self, signal: Signal) -> None:
        with signal._cv:
            signal._gen += 1
            signal._cv.notify_all()

    def _sleep(self, duration: float) -> None:
        deadline = time.monotonic() + duration
        while self._running:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            time.sleep(min(remaining, 0.5))

    def _wait(self, signal: Signal, generation: int) -> None:
        with signal._cv:
            while self._running and signal._gen == generation:
                signal._cv.wait(self._STOP_POLL)

    def _drive(self, gen: ActorGen, name: str) -> None:
        try:
            while self._running:
                try:
                    cmd = gen.send(None)
                except StopIteration:
                    return
                if isinstance(cmd, Sleep):
                    if cmd.duration > 0:
                        self._sleep(cmd.duration)
                elif isinstance(cmd, WaitOn):
                    self._wait(cmd.signal, cmd.generation)
                else:
                    raise RuntimeError(f"actor {name!r} yielded unknown command {cmd!r}")
        except Exception:
            if self._running:
                raise


class TokenBucket:
    """Shared deterministic token bucket clocked by an engine.

    ``rate=None`` disables limiting. ``try_acquire`` returns 0.0 on grant or
    the time until a token frees up; ``acquire`` is the blocking actor form.
    """

    def __init__(self, engine: Engine, rate: float | None, burst: int = 1):
        if rate is not None and rate <= 0:
            raise ValueError("rate must be positive")
        if burst < 1:
            raise ValueError("burst must be >= 1")
        self._engine = engine
        self.rate = rate
        self.burst = burst
        self._tokens = float(burst)
        self._last = engine.now()
        self._lock = threading.Lock()

    def try_acquire(self) -> float:
        if self.rate is None:
            return 0.0
        with self._lock:
            now = self._engine.now()
            if now > self._last:
                self._tokens = min(float(self.burst), self._tokens + (now - self._last) * self.rate)
                self._last = now
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return 0.0
            return (1.0 - self._tokens) / self.rate

    def acquire(self) -> ActorGen:
        while True:
            wait = self.try_acquire()
            if wait <= 0.0:
                return
            yield Sleep(wait)

    def reserve(self) -> float:
        """Claim the next token unconditionally; returns the delay until it
        may be used. Callers are served in reservation order, so many actors
        draining one bucket each park exactly once instead of racing."""
        if self.rate is None:
            return 0.0
        with self._lock:
            now = self._engine.now()
            if now > self._last:
                self._tokens = min(
                    float(self.burst), self._tokens + (now - self._last) * self.rate
                )
                self._last = now
            self._tokens -= 1.0
            if self._tokens >= 0.0:
                return 0.0
            return -self._tokens / self.rate

    def acquire_reserved(self) -> ActorGen:
        wait = self.reserve()
        if wait > 0.0:
            yield Sleep(wait)


def drain(gens: Iterable[ActorGen]) -> ActorGen:
    """Run sub-generators sequentially inside one actor."""
    for gen in gens:
        yield from gen
