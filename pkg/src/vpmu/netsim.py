"""Deterministic discrete-event transport with byte accounting.

Links carry messages under a configured delay distribution (constant,
uniform, or shifted lognormal), optional Bernoulli loss, FIFO clamping,
and a constant per-message header overhead used for bandwidth accounting.
A single event loop ordered by (time, insertion sequence) makes runs with
equal seeds and configurations reproduce byte- and time-identical logs.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

DEFAULT_OVERHEAD_BYTES = 210  # modeled HTTP + TCP/IP headers per message
TCP_IP_FLOOR_BYTES = 40  # bare TCP-IP header lower bound


class NetsimError(ValueError):
    pass


@dataclass(frozen=True)
class LinkSpec:
    """Configured behavior of one link class.

    kind: "constant" (delay), "uniform" (low, high) or "lognormal"
    (shift, mu, sigma of the underlying normal), all in seconds.
    """

    name: str
    kind: str
    delay: float = 0.0
    low: float = 0.0
    high: float = 0.0
    shift: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0
    overhead_bytes: int = DEFAULT_OVERHEAD_BYTES
    loss_probability: float = 0.0
    fifo: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "uniform", "lognormal"):
            raise NetsimError(f"link {self.name}: unknown delay model {self.kind!r}")
        if self.kind == "constant" and self.delay < 0:
            raise NetsimError(f"link {self.name}: negative delay")
        if self.kind == "uniform" and not 0 <= self.low <= self.high:
            raise NetsimError(f"link {self.name}: bad uniform bounds")
        if self.kind == "lognormal" and (self.shift < 0 or self.sigma < 0):
            raise NetsimError(f"link {self.name}: bad lognormal parameters")
        if self.overhead_bytes < 0:
            raise NetsimError(f"link {self.name}: negative overhead")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise NetsimError(f"link {self.name}: loss probability outside [0, 1]")


def parse_links(text: str) -> dict[str, LinkSpec]:
    """Read link specs, one per line: `name kind key=value ...`."""
    specs: dict[str, LinkSpec] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) < 2:
            raise NetsimError(f"line {line_no}: need at least `name kind`")
        name, kind = parts[0], parts[1]
        kwargs: dict[str, Any] = {}
        for item in parts[2:]:
            key, sep, value = item.partition("=")
            if not sep:
                raise NetsimError(f"line {line_no}: expected key=value, got {item!r}")
            if key in ("delay", "low", "high", "shift", "mu", "sigma"):
                kwargs[key] = float(value)
            elif key == "overhead":
                kwargs["overhead_bytes"] = int(value)
            elif key == "loss":
                kwargs["loss_probability"] = float(value)
            elif key == "fifo":
                kwargs["fifo"] = value.lower() in ("1", "true", "yes")
            else:
                raise NetsimError(f"line {line_no}: unknown key {key!r}")
        specs[name] = LinkSpec(name=name, kind=kind, **kwargs)
    return specs


def format_links(specs: dict[str, LinkSpec]) -> str:
    lines = []
    for spec in specs.values():
        if spec.kind == "constant":
            params = f"delay={spec.delay!r}"
        elif spec.kind == "uniform":
            params = f"low={spec.low!r} high={spec.high!r}"
        else:
            params = f"shift={spec.shift!r} mu={spec.mu!r} sigma={spec.sigma!r}"
        lines.append(
            f"{spec.name} {spec.kind} {params} overhead={spec.overhead_bytes}"
            f" loss={spec.loss_probability!r} fifo={1 if spec.fifo else 0}"
        )
    return "\n".join(lines) + "\n"


@dataclass
class Message:
    """One transported payload with its byte accounting and origin stamp."""

    src: str
    dst: str
    payload: Any
    size_bytes: int
    sent_at: float
    frame_ts: float | None = None  # origin frame timestamp, seconds

    def __post_init__(self) -> None:
        if self.size_bytes <= 0:
            raise NetsimError("payload length must be > 0")


@dataclass(frozen=True)
class LatencyRecord:
    """Frame timestamp versus application-level receipt time (seconds)."""

    frame_ts: float
    received_at: float

    @property
    def latency(self) -> float:
        return self.received_at - self.frame_ts

    def __post_init__(self) -> None:
        if self.received_at <= self.frame_ts:
            raise NetsimError("receipt cannot precede the frame timestamp")


class Simulator:
    """Event loop ordered by (time, insertion sequence)."""

    def __init__(self) -> None:
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self.event_log: list[str] = []

    def schedule(self, delay: float, fn: Callable[[], None]) -> None:
        if delay < 0:
            raise NetsimError("cannot schedule into the past")
        heapq.heappush(self._heap, (self.now + delay, self._seq, fn))
        self._seq += 1

    def schedule_at(self, at: float, fn: Callable[[], None]) -> None:
        self.schedule(max(0.0, at - self.now), fn)

    def log(self, entry: str) -> None:
        self.event_log.append(f"{self.now:.9f} {entry}")

    def run(self, until: float | None = None) -> None:
        while self._heap:
            t, _, fn = self._heap[0]
            if until is not None and t > until:
                break
            heapq.heappop(self._heap)
            self.now = t
            fn()
        if until is not None and until > self.now:
            self.now = until


class Link:
    """Runtime state of one link instance: RNG stream, FIFO clamp, counters."""

    def __init__(self, spec: LinkSpec, sim: Simulator, rng: np.random.Generator):
        self.spec = spec
        self.sim = sim
        self.rng = rng
        self.last_delivery = 0.0
        self.messages_sent = 0
        self.messages_dropped = 0
        self.bytes_carried = 0

    def sample_delay(self) -> float:
        spec = self.spec
        if spec.kind == "constant":
            return spec.delay
        if spec.kind == "uniform":
            return self.rng.uniform(spec.low, spec.high)
        return spec.shift + math.exp(self.rng.normal(spec.mu, spec.sigma))

    def send(self, message: Message, on_deliver: Callable[[Message], None]) -> None:
        """Schedule delivery (or drop) of a message sent now."""
        if self.spec.loss_probability > 0.0 and self.rng.random() < self.spec.loss_probability:
            self.messages_dropped += 1
            self.sim.log(f"drop link={self.spec.name} src={message.src} dst={message.dst}")
            return
        delivery = self.sim.now + self.sample_delay()
        if self.spec.fifo:
            delivery = max(delivery, self.last_delivery)
            self.last_delivery = delivery
        self.messages_sent += 1
        self.bytes_carried += message.size_bytes + self.spec.overhead_bytes
        self.sim.log(
            f"send link={self.spec.name} src={message.src} dst={message.dst}"
            f" bytes={message.size_bytes} eta={delivery:.9f}"
        )
        self.sim.schedule_at(delivery, lambda: on_deliver(message))


class Network:
    """Addressable components joined by per-pair link instances.

    Each (src, dst) pair gets its own instance of the named link spec with
    an independent RNG stream and FIFO state, so parallel streams sample
    delays independently.
    """

    def __init__(self, sim: Simulator, seed_seq: np.random.SeedSequence):
        self.sim = sim
        self._seed_seq = seed_seq
        self._handlers: dict[str, Callable[[Message], None]] = {}
        self._routes: dict[tuple[str, str], Link] = {}
        self._specs: dict[tuple[str, str], LinkSpec] = {}

    def register(self, address: str, handler: Callable[[Message], None]) -> None:
        if address in self._handlers:
            raise NetsimError(f"address {address!r} already registered")
        self._handlers[address] = handler

    def connect(self, src: str, dst: str, spec: LinkSpec) -> None:
        self._specs[(src, dst)] = spec

    def _link_for(self, src: str, dst: str) -> Link:
        key = (src, dst)
        if key not in self._routes:
            spec = self._specs.get(key)
            if spec is None:
                raise NetsimError(f"no link configured from {src!r} to {dst!r}")
            # per-route child stream, independent of link creation order
            child = np.random.SeedSequence(
                entropy=self._seed_seq.entropy,
                spawn_key=tuple(self._seed_seq.spawn_key) + (hash_route(src, dst),),
            )
            self._routes[key] = Link(spec, self.sim, np.random.default_rng(child))
        return self._routes[key]

    def send(
        self,
        src: str,
        dst: str,
        payload: Any,
        size_bytes: int,
        frame_ts: float | None = None,
    ) -> None:
        message = Message(
            src=src,
            dst=dst,
            payload=payload,
            size_bytes=size_bytes,
            sent_at=self.sim.now,
            frame_ts=frame_ts,
        )
        link = self._link_for(src, dst)
        link.send(message, self._dispatch)

    def _dispatch(self, message: Message) -> None:
        handler = self._handlers.get(message.dst)
        if handler is None:
            raise NetsimError(f"message for unregistered address {message.dst!r}")
        handler(message)

    def link_stats(self) -> dict[tuple[str, str], tuple[int, int, int]]:
        return {
            key: (link.messages_sent, link.messages_dropped, link.bytes_carried)
            for key, link in self._routes.items()
        }


def hash_route(src: str, dst: str) -> int:
    """Stable non-negative hash of a route, independent of PYTHONHASHSEED."""
    h = 2166136261
    for ch in f"{src}->{dst}".encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def stream_bandwidth(frame_bytes: int, rate: int, overhead: int, streams: int) -> int:
    """Bits per second of `streams` parallel frame flows with per-message overhead."""
    if min(frame_bytes, rate, overhead, streams) < 0:
        raise NetsimError("bandwidth inputs must be non-negative")
    return streams * (frame_bytes + overhead) * rate * 8


def bandwidth_saving(local_bps: float, remote_bps: float) -> float:
    """Percent saved by the aggregated flow, rounded to one decimal."""
    if remote_bps <= 0:
        raise NetsimError("remote bandwidth must be > 0")
    return round(100.0 * (1.0 - local_bps / remote_bps), 1)


@dataclass(frozen=True)
class LatencySummary:
    count: int
    min_s: float
    mean_s: float
    max_s: float


def latency_cdf(
    records: list[LatencyRecord],
) -> tuple[np.ndarray, np.ndarray, LatencySummary]:
    """Empirical CDF: sorted latencies and cumulative fractions i/n."""
    if not records:
        raise NetsimError("no latency records")
    lat = np.sort(np.array([r.latency for r in records]))
    fractions = np.arange(1, len(lat) + 1) / len(lat)
    summary = LatencySummary(
        count=len(lat), min_s=float(lat[0]), mean_s=float(lat.mean()), max_s=float(lat[-1])
    )
    return lat, fractions, summary


def dependability(records: list[LatencyRecord], threshold_s: float) -> float:
    """Percent of records with latency at or below the threshold."""
    if not records:
        raise NetsimError("no latency records")
    hits = sum(1 for r in records if r.latency <= threshold_s)
    return 100.0 * hits / len(records)
