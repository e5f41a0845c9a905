"""Virtual object: the cyber counterpart of one physical PMU.

A VO caches the latest frames of its device at full rate and exposes them
through a small resource interface: field selection, windowed averaging,
and triggers that push selected data (or the raw frame) to a destination
resource or topic.  One VO is a single logical actor; ingest, reads and
trigger evaluation are serialized per VO.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from .codec import TIME_BASE, DataFrame, FrameLayout, Timestamp, decode_data_frame

SCALAR_KEYS = ("idcode", "soc", "fracsec", "freq", "rocof")

COMPARATORS = {
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
}

DEFAULT_BUFFER_CAPACITY = 600  # 12 s of frames at 50 fps


class VoError(ValueError):
    pass


class NoDataError(VoError):
    """Read against an empty buffer."""


class SelectorError(VoError):
    """Requested field outside the canonical key set of the buffered data."""


class TriggerError(VoError):
    """Malformed or duplicate trigger registration."""


def canonical_keys(n_phasors: int) -> tuple[str, ...]:
    keys = list(SCALAR_KEYS)
    for k in range(n_phasors):
        keys.append(f"phasor.{k}.re")
        keys.append(f"phasor.{k}.im")
    return tuple(keys)


def key_value_record(frame: DataFrame) -> dict[str, float | int]:
    """Flatten a single-block frame onto the canonical key set."""
    if len(frame.blocks) != 1:
        raise VoError("key-value projection is defined for single-block frames")
    block = frame.blocks[0]
    record: dict[str, float | int] = {
        "idcode": frame.idcode,
        "soc": frame.timestamp.soc,
        "fracsec": frame.timestamp.fracsec,
        "freq": block.freq_dev_mhz,
        "rocof": block.rocof_hzps,
    }
    for k, ph in enumerate(block.phasors):
        record[f"phasor.{k}.re"] = ph.real
        record[f"phasor.{k}.im"] = ph.imag
    return record


def serialize_kv(record: dict[str, float | int]) -> bytes:
    """Deterministic decimal-text wire form, one `key=value` per line."""
    def sort_key(key: str):
        if key in SCALAR_KEYS:
            return (0, SCALAR_KEYS.index(key), "")
        return (1, int(key.split(".")[1]), key.split(".")[2])

    lines = [f"{k}={record[k]!r}" for k in sorted(record, key=sort_key)]
    return ("\n".join(lines) + "\n").encode("ascii")


def parse_kv(raw: bytes) -> dict[str, float | int]:
    record: dict[str, float | int] = {}
    for line in raw.decode("ascii").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key in ("idcode", "soc", "fracsec"):
            record[key] = int(value)
        else:
            record[key] = float(value)
    return record


def record_timestamp(record: dict[str, float | int]) -> Timestamp:
    return Timestamp(int(record["soc"]), int(record["fracsec"]))


@dataclass(frozen=True)
class Trigger:
    """Push rule: periodic (period + phase anchor) or threshold on a field.

    `selector` lists the fields to push; None forwards the raw frame, which
    keeps the device's native encapsulation available downstream.
    """

    id: str
    kind: str  # "periodic" | "threshold"
    destination: str = ""
    topic: str | None = None
    period_s: float = 0.0
    phase_s: float = 0.0
    field_name: str = ""
    comparator: str = ">"
    bound: float = 0.0
    selector: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "periodic":
            if self.period_s <= 0:
                raise TriggerError(f"trigger {self.id}: period must be > 0")
        elif self.kind == "threshold":
            if self.comparator not in COMPARATORS:
                raise TriggerError(f"trigger {self.id}: comparator {self.comparator!r}")
            if not self.field_name:
                raise TriggerError(f"trigger {self.id}: threshold needs a field")
        else:
            raise TriggerError(f"trigger {self.id}: unknown kind {self.kind!r}")
        if not self.destination and self.topic is None:
            raise TriggerError(f"trigger {self.id}: needs a destination or topic")

    @property
    def period_us(self) -> int:
        return round(self.period_s * TIME_BASE)

    @property
    def phase_us(self) -> int:
        return round(self.phase_s * TIME_BASE)


@dataclass(frozen=True)
class PushMessage:
    """Outbound push produced by a firing trigger."""

    source: str
    destination: str  # resource address, or topic name when via_topic
    payload: dict[str, float | int] | DataFrame
    via_topic: bool = False


class VirtualObject:
    """Bounded, timestamp-ordered frame cache with a resource interface."""

    def __init__(
        self,
        vo_id: str,
        pmu_idcode: int,
        capacity: int = DEFAULT_BUFFER_CAPACITY,
        layout: FrameLayout | None = None,
    ):
        if capacity < 1:
            raise VoError("buffer capacity must be >= 1")
        self.vo_id = vo_id
        self.pmu_idcode = pmu_idcode
        self.capacity = capacity
        self.layout = layout  # stream shape, for wire-level ingest
        self.buffer: list[DataFrame] = []  # ascending timestamp
        self.triggers: dict[str, Trigger] = {}
        self.subscriptions: list[tuple[str, tuple[str, ...] | None]] = []
        self.audit_log: list[str] = []
        self._next_boundary_us: dict[str, int] = {}

    # -- ingest ----------------------------------------------------------

    def ingest(self, frame: DataFrame) -> list[PushMessage]:
        """File a frame and evaluate triggers against it.

        Frames are kept ordered by timestamp; duplicates (same timestamp)
        are dropped, and the oldest frame is evicted over capacity.
        """
        if frame.idcode != self.pmu_idcode:
            self.audit_log.append(
                f"rejected frame from foreign idcode {frame.idcode}"
            )
            return []
        stamps = [f.timestamp for f in self.buffer]
        pos = bisect.bisect_left(stamps, frame.timestamp)
        if pos < len(self.buffer) and self.buffer[pos].timestamp == frame.timestamp:
            self.audit_log.append(f"dropped duplicate frame at {frame.timestamp}")
            return []
        self.buffer.insert(pos, frame)
        if len(self.buffer) > self.capacity:
            del self.buffer[0]
        return self.evaluate_triggers(frame)

    def ingest_wire(self, raw: bytes) -> list[PushMessage]:
        if self.layout is None:
            raise VoError(f"{self.vo_id} has no stream layout for wire ingest")
        return self.ingest(decode_data_frame(raw, self.layout))

    # -- reads -----------------------------------------------------------

    def get_resource(
        self, selector: tuple[str, ...] | list[str], window: int | None = None
    ) -> dict[str, float | int]:
        """Selected fields of the newest frame, or their mean over a window.

        With `window=N` each selected numeric field is averaged over the
        newest N frames; identity fields and the timestamp come from the
        newest frame.
        """
        if not self.buffer:
            raise NoDataError(f"{self.vo_id}: buffer is empty")
        latest = self.buffer[-1]
        valid = set(canonical_keys(len(latest.blocks[0].phasors)))
        for key in selector:
            if key not in valid:
                raise SelectorError(f"unknown field {key!r}")
        if window is None:
            full = key_value_record(latest)
            return {k: full[k] for k in selector}
        if not 1 <= window <= len(self.buffer):
            raise VoError(
                f"window {window} outside buffer occupancy {len(self.buffer)}"
            )
        frames = self.buffer[-window:]
        records = [key_value_record(f) for f in frames]
        newest = records[-1]
        out: dict[str, float | int] = {}
        for key in selector:
            if key in ("idcode", "soc", "fracsec"):
                out[key] = newest[key]
            else:
                out[key] = sum(r[key] for r in records) / window
        return out

    # -- triggers --------------------------------------------------------

    def register_trigger(self, trigger: Trigger) -> None:
        if trigger.id in self.triggers:
            raise TriggerError(f"duplicate trigger id {trigger.id!r}")
        self.triggers[trigger.id] = trigger

    def remove_trigger(self, trigger_id: str) -> None:
        if trigger_id not in self.triggers:
            raise TriggerError(f"no trigger {trigger_id!r}")
        del self.triggers[trigger_id]
        self._next_boundary_us.pop(trigger_id, None)

    def _project(self, trigger: Trigger, frame: DataFrame) -> PushMessage:
        if trigger.selector is None:
            payload: dict[str, float | int] | DataFrame = frame
        else:
            full = key_value_record(frame)
            try:
                payload = {k: full[k] for k in trigger.selector}
            except KeyError as exc:
                raise SelectorError(f"trigger {trigger.id}: unknown field {exc}") from None
        if trigger.topic is not None:
            return PushMessage(self.vo_id, trigger.topic, payload, via_topic=True)
        return PushMessage(self.vo_id, trigger.destination, payload)

    def _periodic_fires(self, trigger: Trigger, t_us: int) -> int:
        """Count period boundaries reached by t, lazily anchored.

        The first evaluated frame initializes the next boundary at or after
        its own instant, so a frame sitting exactly on a boundary fires.
        """
        period, phase = trigger.period_us, trigger.phase_us
        if trigger.id not in self._next_boundary_us:
            self._next_boundary_us[trigger.id] = phase + -((phase - t_us) // period) * period
        fires = 0
        while t_us >= self._next_boundary_us[trigger.id]:
            fires += 1
            self._next_boundary_us[trigger.id] += period
        return fires

    def evaluate_triggers(self, frame: DataFrame) -> list[PushMessage]:
        """Push messages fired by the newly ingested frame.

        Threshold triggers fire on each qualifying frame; periodic triggers
        fire once per period boundary reached since the last evaluation.
        """
        record = key_value_record(frame)
        out: list[PushMessage] = []
        for trigger in self.triggers.values():
            if trigger.kind == "threshold":
                try:
                    value = record[trigger.field_name]
                except KeyError:
                    raise SelectorError(
                        f"trigger {trigger.id}: unknown field {trigger.field_name!r}"
                    ) from None
                if COMPARATORS[trigger.comparator](value, trigger.bound):
                    out.append(self._project(trigger, frame))
            else:
                for _ in range(self._periodic_fires(trigger, frame.timestamp.total_us)):
                    out.append(self._project(trigger, frame))
        return out

    # -- REST surface ------------------------------------------------------

    def handle_request(
        self, method: str, path: str, query: dict[str, str] | None = None, body: bytes = b""
    ) -> tuple[int, bytes]:
        """Resource protocol endpoint (status, body); see module docstring.

        GET  /vo/{id}/measurements?fields=a,b[&window=N]
        POST /vo/{id}/ingest            (encoded data frame)
        POST /vo/{id}/triggers          (trigger document)
        DELETE /vo/{id}/triggers/{tid}
        """
        query = query or {}
        parts = [p for p in path.split("/") if p]
        if len(parts) < 3 or parts[0] != "vo" or parts[1] != self.vo_id:
            return 404, b"no such resource\n"
        tail = parts[2:]
        try:
            if method == "GET" and tail == ["measurements"]:
                fields = tuple(f for f in query.get("fields", "").split(",") if f)
                if not fields:
                    return 400, b"fields selector required\n"
                window = int(query["window"]) if "window" in query else None
                return 200, serialize_kv(self.get_resource(fields, window))
            if method == "POST" and tail == ["ingest"]:
                self.ingest_wire(body)
                return 200, b""
            if method == "POST" and tail == ["triggers"]:
                trigger = parse_trigger_document(body)
                self.register_trigger(trigger)
                return 201, trigger.id.encode("ascii") + b"\n"
            if method == "DELETE" and len(tail) == 2 and tail[0] == "triggers":
                self.remove_trigger(tail[1])
                return 204, b""
        except NoDataError as exc:
            return 404, f"{exc}\n".encode()
        except (VoError, ValueError) as exc:
            return 400, f"{exc}\n".encode()
        return 404, b"no such resource\n"


def parse_trigger_document(raw: bytes) -> Trigger:
    """Parse the `key=value` trigger document used by POST .../triggers."""
    fields: dict[str, str] = {}
    for line in raw.decode("ascii").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        kind = fields["kind"]
        trigger_id = fields["id"]
    except KeyError as exc:
        raise TriggerError(f"trigger document missing {exc}") from None
    selector: tuple[str, ...] | None = None
    if "selector" in fields:
        selector = tuple(s for s in fields["selector"].split(",") if s)
    return Trigger(
        id=trigger_id,
        kind=kind,
        destination=fields.get("destination", ""),
        topic=fields.get("topic"),
        period_s=float(fields.get("period", 0.0)),
        phase_s=float(fields.get("phase", 0.0)),
        field_name=fields.get("field", ""),
        comparator=fields.get("comparator", ">"),
        bound=float(fields.get("bound", 0.0)),
        selector=selector,
    )
