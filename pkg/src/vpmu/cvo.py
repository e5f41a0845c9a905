"""Composite virtual object: concentration, composition and monitoring.

A CVO collects records from its member sources (VOs or child CVOs),
aligns them by timestamp the way a phasor data concentrator does, and
emits one AlignedSet per timestamp: complete when every member has
contributed, partial when the wait timeout expires first.  Complete sets
can be composed into a single multi-channel aggregate frame, checked
against thresholds, and forwarded upstream.  All timing is simulation
time passed in by the caller, so runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codec import DataFrame, FrameFormat, PmuBlock, Timestamp
from .vo import COMPARATORS, record_timestamp

Record = DataFrame | dict[str, float | int]


class CvoError(ValueError):
    pass


class IncompleteSetError(CvoError):
    """Aggregate composition requires a complete aligned set."""


@dataclass(frozen=True)
class Threshold:
    """Publish on `action_topic` when `field` violates the bound."""

    field_name: str
    comparator: str
    bound: float
    action_topic: str

    def __post_init__(self) -> None:
        if self.comparator not in COMPARATORS:
            raise CvoError(f"unknown comparator {self.comparator!r}")


@dataclass(frozen=True)
class CvoConfig:
    cvo_id: str
    members: tuple[str, ...]
    placement: str = "local"  # "local" | "remote"
    wait_timeout_s: float = 0.04  # two reporting intervals at 50 fps
    output_mode: str = "aggregated_frame"  # | "key_value"
    thresholds: tuple[Threshold, ...] = ()
    parent: str | None = None

    def __post_init__(self) -> None:
        if not self.members:
            raise CvoError("a CVO needs at least one member")
        if self.wait_timeout_s <= 0:
            raise CvoError("wait_timeout must be > 0")
        if self.placement not in ("local", "remote"):
            raise CvoError(f"unknown placement {self.placement!r}")
        if self.output_mode not in ("aggregated_frame", "key_value"):
            raise CvoError(f"unknown output mode {self.output_mode!r}")


@dataclass(frozen=True)
class AlignedSet:
    """Contributions sharing one timestamp; complete iff nobody is absent."""

    timestamp: Timestamp
    contributions: dict[str, Record]
    absent: tuple[str, ...] = ()

    @property
    def complete(self) -> bool:
        return not self.absent


def _record_ts(record: Record) -> Timestamp:
    if isinstance(record, DataFrame):
        return record.timestamp
    return record_timestamp(record)


def _record_field(record: Record, field_name: str) -> float | None:
    if isinstance(record, DataFrame):
        block = record.blocks[0]
        if field_name == "freq":
            return block.freq_dev_mhz
        if field_name == "rocof":
            return block.rocof_hzps
        return None
    value = record.get(field_name)
    return float(value) if value is not None else None


def _record_block(record: Record) -> PmuBlock:
    if isinstance(record, DataFrame):
        if len(record.blocks) != 1:
            raise CvoError("member contributions must be single-block frames")
        return record.blocks[0]
    indices = sorted(
        int(k.split(".")[1]) for k in record if k.startswith("phasor.") and k.endswith(".re")
    )
    if indices != list(range(len(indices))):
        raise CvoError("key-value contribution has a gap in its phasor channels")
    phasors = tuple(
        complex(record[f"phasor.{k}.re"], record[f"phasor.{k}.im"]) for k in indices
    )
    return PmuBlock(
        phasors=phasors,
        freq_dev_mhz=float(record.get("freq", 0.0)),
        rocof_hzps=float(record.get("rocof", 0.0)),
    )


def compose_aggregate_frame(
    aligned: AlignedSet,
    member_order: tuple[str, ...],
    idcode: int,
    fmt: FrameFormat = FrameFormat.FLOAT32,
) -> DataFrame:
    """Fuse a complete set into one multi-channel frame, one block per member.

    Blocks follow the configured member order so the encoding is
    deterministic, and every phasor/freq/rocof value is carried unchanged.
    """
    if not aligned.complete:
        raise IncompleteSetError(f"absent members: {', '.join(aligned.absent)}")
    blocks = tuple(_record_block(aligned.contributions[m]) for m in member_order)
    return DataFrame(idcode=idcode, timestamp=aligned.timestamp, blocks=blocks, fmt=fmt)


@dataclass(frozen=True)
class OutboundMessage:
    destination: str
    payload: DataFrame | AlignedSet | dict[str, float | int]
    via_topic: bool = False


class CompositeVirtualObject:
    """Timestamp aligner plus composition/monitoring over member sources."""

    def __init__(self, config: CvoConfig, upstream: str | None = None):
        self.config = config
        self.upstream = upstream  # application endpoint when no parent CVO
        self._pending: dict[Timestamp, dict[str, Record]] = {}
        self._deadline: dict[Timestamp, float] = {}
        self._emitted: set[Timestamp] = set()
        self.audit_log: list[str] = []
        self.emitted_sets: list[AlignedSet] = []

    @property
    def cvo_id(self) -> str:
        return self.config.cvo_id

    def ingest(self, source: str, record: Record, now: float) -> list[AlignedSet]:
        """File a member record; returns the aligned set it completes, if any."""
        if source not in self.config.members:
            self.audit_log.append(f"rejected record from unknown source {source!r}")
            return []
        ts = _record_ts(record)
        if ts in self._emitted:
            self.audit_log.append(f"dropped late record from {source} for {ts}")
            return []
        slot = self._pending.setdefault(ts, {})
        if not slot:
            self._deadline[ts] = now + self.config.wait_timeout_s
        slot[source] = record
        if len(slot) == len(self.config.members):
            return [self._emit(ts, absent=())]
        return []

    def deadline_for(self, ts: Timestamp) -> float | None:
        return self._deadline.get(ts)

    def expire_due(self, now: float) -> list[AlignedSet]:
        """Emit partial sets for every slot whose wait timeout has elapsed."""
        due = sorted(ts for ts, t in self._deadline.items() if t <= now)
        out = []
        for ts in due:
            absent = tuple(
                m for m in self.config.members if m not in self._pending[ts]
            )
            out.append(self._emit(ts, absent=absent))
        return out

    def _emit(self, ts: Timestamp, absent: tuple[str, ...]) -> AlignedSet:
        aligned = AlignedSet(
            timestamp=ts,
            contributions=dict(self._pending.pop(ts)),
            absent=absent,
        )
        self._deadline.pop(ts, None)
        self._emitted.add(ts)
        self.emitted_sets.append(aligned)
        return aligned

    def check_thresholds(self, aligned: AlignedSet) -> list[OutboundMessage]:
        """At most one action per threshold per aligned set."""
        out = []
        for threshold in self.config.thresholds:
            worst: float | None = None
            for record in aligned.contributions.values():
                value = _record_field(record, threshold.field_name)
                if value is None:
                    continue
                if COMPARATORS[threshold.comparator](value, threshold.bound):
                    worst = value if worst is None else max(worst, value)
            if worst is not None:
                out.append(
                    OutboundMessage(
                        destination=threshold.action_topic,
                        payload={
                            "cvo": self.cvo_id,
                            "field": threshold.field_name,
                            "value": worst,
                            "bound": threshold.bound,
                            "soc": aligned.timestamp.soc,
                            "fracsec": aligned.timestamp.fracsec,
                        },
                        via_topic=True,
                    )
                )
        return out

    def forward(
        self, aligned: AlignedSet, idcode: int = 0, fmt: FrameFormat = FrameFormat.FLOAT32
    ) -> list[OutboundMessage]:
        """Send the aligned result up to the parent CVO or the application.

        aggregated_frame mode emits one multi-channel frame per set (the
        single upstream message of a locally placed concentrator);
        key_value mode emits one flattened document per set.
        """
        destination = self.config.parent or self.upstream
        if destination is None:
            raise CvoError(f"{self.cvo_id} has no parent or upstream endpoint")
        if self.config.output_mode == "aggregated_frame":
            frame = compose_aggregate_frame(aligned, self.config.members, idcode, fmt)
            return [OutboundMessage(destination=destination, payload=frame)]
        return [OutboundMessage(destination=destination, payload=aligned)]

    # -- resource surface --------------------------------------------------

    def handle_request(
        self,
        method: str,
        path: str,
        source: str,
        record: Record,
        now: float,
    ) -> tuple[int, list[AlignedSet]]:
        """POST /cvo/{id}/ingest — member push delivery."""
        parts = [p for p in path.split("/") if p]
        if method == "POST" and parts == ["cvo", self.cvo_id, "ingest"]:
            before = len(self.audit_log)
            emitted = self.ingest(source, record, now)
            if len(self.audit_log) > before:
                return 403, []
            return 200, emitted
        return 404, []
