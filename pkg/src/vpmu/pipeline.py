"""End-to-end wiring of the measurement chain over the event simulator.

One pipeline owns the emulated PMUs of the monitored nodes, one virtual
object per PMU, a concentrating CVO (placed locally at the node subnetwork
or remotely in the cloud), a broker for control advertisements, and an
application endpoint that records end-to-end latency.

Placement decides which hop crosses the wide-area link:

    local   PMU --lan--> VO --lan--> CVO --wan--> APP
    remote  PMU --lan--> VO --wan--> CVO --cloud--> APP

Messages carry their decoded payloads alongside wire-accurate byte sizes
taken from the frame/key-value encoders, so transport accounting is exact
while measurement values keep full precision end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import vo as vo_mod
from .broker import Broker, Subscription
from .codec import (
    DataFrame,
    FrameFormat,
    Timestamp,
    TIME_BASE,
    encode_command,
    encode_data_frame,
)
from .cvo import AlignedSet, CompositeVirtualObject, CvoConfig, OutboundMessage, Threshold
from .grid import GridModel, PmuPlacement
from .netsim import LatencyRecord, LinkSpec, Message, Network, Simulator
from .pmu import EmulatedPmu, NoiseModel, Scenario

APP_ADDRESS = "APP"
BROKER_ADDRESS = "BROKER"
FORWARD_TRIGGER_ID = "forward"
RATE_TOPIC_SUFFIX = "rate_control"


def payload_size(payload: object) -> int:
    """Wire size of a payload as its encoder would produce it."""
    if isinstance(payload, DataFrame):
        return len(encode_data_frame(payload))
    if isinstance(payload, AlignedSet):
        return len(aligned_set_document(payload))
    if isinstance(payload, dict):
        return len(vo_mod.serialize_kv(payload))
    if isinstance(payload, (bytes, bytearray)):
        return len(payload)
    raise TypeError(f"cannot size payload of type {type(payload).__name__}")


def aligned_set_document(aligned: AlignedSet) -> bytes:
    """Key-value document of a whole aligned set, member-prefixed keys."""
    lines = [f"soc={aligned.timestamp.soc}", f"fracsec={aligned.timestamp.fracsec}"]
    if aligned.absent:
        lines.append("absent=" + ",".join(aligned.absent))
    for member in sorted(aligned.contributions):
        record = aligned.contributions[member]
        if isinstance(record, DataFrame):
            record = vo_mod.key_value_record(record)
        body = vo_mod.serialize_kv(record).decode("ascii").splitlines()
        lines.extend(f"{member}.{line}" for line in body)
    return ("\n".join(lines) + "\n").encode("ascii")


@dataclass
class PipelineConfig:
    """Everything needed to instantiate and drive one measurement chain."""

    monitored_nodes: tuple[int, ...] = (2,)
    mode: str = "local"  # CVO placement
    channel_config: str = "A"  # 'bare' | 'A' | 'B'
    fmt: FrameFormat = FrameFormat.FLOAT32
    rate: int = 50
    trials: int = 100
    seed: int = 42
    noise: NoiseModel = field(default_factory=NoiseModel)
    channels_per_pmu: int = 2
    wait_timeout_s: float = 0.45
    cvo_processing_s: float = 0.0005
    output_mode: str = "aggregated_frame"
    thresholds: tuple[Threshold, ...] = ()
    lan: LinkSpec = field(default_factory=lambda: LinkSpec("lan", "constant", delay=0.0001))
    wan_local: LinkSpec = field(
        default_factory=lambda: LinkSpec("wan_local", "constant", delay=0.045)
    )
    wan_remote: LinkSpec = field(
        default_factory=lambda: LinkSpec("wan_remote", "constant", delay=0.050)
    )
    cloud: LinkSpec = field(default_factory=lambda: LinkSpec("cloud", "constant", delay=0.0003))


@dataclass
class PipelineResult:
    latency_records: list[LatencyRecord]
    aligned_sets: list[AlignedSet]
    app_payloads: list[object]
    event_log: list[str]
    link_stats: dict[tuple[str, str], tuple[int, int, int]]
    rate_changes: list[tuple[float, int, int]]  # (sim time, idcode, new rate)


class _PmuDriver:
    """Self-rescheduling frame source; follows rate changes on the fly."""

    def __init__(self, pipeline: "Pipeline", pmu: EmulatedPmu, vo_address: str):
        self.pipeline = pipeline
        self.pmu = pmu
        self.vo_address = vo_address
        self.address = f"PMU_{pmu.idcode}"
        self.frames_emitted = 0

    def start(self) -> None:
        self.pipeline.sim.schedule_at(0.0, self.tick)

    def tick(self) -> None:
        if self.frames_emitted >= self.pipeline.config.trials:
            return
        sim = self.pipeline.sim
        now_us = round(sim.now * TIME_BASE)
        step = self.pmu.frame_interval_us
        if now_us % step == 0:
            frame = self.pmu.sample_frame(
                Timestamp.from_us(now_us), self.pipeline.grid, self.pipeline.scenario
            )
            if frame is not None:
                self.pipeline.network.send(
                    self.address,
                    self.vo_address,
                    frame,
                    payload_size(frame),
                    frame_ts=frame.timestamp.seconds,
                )
            self.frames_emitted += 1
        next_us = (now_us // step + 1) * step  # stay second-aligned after rate changes
        sim.schedule_at(next_us / TIME_BASE, self.tick)


class _VoAdapter:
    """Bridges one VO onto the network and the control topic."""

    def __init__(self, pipeline: "Pipeline", vo: vo_mod.VirtualObject, pmu: EmulatedPmu):
        self.pipeline = pipeline
        self.vo = vo
        self.pmu = pmu

    def on_message(self, message: Message) -> None:
        frame = message.payload
        assert isinstance(frame, DataFrame)
        for push in self.vo.ingest(frame):
            self.pipeline.dispatch_push(self.vo.vo_id, push)

    def on_topic_message(self, message: Message) -> None:
        """Rate-increase advertisement: retune the device and the push rule."""
        payload = message.payload
        if not isinstance(payload, dict) or "rate" not in payload:
            return
        new_rate = int(payload["rate"])
        if new_rate == self.pmu.rate:
            return
        old_rate = self.pmu.rate
        self.pmu.set_rate(new_rate)
        self.vo.remove_trigger(FORWARD_TRIGGER_ID)
        self.vo.register_trigger(
            self.pipeline.forward_trigger(new_rate, self.pmu.phasors_per_frame)
        )
        self.pipeline.rate_changes.append(
            (self.pipeline.sim.now, self.pmu.idcode, new_rate)
        )
        self.pipeline.sim.log(f"rate idcode={self.pmu.idcode} {old_rate}->{new_rate}")


class Pipeline:
    """Build and run one measurement chain under a pipeline config."""

    def __init__(
        self,
        grid: GridModel,
        scenario: Scenario,
        placement: PmuPlacement,
        config: PipelineConfig,
    ):
        for node in config.monitored_nodes:
            if node not in placement.assignments:
                raise ValueError(f"node {node} is not in the placement")
        self.grid = grid
        self.scenario = scenario
        self.placement = placement
        self.config = config
        self.sim = Simulator()
        root = np.random.SeedSequence(config.seed)
        net_seed, pmu_pool = root.spawn(2)
        self.network = Network(self.sim, net_seed)
        self.rate_changes: list[tuple[float, int, int]] = []

        self.pmus: list[EmulatedPmu] = []
        self.vos: list[vo_mod.VirtualObject] = []
        self.drivers: list[_PmuDriver] = []
        self.adapters: list[_VoAdapter] = []
        self.pmu_channels: dict[str, tuple] = {}  # vo_id -> descriptors
        cvo_id = (
            f"CVO_Node_{config.monitored_nodes[0]}"
            if len(config.monitored_nodes) == 1
            else "CVO_WAMS"
        )
        self.rate_topic = f"REGION_1/ZONE_1/{cvo_id}/{RATE_TOPIC_SUFFIX}"

        pmu_seeds = iter(pmu_pool.spawn(placement.pmu_count()))
        member_ids: list[str] = []
        for node in sorted(config.monitored_nodes):
            for k, pmu_descriptors in enumerate(placement.assignments[node], start=1):
                idcode = node * 100 + k
                pmu = EmulatedPmu(
                    idcode=idcode,
                    descriptors=pmu_descriptors,
                    rate=config.rate,
                    fmt=config.fmt,
                    noise=config.noise,
                    channel_config=config.channel_config,
                    rng=np.random.default_rng(next(pmu_seeds)),
                )
                vo = vo_mod.VirtualObject(vo_id=f"VO_{idcode}", pmu_idcode=idcode)
                vo.register_trigger(
                    self.forward_trigger(config.rate, pmu.phasors_per_frame, cvo_id)
                )
                vo.subscriptions.append((self.rate_topic, None))
                self.pmus.append(pmu)
                self.vos.append(vo)
                self.pmu_channels[vo.vo_id] = pmu_descriptors
                member_ids.append(vo.vo_id)

        self.cvo = CompositeVirtualObject(
            CvoConfig(
                cvo_id=cvo_id,
                members=tuple(member_ids),
                placement=config.mode,
                wait_timeout_s=config.wait_timeout_s,
                output_mode=config.output_mode,
                thresholds=config.thresholds,
            ),
            upstream=APP_ADDRESS,
        )
        self.aggregate_idcode = 9000 + config.monitored_nodes[0]

        self.latency_records: list[LatencyRecord] = []
        self.app_payloads: list[object] = []
        self.broker = Broker(deliver=self._broker_deliver)

        self._wire()

    # -- construction -----------------------------------------------------

    def forward_trigger(
        self, rate: int, n_phasors: int, cvo_id: str | None = None
    ) -> vo_mod.Trigger:
        """Push rule sending every frame to the CVO, one per reporting period.

        Aggregated-frame pipelines forward the raw frame (native
        encapsulation); key-value pipelines push the full canonical record.
        """
        destination = cvo_id if cvo_id is not None else self.cvo.cvo_id
        selector = (
            None
            if self.config.output_mode == "aggregated_frame"
            else vo_mod.canonical_keys(n_phasors)
        )
        return vo_mod.Trigger(
            id=FORWARD_TRIGGER_ID,
            kind="periodic",
            destination=destination,
            period_s=1.0 / rate,
            selector=selector,
        )

    def _wire(self) -> None:
        cfg = self.config
        vo_uplink = cfg.lan if cfg.mode == "local" else cfg.wan_remote
        cvo_uplink = cfg.wan_local if cfg.mode == "local" else cfg.cloud
        for pmu, vo in zip(self.pmus, self.vos):
            driver = _PmuDriver(self, pmu, vo.vo_id)
            adapter = _VoAdapter(self, vo, pmu)
            self.drivers.append(driver)
            self.adapters.append(adapter)
            self.network.register(vo.vo_id, adapter.on_message)
            self.network.connect(driver.address, vo.vo_id, cfg.lan)
            self.network.connect(vo.vo_id, self.cvo.cvo_id, vo_uplink)
            # control plane back-channel for broker deliveries
            self.network.register(f"SUB_{vo.vo_id}", adapter.on_topic_message)
            self.network.connect(BROKER_ADDRESS, f"SUB_{vo.vo_id}", vo_uplink)
            self.broker.subscribe(Subscription(f"SUB_{vo.vo_id}", self.rate_topic))
        self.network.register(self.cvo.cvo_id, self._cvo_on_message)
        self.network.connect(self.cvo.cvo_id, APP_ADDRESS, cvo_uplink)
        self.network.register(APP_ADDRESS, self._app_on_message)

    # -- runtime ----------------------------------------------------------

    def dispatch_push(self, source: str, push: vo_mod.PushMessage) -> None:
        if push.via_topic:
            self.broker.publish(push.destination, push.payload)
            return
        self.network.send(
            source,
            push.destination,
            push.payload,
            payload_size(push.payload),
            frame_ts=_frame_ts_of(push.payload),
        )

    def _broker_deliver(self, subscriber: str, topic: str, payload: object) -> None:
        self.network.send(
            BROKER_ADDRESS, subscriber, payload, payload_size(payload)
        )

    def _cvo_on_message(self, message: Message) -> None:
        record = message.payload
        if isinstance(record, DataFrame) or isinstance(record, dict):
            emitted = self.cvo.ingest(message.src, record, self.sim.now)
            deadline = self.cvo.deadline_for(_record_ts_of(record))
            if deadline is not None:
                self.sim.schedule_at(deadline, self._expire_check)
            for aligned in emitted:
                self._process_aligned(aligned)

    def _expire_check(self) -> None:
        for aligned in self.cvo.expire_due(self.sim.now):
            self._process_aligned(aligned)

    def _process_aligned(self, aligned: AlignedSet) -> None:
        for action in self.cvo.check_thresholds(aligned):
            self.broker.publish(action.destination, action.payload)
        self.sim.schedule(self.config.cvo_processing_s, lambda: self._forward(aligned))

    def _forward(self, aligned: AlignedSet) -> None:
        messages: list[OutboundMessage]
        if self.config.output_mode == "aggregated_frame" and not aligned.complete:
            # degradation policy is the application's: pass the flagged set on
            messages = [OutboundMessage(destination=APP_ADDRESS, payload=aligned)]
        else:
            messages = self.cvo.forward(aligned, self.aggregate_idcode, self.config.fmt)
        for out in messages:
            self.network.send(
                self.cvo.cvo_id,
                out.destination,
                out.payload,
                payload_size(out.payload),
                frame_ts=aligned.timestamp.seconds,
            )

    def _app_on_message(self, message: Message) -> None:
        self.app_payloads.append(message.payload)
        if message.frame_ts is not None:
            self.latency_records.append(
                LatencyRecord(frame_ts=message.frame_ts, received_at=self.sim.now)
            )

    def run(self) -> PipelineResult:
        for driver in self.drivers:
            driver.start()
        self.sim.run()
        return PipelineResult(
            latency_records=list(self.latency_records),
            aligned_sets=list(self.cvo.emitted_sets),
            app_payloads=list(self.app_payloads),
            event_log=list(self.sim.event_log),
            link_stats=self.network.link_stats(),
            rate_changes=list(self.rate_changes),
        )


def _frame_ts_of(payload: object) -> float | None:
    if isinstance(payload, DataFrame):
        return payload.timestamp.seconds
    if isinstance(payload, dict) and "soc" in payload and "fracsec" in payload:
        return vo_mod.record_timestamp(payload).seconds
    return None


def _record_ts_of(record: object) -> Timestamp:
    if isinstance(record, DataFrame):
        return record.timestamp
    assert isinstance(record, dict)
    return vo_mod.record_timestamp(record)
