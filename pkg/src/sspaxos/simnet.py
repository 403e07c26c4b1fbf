"""Deterministic simulation of an asynchronous network with bounded channels.

A :class:`Configuration` is an immutable snapshot of every processor and
every channel.  :meth:`Network.apply_event` maps a configuration and an
event to the next configuration plus an :class:`EventRecord` describing
what happened.  :class:`Scheduler` picks events with a seeded RNG, so a
scenario and a seed fully determine the execution.

Messages a processor sends to itself bypass the channels and are handled
within the same event, before any other event is scheduled.
"""

from __future__ import annotations

import json
import logging
import random
import sys
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Optional

from . import detector as det
from .errors import ConfigurationError
from .labeling import Label, format_label, label_next
from .protocol import (
    TAGGED_KINDS,
    AcceptorState,
    Decision,
    Effects,
    InputSource,
    Kind,
    Message,
    Mode,
    Phase,
    Proposal,
    ProposerState,
    Protocol,
    clean_acceptor,
    clean_proposer,
    heartbeat,
)
from .tags import DeploymentParams, FifoHistory, Tag, TagEntry, derive_params, empty_history, fifo_add, format_tag

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


class EventKind(Enum):
    DELIVER = "deliver"
    PROPOSER_TICK = "proposer_tick"
    HEARTBEAT_TICK = "heartbeat_tick"
    CRASH = "crash"
    CORRUPT = "corrupt"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    actor: int
    uid: Optional[int] = None


@dataclass(frozen=True)
class InFlight:
    uid: int
    src: int
    dst: int
    msg: Message


@dataclass(frozen=True)
class Node:
    pid: int
    acc: AcceptorState
    prop: ProposerState
    det: det.DetectorState
    crashed: bool = False


@dataclass(frozen=True)
class Configuration:
    """Processor states and channel contents.  Treated as immutable."""

    nodes: tuple
    channels: dict
    event_index: int = 0
    next_uid: int = 0

    def node(self, pid: int) -> Node:
        return self.nodes[pid - 1]

    def inflight(self):
        for key in sorted(self.channels):
            yield from self.channels[key]

    def crashed(self) -> frozenset:
        return frozenset(nd.pid for nd in self.nodes if nd.crashed)


@dataclass
class Step:
    """One handler invocation at one processor."""

    pid: int
    role: str
    uid: Optional[int]
    kind: str
    src: Optional[int]
    before: Tag
    after: Tag
    effects: Effects
    out: list = field(default_factory=list)
    prop_before: Optional[ProposerState] = None
    prop_after: Optional[ProposerState] = None


@dataclass
class EventRecord:
    index: int
    event: Event
    steps: list = field(default_factory=list)
    emitted: list = field(default_factory=list)
    dropped: list = field(default_factory=list)
    consumed: Optional[int] = None

    def decisions(self) -> list[Decision]:
        return [s.effects.decided for s in self.steps if s.effects.decided is not None]


@dataclass(frozen=True)
class Scenario:
    """Every knob of a simulation run."""

    n: int = 3
    f: int = 1
    C: int = 1
    b: int = 4
    mode: Mode = Mode.REPEATED
    init: str = "clean"
    seed: int = 0
    schedule: str = "fair"
    fair_heartbeat: bool = False
    heartbeats: Optional[bool] = None
    weights: tuple = (("deliver", 1.0), ("proposer", 0.25), ("heartbeat", 0.25))
    theta: str = "static"
    static_proposers: tuple = (1,)
    W: Optional[int] = None
    max_events: int = 100_000
    commands: Optional[tuple] = None
    input_seed: Optional[int] = None
    overflow: str = "drop-oldest"
    capacity_mode: str = "pair"
    crashes: tuple = ()
    corruptions: tuple = ()
    audit: Optional[tuple] = None
    max_antistings: int = 16

    def __post_init__(self) -> None:
        derive_params(self.n, self.f, self.C, self.b)
        if self.init not in ("clean", "adversarial"):
            raise ConfigurationError(f"unknown init mode {self.init!r}")
        if self.schedule not in ("random", "fair"):
            raise ConfigurationError(f"unknown schedule {self.schedule!r}")
        if self.theta not in ("static", "detector"):
            raise ConfigurationError(f"unknown theta mode {self.theta!r}")
        if self.overflow not in ("drop-oldest", "drop-newest"):
            raise ConfigurationError(f"unknown overflow policy {self.overflow!r}")
        if self.capacity_mode not in ("pair", "direction"):
            raise ConfigurationError(f"unknown capacity mode {self.capacity_mode!r}")
        if len({pid for pid, _ in self.crashes}) > self.f:
            raise ConfigurationError(f"{len(self.crashes)} crashes exceed the budget f={self.f}")
        for pid in list(self.static_proposers) + [p for p, _ in self.crashes]:
            if not 1 <= pid <= self.n:
                raise ConfigurationError(f"processor {pid} outside 1..{self.n}")

    @property
    def params(self) -> DeploymentParams:
        return derive_params(self.n, self.f, self.C, self.b)

    @property
    def window(self) -> int:
        return self.W if self.W is not None else det.default_window(self.n, self.C)

    @property
    def heartbeats_on(self) -> bool:
        return self.heartbeats if self.heartbeats is not None else self.theta == "detector"

    def audited(self) -> tuple:
        if self.audit is not None:
            return tuple(self.audit)
        if self.theta == "static":
            return tuple(self.static_proposers)
        return tuple(range(1, self.n + 1))

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)


class Network:
    """Static context of a simulation: parameters, protocol and channel rules."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.params = scenario.params
        inputs = InputSource(scenario.commands, scenario.input_seed)
        self.protocol = Protocol(self.params, scenario.mode, inputs)
        self.ts = self.protocol.ts
        self.static = frozenset(scenario.static_proposers)
        self.protect_heartbeats = scenario.fair_heartbeat

    # Channels

    def channel_key(self, src: int, dst: int) -> tuple:
        if self.scenario.capacity_mode == "direction":
            return (src, dst)
        return (min(src, dst), max(src, dst))

    def channel_keys(self) -> list:
        n = self.params.n
        if self.scenario.capacity_mode == "direction":
            return [(a, b) for a in range(1, n + 1) for b in range(1, n + 1) if a != b]
        return [(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1)]

    def enqueue(self, channels: dict, item: InFlight) -> list:
        """Append ``item`` to its channel; return uids lost to overflow."""
        key = self.channel_key(item.src, item.dst)
        current = channels.get(key, ())
        if len(current) < self.params.C:
            channels[key] = current + (item,)
            return []
        is_hb = item.msg.kind is Kind.HEARTBEAT
        victims = list(current)
        if self.protect_heartbeats:
            # Heartbeats are never the ones lost, so the round-robin
            # heartbeat order is delivered intact.
            others = [m for m in current if m.msg.kind is not Kind.HEARTBEAT]
            if not is_hb and not others:
                return [item.uid]
            if others:
                victims = others
        if self.scenario.overflow == "drop-newest" and not (is_hb and self.protect_heartbeats):
            return [item.uid]
        victim = victims[0]
        channels[key] = tuple(m for m in current if m.uid != victim.uid) + (item,)
        return [victim.uid]

    # Roles

    def theta(self, nd: Node) -> bool:
        if nd.crashed:
            return False
        if self.scenario.theta == "static":
            return nd.pid in self.static
        return det.theta(nd.pid, nd.det)

    # Configurations

    def clean_config(self) -> Configuration:
        p = self.params
        label = label_next((), p.d)
        nodes = tuple(
            Node(pid, clean_acceptor(p, label, self.scenario.mode), clean_proposer(self.scenario.mode),
                 det.fresh_detector(p.n, self.scenario.window))
            for pid in p.ids
        )
        return Configuration(nodes, {key: () for key in self.channel_keys()})

    def init_config(self) -> Configuration:
        if self.scenario.init == "clean":
            return self.clean_config()
        return AdversarialGenerator(self, random.Random(f"init:{self.scenario.seed}")).config()

    # Events

    def apply_event(self, cfg: Configuration, ev: Event) -> tuple[Configuration, EventRecord]:
        nodes = list(cfg.nodes)
        channels = dict(cfg.channels)
        rec = EventRecord(cfg.event_index, ev)
        uid = [cfg.next_uid]
        local: deque = deque()

        def route(src: int, sends: list, step: Optional[Step]) -> None:
            for dst, msg in sends:
                item = InFlight(uid[0], src, dst, msg)
                uid[0] += 1
                rec.emitted.append(item)
                if step is not None:
                    step.out.append(item.uid)
                if dst == src:
                    local.append(item)
                else:
                    rec.dropped.extend(self.enqueue(channels, item))

        if ev.kind is EventKind.DELIVER:
            key = None
            for k, items in channels.items():
                for m in items:
                    if m.uid == ev.uid:
                        key, found = k, m
                        break
                if key is not None:
                    break
            if key is None:
                raise ValueError(f"message {ev.uid} is not in flight")
            channels[key] = tuple(m for m in channels[key] if m.uid != ev.uid)
            rec.consumed = ev.uid
            local.append(found)
        elif ev.kind is EventKind.PROPOSER_TICK:
            nd = nodes[ev.actor - 1]
            step = self._tick(nd, nodes)
            rec.steps.append(step)
            route(nd.pid, step.effects.sends, step)
        elif ev.kind is EventKind.HEARTBEAT_TICK:
            nd = nodes[ev.actor - 1]
            step = Step(nd.pid, "heartbeat", None, "tick", None, nd.acc.a, nd.acc.a, Effects())
            rec.steps.append(step)
            route(nd.pid, [(dst, heartbeat(nd.pid)) for dst in self.params.ids], step)
        elif ev.kind is EventKind.CRASH:
            nd = nodes[ev.actor - 1]
            if not nd.crashed and sum(x.crashed for x in nodes) >= self.params.f:
                raise ConfigurationError(f"crash of {ev.actor} exceeds budget f={self.params.f}")
            nodes[ev.actor - 1] = replace(nd, crashed=True)
        elif ev.kind is EventKind.CORRUPT:
            gen = AdversarialGenerator(self, random.Random(f"corrupt:{self.scenario.seed}:{cfg.event_index}"))
            nodes[ev.actor - 1] = gen.node(ev.actor, nodes[ev.actor - 1].crashed)

        while local:
            item = local.popleft()
            step = self._deliver(item, nodes)
            rec.steps.append(step)
            route(item.dst, step.effects.sends, step)

        out = Configuration(tuple(nodes), channels, cfg.event_index + 1, uid[0])
        return out, rec

    def _tick(self, nd: Node, nodes: list) -> Step:
        step = Step(nd.pid, "proposer", None, "tick", None, nd.acc.a, nd.acc.a, Effects(), prop_before=nd.prop)
        if not self.theta(nd):
            step.role = "ignored"
            step.prop_after = nd.prop
            return step
        pr = self.protocol
        acc, prop = nd.acc, nd.prop
        if prop.phase is Phase.IDLE:
            acc, prop, eff = pr.begin_round(nd.pid, acc, prop)
        else:
            acc, prop, eff = pr.retransmit(nd.pid, acc, prop)
        nodes[nd.pid - 1] = replace(nd, acc=acc, prop=prop)
        step.after, step.effects, step.prop_after = acc.a, eff, prop
        return step

    def _deliver(self, item: InFlight, nodes: list) -> Step:
        nd = nodes[item.dst - 1]
        msg = item.msg
        step = Step(nd.pid, "acceptor", item.uid, msg.kind.value, item.src, nd.acc.a, nd.acc.a, Effects())
        if nd.crashed:
            step.role = "sink"
            return step
        pr = self.protocol
        if msg.kind is Kind.P1A:
            acc, eff = pr.on_p1a(nd.pid, nd.acc, msg)
            nodes[nd.pid - 1] = replace(nd, acc=acc)
        elif msg.kind in (Kind.P2A, Kind.DECISION):
            acc, eff = pr.on_p2a_or_decision(nd.pid, nd.acc, msg)
            nodes[nd.pid - 1] = replace(nd, acc=acc)
        elif msg.kind is Kind.HEARTBEAT:
            step.role = "detector"
            nodes[nd.pid - 1] = replace(nd, det=det.on_heartbeat(nd.det, msg.sender))
            return step
        else:
            step.role = "proposer"
            step.prop_before = nd.prop
            if not self.theta(nd):
                step.role = "ignored"
                step.prop_after = nd.prop
                return step
            acc, prop, eff = pr.pr_on_reply(nd.pid, nd.acc, nd.prop, msg)
            nodes[nd.pid - 1] = replace(nd, acc=acc, prop=prop)
            step.prop_after = prop
        step.after, step.effects = acc.a, eff
        return step


class Scheduler:
    """Seeded choice among enabled events.

    ``random`` offers every in-flight delivery and every tick.  ``fair``
    offers a proposer tick only to leaders whose protocol messages have all
    been delivered, so each phase completes before it is retransmitted.
    With ``fair_heartbeat`` the live processors heartbeat in round-robin
    order, one broadcast in flight at a time.
    """

    def __init__(self, net: Network, rng: random.Random):
        self.net = net
        self.rng = rng
        self.turn = 0
        sc = net.scenario
        self.weights = dict(sc.weights)
        self.crashes = sorted((at, pid) for pid, at in sc.crashes)
        self.corruptions = sorted((at, pid) for pid, at in sc.corruptions)

    def _forced(self, cfg: Configuration) -> Optional[Event]:
        for at, pid in self.crashes:
            if at == cfg.event_index and not cfg.node(pid).crashed:
                return Event(EventKind.CRASH, pid)
        for at, pid in self.corruptions:
            if at == cfg.event_index:
                return Event(EventKind.CORRUPT, pid)
        return None

    def enabled(self, cfg: Configuration) -> dict:
        net = self.net
        sc = net.scenario
        live = [nd for nd in cfg.nodes if not nd.crashed]
        items = list(cfg.inflight())
        groups = {"deliver": [Event(EventKind.DELIVER, m.dst, m.uid) for m in items]}
        if sc.schedule == "fair":
            busy = {m.src for m in items if m.msg.kind in TAGGED_KINDS}
            groups["proposer"] = [Event(EventKind.PROPOSER_TICK, nd.pid) for nd in live
                                  if net.theta(nd) and nd.pid not in busy]
        else:
            groups["proposer"] = [Event(EventKind.PROPOSER_TICK, nd.pid) for nd in live]
        hb: list = []
        if sc.heartbeats_on and live:
            if sc.fair_heartbeat:
                if not any(m.msg.kind is Kind.HEARTBEAT for m in items):
                    hb = [Event(EventKind.HEARTBEAT_TICK, self._next_heartbeat(cfg))]
            else:
                hb = [Event(EventKind.HEARTBEAT_TICK, nd.pid) for nd in live]
        groups["heartbeat"] = hb
        return groups

    def _next_heartbeat(self, cfg: Configuration) -> int:
        n = len(cfg.nodes)
        for k in range(n):
            pid = (self.turn + k) % n + 1
            if not cfg.node(pid).crashed:
                return pid
        raise RuntimeError("no live processor")

    def next_event(self, cfg: Configuration) -> Optional[Event]:
        forced = self._forced(cfg)
        if forced is not None:
            return forced
        groups = self.enabled(cfg)
        names = [g for g in ("deliver", "proposer", "heartbeat") if groups.get(g) and self.weights.get(g, 0) > 0]
        if not names:
            return None
        if len(names) == 1:
            name = names[0]
        else:
            name = self.rng.choices(names, weights=[self.weights[g] for g in names])[0]
        options = groups[name]
        ev = options[0] if len(options) == 1 else options[self.rng.randrange(len(options))]
        if ev.kind is EventKind.HEARTBEAT_TICK and self.net.scenario.fair_heartbeat:
            self.turn = ev.actor % len(cfg.nodes)
        return ev


@dataclass
class RunResult:
    scenario: Scenario
    config: Configuration
    events: int
    stop: str
    decisions: list = field(default_factory=list)


class Simulation:
    """An execution in progress: network, scheduler and current configuration."""

    def __init__(self, scenario: Scenario, observers: Optional[list] = None):
        self.scenario = scenario
        self.net = Network(scenario)
        self.scheduler = Scheduler(self.net, random.Random(f"sched:{scenario.seed}"))
        self.config = self.net.init_config()
        self.initial = self.config
        self.observers = list(observers or [])
        self.decisions: list = []
        for obs in self.observers:
            obs.start(self.net, self.config)

    def step(self) -> Optional[EventRecord]:
        ev = self.scheduler.next_event(self.config)
        if ev is None:
            return None
        before = self.config
        after, rec = self.net.apply_event(before, ev)
        self.config = after
        for d in rec.decisions():
            self.decisions.append((rec.index, d))
        for obs in self.observers:
            obs.observe(before, rec, after)
        return rec

    def run(self, max_events: Optional[int] = None, until: Optional[Callable[[EventRecord], bool]] = None) -> RunResult:
        limit = self.scenario.max_events if max_events is None else max_events
        stop = "max_events"
        count = 0
        while count < limit:
            rec = self.step()
            if rec is None:
                stop = "quiescent"
                break
            count += 1
            if until is not None and until(rec):
                stop = "condition"
                break
        for obs in self.observers:
            obs.finish(self.config)
        return RunResult(self.scenario, self.config, self.config.event_index, stop, self.decisions)


class AdversarialGenerator:
    """Seeded arbitrary states: every field drawn from its full type."""

    VALUES = ("x0", "x1", "x2", "x3")

    def __init__(self, net: Network, rng: random.Random):
        self.net = net
        self.rng = rng
        self.p = net.params
        self.sc = net.scenario
        self.top = self.p.top
        self.q = self.p.q
        self.pool = self._pool()

    def _pool(self) -> list:
        # Labels over a small sub-domain relate to each other often, which
        # makes corrupted states that actually interact.
        rng = self.rng
        pool = []
        while len(pool) < 8:
            antis = frozenset(rng.sample(range(1, 9), rng.randint(0, 3)))
            pool.append(Label(rng.randint(1, 8), antis))
        pool.append(label_next(pool[:3], self.p.d))
        return pool

    def label(self) -> Label:
        rng = self.rng
        if rng.random() < 0.6:
            return rng.choice(self.pool)
        size = rng.randint(0, min(self.p.d, self.sc.max_antistings))
        sting = rng.randint(1, self.q)
        antis = set(rng.sample(range(1, self.q + 1), size))
        if antis and rng.random() < 0.15:
            antis.pop()
            antis.add(sting)
        return Label(sting, frozenset(antis))

    def integer(self) -> int:
        return self.top if self.rng.random() < 0.1 else self.rng.randint(0, self.top)

    def entry(self) -> TagEntry:
        rng = self.rng
        cl = self.label() if rng.random() < 0.3 else None
        return TagEntry(self.label(), self.integer(), self.integer(), rng.randint(1, self.p.n), cl)

    def tag(self) -> Tag:
        return Tag(self.entry() for _ in range(self.p.n))

    def value(self):
        rng = self.rng
        if self.sc.mode is Mode.GENERALIZED:
            size = rng.randint(0, min(self.top - 1, 6))
            return tuple(rng.choice(self.VALUES) for _ in range(size))
        return rng.choice(self.VALUES)

    def proposal(self, p_null: float = 0.4) -> Optional[Proposal]:
        if self.rng.random() < p_null:
            return None
        return Proposal(self.tag(), self.value())

    def history(self, capacity: int, fill: int) -> FifoHistory:
        h = empty_history(capacity)
        for _ in range(fill * 3):
            if len(h) >= fill:
                break
            h = fifo_add(h, self.label())
        return h

    def message(self, kind: Kind, sender: int) -> Message:
        n = self.p.n
        if kind is Kind.HEARTBEAT:
            return heartbeat(sender)
        if kind is Kind.P1B:
            return Message(kind, sender, self.tag(), last=self.proposal())
        if kind is Kind.P2B:
            return Message(kind, sender, self.tag(), record=tuple(self.proposal() for _ in range(n)))
        if kind is Kind.P1A:
            return Message(kind, sender, self.tag())
        return Message(kind, sender, self.tag(), self.value())

    def node(self, pid: int, crashed: bool = False) -> Node:
        rng = self.rng
        p = self.p
        a = self.tag()
        acc = AcceptorState(
            a=a,
            r=tuple(self.proposal() for _ in range(p.n)),
            H=tuple(self.history(p.K, rng.randint(0, p.K)) for _ in range(p.n)),
            Hcl=self.history(p.M, rng.randint(0, min(p.M, 64))),
            learned=self.value() if self.sc.mode is Mode.GENERALIZED else (),
        )
        phase = rng.choice(list(Phase))
        N = frozenset(x for x in p.ids if rng.random() < 0.3)
        prop = ProposerState(
            phase=phase,
            p=self.value(),
            p_star=self.value(),
            a_sent=a if rng.random() < 0.3 else self.tag(),
            N=N,
            m_count=rng.randint(0, len(N)),
            collected=tuple(self.proposal() for _ in range(rng.randint(0, len(N)))),
            cmd=rng.choice(self.VALUES) if self.sc.mode is Mode.GENERALIZED else None,
            pending_cmd=None,
            inputs_read=rng.randint(0, 5),
        )
        W = self.sc.window
        detector = det.DetectorState(tuple(rng.randint(0, W) for _ in range(p.n)), W)
        return Node(pid, acc, prop, detector, crashed)

    def config(self) -> Configuration:
        rng = self.rng
        nodes = [self.node(pid) for pid in self.p.ids]
        # Quota: at least one processor tag with an exhausted step field.
        pid = rng.randint(1, self.p.n)
        mu = rng.randint(1, self.p.n)
        nd = nodes[pid - 1]
        nodes[pid - 1] = replace(nd, acc=replace(nd.acc, a=nd.acc.a.replace(mu, s=self.top)))
        channels: dict = {}
        uid = 0
        kinds = list(Kind)
        for key in self.net.channel_keys():
            items = []
            for _ in range(self.p.C):
                if self.sc.capacity_mode == "direction" or rng.random() < 0.5:
                    src, dst = key
                else:
                    src, dst = key[1], key[0]
                kind = kinds[rng.randrange(len(kinds))]
                items.append(InFlight(uid, src, dst, self.message(kind, src)))
                uid += 1
            channels[key] = tuple(items)
        return Configuration(tuple(nodes), channels, 0, uid)


# Trace records


def _value_text(value: Any) -> Any:
    if isinstance(value, tuple):
        return list(value)
    return value


def message_summary(item: InFlight) -> dict:
    msg = item.msg
    out: dict = {"uid": item.uid, "kind": msg.kind.value, "src": item.src, "dst": item.dst}
    if msg.tag is not None:
        out["tag"] = format_tag(msg.tag)
    if msg.value is not None:
        out["value"] = _value_text(msg.value)
    if msg.last is not None:
        out["last"] = [format_tag(msg.last.tag), _value_text(msg.last.value)]
    if msg.record is not None:
        out["record"] = [None if pr is None else [format_tag(pr.tag), _value_text(pr.value)] for pr in msg.record]
    return out


def trace_record(rec: EventRecord) -> dict:
    """A JSON-ready summary of one event; tags use their canonical text form."""
    ev = rec.event
    steps = []
    for st in rec.steps:
        d: dict = {"pid": st.pid, "role": st.role, "kind": st.kind}
        if st.uid is not None:
            d["uid"] = st.uid
            d["src"] = st.src
        if st.before != st.after:
            d["before"] = format_tag(st.before)
            d["after"] = format_tag(st.after)
        if st.effects.produced is not None:
            d["produced"] = st.effects.produced
        if st.effects.decided is not None:
            dec = st.effects.decided
            d["decided"] = {"mu": dec.mu, "label": format_label(dec.label), "s": dec.s, "t": dec.t,
                            "value": _value_text(dec.value)}
        if st.prop_after is not None and st.prop_before is not None and st.prop_after.phase != st.prop_before.phase:
            d["phase"] = st.prop_after.phase.value
        steps.append(d)
    return {
        "event_index": rec.index,
        "kind": ev.kind.value,
        "actor": ev.actor,
        "uid": ev.uid,
        "steps": steps,
        "sent": [message_summary(m) for m in rec.emitted],
        "dropped": list(rec.dropped),
    }


def trace_line(rec: EventRecord) -> str:
    return json.dumps(trace_record(rec), sort_keys=True, separators=(",", ":"))


class TraceWriter:
    """Observer that writes one canonical JSON line per event."""

    def __init__(self, stream):
        self.stream = stream

    def start(self, net: Network, cfg: Configuration) -> None:
        pass

    def observe(self, before: Configuration, rec: EventRecord, after: Configuration) -> None:
        self.stream.write(trace_line(rec) + "\n")

    def finish(self, cfg: Configuration) -> None:
        pass


# Scenario files

_SECTIONS = {
    "params": {"n": int, "f": int, "C": int, "b": int},
    "init": {"mode": str, "seed": int},
    "schedule": {"mode": str, "weights": dict, "fairness": str, "heartbeats": bool, "crashes": list,
                 "corruptions": list},
    "theta": {"mode": str, "proposers": list, "W": int},
    "run": {"max_events": int, "commands": list, "mode": str, "overflow": str, "capacity": str, "audit": list,
            "input_seed": int},
}


def _pairs(key: str, value: list) -> tuple:
    out = []
    for item in value:
        if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, int) for x in item)):
            raise ConfigurationError(f"{key}: expected [processor, event_index] pairs, got {item!r}")
        out.append((item[0], item[1]))
    return tuple(out)


def scenario_from_config(doc: dict) -> Scenario:
    """Build a :class:`Scenario` from a parsed scenario file.

    Unknown sections or keys and wrongly typed values raise
    :class:`ConfigurationError` naming the offending key.
    """
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown section {section!r}")
        if not isinstance(body, dict):
            raise ConfigurationError(f"{section}: expected a table")
        for key, value in body.items():
            want = _SECTIONS[section].get(key)
            if want is None:
                raise ConfigurationError(f"unknown key {section}.{key}")
            if not isinstance(value, want) or (want is int and isinstance(value, bool)):
                raise ConfigurationError(f"{section}.{key}: expected {want.__name__}, got {value!r}")

    def get(section: str, key: str, default: Any = None) -> Any:
        return doc.get(section, {}).get(key, default)

    kw: dict = {}
    for key in ("n", "f", "C", "b"):
        if get("params", key) is not None:
            kw[key] = get("params", key)
    if "n" in kw and "f" not in kw:
        kw["f"] = (kw["n"] - 1) // 2
    simple = [("init", "mode", "init"), ("init", "seed", "seed"), ("schedule", "mode", "schedule"),
              ("schedule", "heartbeats", "heartbeats"), ("theta", "mode", "theta"), ("theta", "W", "W"),
              ("run", "max_events", "max_events"), ("run", "overflow", "overflow"),
              ("run", "capacity", "capacity_mode"), ("run", "input_seed", "input_seed")]
    for section, key, field_name in simple:
        if get(section, key) is not None:
            kw[field_name] = get(section, key)
    fairness = get("schedule", "fairness")
    if fairness is not None:
        if fairness not in ("none", "heartbeat"):
            raise ConfigurationError(f"schedule.fairness: expected 'none' or 'heartbeat', got {fairness!r}")
        kw["fair_heartbeat"] = fairness == "heartbeat"
    weights = get("schedule", "weights")
    if weights is not None:
        for name, w in weights.items():
            if name not in ("deliver", "proposer", "heartbeat") or not isinstance(w, (int, float)) or w < 0:
                raise ConfigurationError(f"schedule.weights.{name}: invalid weight {w!r}")
        base = dict(Scenario.weights)
        base.update({k: float(v) for k, v in weights.items()})
        kw["weights"] = tuple(base.items())
    mode = get("run", "mode")
    if mode is not None:
        try:
            kw["mode"] = Mode(mode)
        except ValueError:
            raise ConfigurationError(f"run.mode: expected 'repeated' or 'generalized', got {mode!r}") from None
    if get("theta", "proposers") is not None:
        kw["static_proposers"] = tuple(get("theta", "proposers"))
    if get("run", "commands") is not None:
        kw["commands"] = tuple(str(c) for c in get("run", "commands"))
    if get("run", "audit") is not None:
        kw["audit"] = tuple(get("run", "audit"))
    if get("schedule", "crashes") is not None:
        kw["crashes"] = _pairs("schedule.crashes", get("schedule", "crashes"))
    if get("schedule", "corruptions") is not None:
        kw["corruptions"] = _pairs("schedule.corruptions", get("schedule", "corruptions"))
    return Scenario(**kw)


def load_scenario(path: str) -> Scenario:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return scenario_from_config(doc)
