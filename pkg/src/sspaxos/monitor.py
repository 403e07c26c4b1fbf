"""Omniscient trace analysis: interrupts, epochs, safe epochs, taint and safety.

:class:`Monitor` is a simulation observer.  It only reads configurations
and event records, so running it never changes the execution.

Vocabulary:

* an *interrupt* at processor ``lam`` is a handler step after which the
  first valid entry of ``lam``'s tag moved, or kept its position but
  changed label;
* an *epoch* is a maximal run of ``lam``'s steps without interrupts, so
  every tag in it has the same first valid entry ``mu`` and label ``l``;
* an epoch is *h-safe* when it ends because an integer field of entry
  ``mu`` reached ``2^b`` and, in the configuration just before it began,
  every tag carrying ``l`` in entry ``mu`` had step and trial at most
  ``h``;
* messages already in flight when a window opens are *fake* for that
  window; the taint of fake messages is propagated conservatively to
  every acceptance and decision that may depend on them.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, NamedTuple, Optional

from .labeling import Label, format_label
from .protocol import TAGGED_KINDS, Kind, Mode, Phase
from .simnet import Configuration, EventKind, EventRecord, Network
from .tags import CAUSE_MAX, OMEGA, Tag, TagSystem


class InterruptKind(Enum):
    LEFT = "<-"
    RIGHT = "->"
    MAX = "max"
    CL = "cl"
    FAULT = "fault"


class Interrupt(NamedTuple):
    processor: int
    position: int
    kind: InterruptKind
    mu: Any
    chi: Any
    label: Optional[Label]
    exhausted: bool = False
    step: int = 0

    def name(self) -> str:
        if self.kind in (InterruptKind.LEFT, InterruptKind.RIGHT):
            return f"[{self.mu},{self.kind.value}]"
        if self.kind is InterruptKind.FAULT:
            return "fault"
        return f"[{self.processor},{self.kind.value}]"


@dataclass
class Epoch:
    """A maximal interrupt-free segment of one processor's execution.

    ``start`` is the index of the event in which the epoch began (0 for the
    first one) and ``end`` the index of the event holding its terminal
    interrupt, or ``None`` while open.
    """

    processor: int
    start: int
    mu: Any
    label: Optional[Label]
    end: Optional[int] = None
    terminal: Optional[Interrupt] = None
    min_h: Optional[int] = None
    summary: dict = field(default_factory=dict)

    @property
    def closed(self) -> bool:
        return self.end is not None

    @property
    def exhausted(self) -> bool:
        return self.terminal is not None and self.terminal.exhausted


class DecisionEvent(NamedTuple):
    decider: int
    index: int
    mu: int
    label: Label
    s: int
    value: Any
    tainted: bool
    support: tuple = ()


class AcceptanceEvent(NamedTuple):
    acceptor: int
    index: int
    mu: int
    label: Label
    s: int
    value: Any
    tainted: bool


class Census(NamedTuple):
    primary: int
    embedded: int
    cl_counts: tuple


def chi_rank(chi: Any, n: int) -> int:
    return n + 1 if chi is OMEGA else chi


def classify_interrupt(ts: TagSystem, prev: Tag, nxt: Tag, owner: int, cause: Optional[str] = None):
    """Return ``(kind, mu)`` for the transition ``prev -> nxt`` at ``owner``, or ``None``.

    ``cause`` is the production cause reported by the handler; it tells an
    exhausted integer (``"max"``) from a canceled label (``"cl"``).
    """
    c0, c1 = ts.chi(prev), ts.chi(nxt)
    if c0 is OMEGA and c1 is OMEGA:
        return None
    n = len(prev)
    r0, r1 = chi_rank(c0, n), chi_rank(c1, n)
    if r1 < r0:
        return InterruptKind.LEFT, c1
    if r1 > r0:
        return InterruptKind.RIGHT, c1
    if prev[c1].l == nxt[c1].l:
        return None
    if c1 != owner:
        return InterruptKind.LEFT, c1
    return (InterruptKind.MAX if cause == CAUSE_MAX else InterruptKind.CL), owner


def exhausted_exit(ts: TagSystem, prev: Tag, nxt: Tag, kind: InterruptKind) -> bool:
    """Whether the interrupt ended the old entry through an integer reaching ``2^b``."""
    if kind is InterruptKind.MAX:
        return True
    if kind is not InterruptKind.RIGHT:
        return False
    mu = ts.chi(prev)
    if mu is OMEGA:
        return False
    e0, e1 = prev[mu], nxt[mu]
    return e1.l == e0.l and e1.cl is None and ts.top in (e1.s, e1.t)


def track_epochs(processor: int, initial: tuple, interrupts: Iterable[Interrupt]) -> list[Epoch]:
    """Partition a processor's execution at its interrupts.

    ``initial`` is the ``(chi, label)`` pair of the processor's first tag.
    With ``k`` interrupts the result has ``k + 1`` epochs, the last open.
    """
    mu, label = initial
    current = Epoch(processor, 0, mu, label)
    out = [current]
    for it in interrupts:
        if it.processor != processor:
            continue
        current.end, current.terminal = it.position, it
        current = Epoch(processor, it.position, it.chi, it.label)
        out.append(current)
    return out


def all_tags(cfg: Configuration) -> Iterable[Tag]:
    """Every tag held by a processor or carried by an in-flight message."""
    for nd in cfg.nodes:
        yield nd.acc.a
        for pr in nd.acc.r:
            if pr is not None:
                yield pr.tag
        prop = nd.prop
        if prop.a_sent is not None:
            yield prop.a_sent
        for pr in prop.collected:
            if pr is not None:
                yield pr.tag
    for m in cfg.inflight():
        if m.msg.tag is not None:
            yield m.msg.tag
        yield from m.msg.embedded_tags()


def min_safe_h(cfg: Configuration, mu: Any, label: Optional[Label]) -> int:
    """Smallest ``h`` such that every tag with ``label`` in entry ``mu`` has integers ``<= h``."""
    if mu is OMEGA or label is None:
        return 0
    h = 0
    for x in all_tags(cfg):
        e = x[mu]
        if e.l == label:
            h = max(h, e.s, e.t)
    return h


def h_safe(epoch: Epoch, h: int) -> bool:
    return epoch.exhausted and epoch.min_h is not None and epoch.min_h <= h


def census(cfg: Configuration) -> Census:
    """Count tags and, per identifier, the labels a canceling field could come from."""
    primary_tags = [nd.acc.a for nd in cfg.nodes]
    embedded = 0
    for m in cfg.inflight():
        if m.msg.kind in TAGGED_KINDS:
            primary_tags.append(m.msg.tag)
        embedded += len(m.msg.embedded_tags())
    for nd in cfg.nodes:
        embedded += sum(pr is not None for pr in nd.acc.r)
        embedded += (nd.prop.a_sent is not None) + sum(pr is not None for pr in nd.prop.collected)
    n = len(cfg.nodes)
    cl_counts = []
    for mu in range(1, n + 1):
        labels = {x[mu].l for x in primary_tags}
        for nd in cfg.nodes:
            labels.update(nd.acc.H[mu - 1].items)
        cl_counts.append(len(labels))
    return Census(len(primary_tags), len(primary_tags) + embedded, tuple(cl_counts))


def unsafe_steps(acceptances: Iterable[AcceptanceEvent], mu: int, label: Label) -> set:
    return {a.s for a in acceptances if a.tainted and a.mu == mu and a.label == label}


def is_prefix(p: tuple, q: tuple) -> bool:
    return len(p) <= len(q) and tuple(q[: len(p)]) == tuple(p)


def check_safety(decisions: Iterable[DecisionEvent], mu: int, label: Label, h: int,
                 mode: Mode = Mode.REPEATED) -> list[dict]:
    """Conflicts among untainted decisions with characteristic ``(mu, label, s >= h)``.

    Repeated mode: one value per step.  Generalized mode: all decided
    histories are pairwise prefix-related and each decider's successive
    histories extend each other.
    """
    chosen = sorted((d for d in decisions if not d.tainted and d.mu == mu and d.label == label and d.s >= h),
                    key=lambda d: d.index)
    out = []
    if mode is Mode.REPEATED:
        by_step = defaultdict(dict)
        for d in chosen:
            by_step[d.s].setdefault(d.value, d)
        for s, vals in sorted(by_step.items()):
            if len(vals) > 1:
                out.append({"check": "agreement", "s": s, "values": sorted(map(str, vals)),
                            "events": sorted(d.index for d in vals.values())})
        return out
    values = sorted({tuple(d.value) for d in chosen}, key=len)
    for p, q in zip(values, values[1:]):
        if not is_prefix(p, q):
            out.append({"check": "prefix", "values": [list(p), list(q)]})
    last: dict = {}
    for d in chosen:
        prev = last.get(d.decider)
        if prev is not None and not is_prefix(prev.value, d.value):
            out.append({"check": "stability", "decider": d.decider, "events": [prev.index, d.index]})
        last[d.decider] = d
    return out


class TaintTracker:
    """Fake-message lineage for one analysis window.

    The window opens at configuration ``cfg``.  Its in-flight messages are
    fake.  When ``cfg`` is an arbitrary initial configuration, its stored
    accepted proposals and unfinished proposer rounds are tainted too.
    Taint follows messages only: a command history that a proposer carries
    over from one step to the next is not a message and stays untainted.
    """

    def __init__(self, net: Network, cfg: Configuration, owner: int):
        self.owner = owner
        self.ts = net.ts
        self.quorum = net.params.quorum
        self.tainted: set = {m.uid for m in cfg.inflight()}
        self.sent_at: dict = {}
        self.support: dict = {}
        self.record: dict = {}
        self.round: dict = {}
        self.counted: dict = {}
        self.p1: dict = {}
        self.quorums: list = []
        self.decisions: list = []
        self.acceptances: list = []
        self.faults = 0
        # Local state is arbitrary only in the initial configuration; later
        # windows inherit records and rounds built from earlier real events.
        arbitrary = cfg.event_index == 0 and net.scenario.init == "adversarial"
        for nd in cfg.nodes:
            for mu, pr in enumerate(nd.acc.r, start=1):
                if pr is not None:
                    self.record[(nd.pid, mu)] = arbitrary
            self.round[nd.pid] = arbitrary and nd.prop.phase is not Phase.IDLE
            self.counted[nd.pid] = []
            self.p1[nd.pid] = ()

    def _corrupt(self, pid: int) -> None:
        self.faults += 1
        for mu in range(1, len(self.round) + 1):
            self.record[(pid, mu)] = True
        self.round[pid] = True

    def process(self, rec: EventRecord) -> None:
        idx = rec.index
        emitted = {item.uid: item for item in rec.emitted}
        for uid in emitted:
            self.sent_at[uid] = idx
        if rec.event.kind is EventKind.CORRUPT:
            self._corrupt(rec.event.actor)
        for step in rec.steps:
            if step.role == "acceptor":
                self._acceptor(idx, step, emitted)
            elif step.role == "proposer":
                self._proposer(step, emitted)

    def _acceptor(self, idx: int, step, emitted: dict) -> None:
        pid, eff = step.pid, step.effects
        t_msg = step.uid in self.tainted
        if eff.accepted is not None:
            mu, prop = eff.accepted
            self.record[(pid, mu)] = t_msg
            e = prop.tag[mu]
            if t_msg:
                self.acceptances.append(AcceptanceEvent(pid, idx, mu, e.l, e.s, prop.value, True))
        if eff.decided is not None:
            d = eff.decided
            self.decisions.append(DecisionEvent(pid, idx, d.mu, d.label, d.s, d.value, t_msg,
                                                self.support.get(step.uid, ())))
        for uid in step.out:
            msg = emitted[uid].msg
            t = t_msg
            if not t and msg.kind is Kind.P1B and msg.last is not None:
                # A reported proposal can only be selected, and so extend a
                # scenario, when it shares entry, label and step with the reply.
                chi = self.ts.chi(msg.tag)
                if chi is not OMEGA and self.ts.chi(msg.last.tag) == chi:
                    e, c = msg.tag[chi], msg.last.tag[chi]
                    t = e.l == c.l and e.s == c.s and self.record.get((pid, chi), True)
            elif not t and msg.kind is Kind.P2B and msg.record is not None:
                chi = self.ts.chi(msg.tag)
                t = chi is not OMEGA and msg.record[chi - 1] is not None and self.record.get((pid, chi), True)
            if t:
                self.tainted.add(uid)

    def _proposer(self, step, emitted: dict) -> None:
        pid, eff = step.pid, step.effects
        if eff.counted is not None:
            if step.uid in self.tainted:
                self.round[pid] = True
            self.counted[pid].append((step.src, self.sent_at.get(step.uid, -1)))
        event = eff.round_event
        if event in ("phase2", "decide", "restart"):
            # A responder set inherited from before the window is not a quorum
            # whose messages were processed here.
            if pid == self.owner and len({a for a, _ in self.counted[pid]}) >= self.quorum:
                self.quorums.append(tuple(self.counted[pid]))
            if event == "phase2":
                self.p1[pid] = tuple(self.counted[pid])
        for uid in step.out:
            msg = emitted[uid].msg
            if msg.kind in (Kind.P2A, Kind.DECISION):
                if self.round[pid]:
                    self.tainted.add(uid)
                self.support[uid] = self.p1[pid]
        if event == "phase2":
            self.counted[pid] = []
        elif event in ("decide", "begin", "restart"):
            self.counted[pid] = []
            self.round[pid] = False
            if event != "decide":
                self.p1[pid] = ()

    def zone(self) -> Optional[tuple]:
        """``(Q0 send events, Qf send events)`` of the owner's first and last quorums."""
        if len(self.quorums) < 2:
            return None

        def first_sends(q):
            out: dict = {}
            for sender, at in q:
                out.setdefault(sender, at)
            return out

        return first_sends(self.quorums[0]), first_sends(self.quorums[-1])


def in_zone(zone: tuple, d: DecisionEvent) -> bool:
    q0, qf = zone
    for sender, at in d.support:
        if sender in q0 and sender in qf and q0[sender] <= at <= qf[sender]:
            return True
    return False


class Monitor:
    """Simulation observer that audits every configuration and event.

    ``audit`` lists the processors whose epochs are analysed (default: the
    scenario's audited set).  ``keep`` limits how many closed-epoch
    summaries are stored; counts are always complete.
    """

    def __init__(self, audit: Optional[Iterable[int]] = None, annotate: bool = True, keep: int = 10_000):
        self.audit_arg = tuple(audit) if audit is not None else None
        self.annotate = annotate
        self.keep = keep

    # Observer interface

    def start(self, net: Network, cfg: Configuration) -> None:
        self.net = net
        self.ts = net.ts
        self.params = net.params
        self.mode = net.scenario.mode
        self.audit = self.audit_arg if self.audit_arg is not None else net.scenario.audited()
        n = self.params.n
        self.annotations: list = []
        self.violations: list = []
        self.interrupts = {pid: defaultdict(int) for pid in self.params.ids}
        self.left_counts = {pid: defaultdict(int) for pid in self.params.ids}
        self.productions = defaultdict(int)
        self.production_events = defaultdict(list)
        self.epochs: list = []
        self.closed_epochs = 0
        self.safe_epochs: list = []
        self.first_safe: Optional[dict] = None
        self.max_primary = 0
        self.max_embedded = 0
        self.max_cl = [0] * n
        self.round_replies = {pid: 0 for pid in self.params.ids}
        self.round_key = {pid: None for pid in self.params.ids}
        self.max_round_replies = 0
        self.decision_count = 0
        self.open: dict = {}
        self.trackers: dict = {}
        self._census(cfg)
        for pid in self.audit:
            a = cfg.node(pid).acc.a
            chi = self.ts.chi(a)
            self._open_epoch(pid, 0, chi, None if chi is OMEGA else a[chi].l, cfg)

    def observe(self, before: Configuration, rec: EventRecord, after: Configuration) -> None:
        for tr in self.trackers.values():
            tr.process(rec)
        self._census(after)
        fired = []
        if rec.event.kind is EventKind.CORRUPT:
            pid = rec.event.actor
            a = after.node(pid).acc.a
            chi = self.ts.chi(a)
            label = None if chi is OMEGA else a[chi].l
            fired.append(Interrupt(pid, rec.index, InterruptKind.FAULT, None, chi, label))
        for k, step in enumerate(rec.steps):
            self._round_progress(step)
            if step.effects.produced is not None:
                self.productions[step.pid] += 1
                self.production_events[step.pid].append(rec.index)
            if step.role == "proposer":
                chi = self.ts.chi(step.after)
                if chi is OMEGA or chi > step.pid:
                    self._violation({"check": "chi_left", "index": rec.index, "processor": step.pid,
                                     "chi": str(chi)})
            if step.before is step.after or step.before == step.after:
                continue
            got = classify_interrupt(self.ts, step.before, step.after, step.pid, step.effects.produced)
            if got is None:
                continue
            kind, mu = got
            chi = self.ts.chi(step.after)
            label = None if chi is OMEGA else step.after[chi].l
            ex = exhausted_exit(self.ts, step.before, step.after, kind)
            fired.append(Interrupt(step.pid, rec.index, kind, mu, chi, label, ex, k))
        for it in fired:
            self.interrupts[it.processor][it.name()] += 1
            if it.kind is InterruptKind.LEFT and it.mu is not OMEGA:
                self.left_counts[it.processor][it.mu] += 1
            if self.annotate:
                self.annotations.append({"type": "interrupt", "index": it.position, "processor": it.processor,
                                         "kind": it.name(), "exhausted": it.exhausted})
            if it.processor in self.open:
                self._close_epoch(it, after)
                self._open_epoch(it.processor, rec.index, it.chi, it.label, before)
                self.trackers[it.processor].process(rec)
        for d in rec.decisions():
            self.decision_count += 1

    def finish(self, cfg: Configuration) -> None:
        for pid, ep in self.open.items():
            ep.summary = self._summarize(ep, self.trackers[pid])
        self._check_interrupt_bound()

    # Internals

    def _violation(self, v: dict) -> None:
        self.violations.append(v)
        if self.annotate:
            self.annotations.append({"type": "violation", **v})

    def _census(self, cfg: Configuration) -> None:
        c = census(cfg)
        self.max_primary = max(self.max_primary, c.primary)
        self.max_embedded = max(self.max_embedded, c.embedded)
        for i, x in enumerate(c.cl_counts):
            if x > self.max_cl[i]:
                self.max_cl[i] = x
        if c.primary > self.params.K:
            self._violation({"check": "census", "index": cfg.event_index, "primary": c.primary, "K": self.params.K})
        if max(c.cl_counts) > self.params.Kcl:
            self._violation({"check": "cl_census", "index": cfg.event_index, "counts": list(c.cl_counts),
                             "Kcl": self.params.Kcl})

    def _round_progress(self, step) -> None:
        if step.role != "proposer":
            return
        pid = step.pid
        pb = step.prop_before
        expected = {Phase.PHASE1: "p1b", Phase.PHASE2: "p2b"}.get(pb.phase) if pb is not None else None
        if expected is not None and step.kind == expected:
            if self.round_key[pid] != (pb.phase, pb.a_sent):
                self.round_key[pid] = (pb.phase, pb.a_sent)
                self.round_replies[pid] = 0
            self.round_replies[pid] += 1
            self.max_round_replies = max(self.max_round_replies, self.round_replies[pid])
        pa = step.prop_after
        if pa is not None and (pa.phase, pa.a_sent) != self.round_key[pid]:
            self.round_key[pid] = (pa.phase, pa.a_sent)
            self.round_replies[pid] = 0

    def _open_epoch(self, pid: int, index: int, chi: Any, label: Optional[Label], gamma: Configuration) -> None:
        ep = Epoch(pid, index, chi, label, min_h=min_safe_h(gamma, chi, label))
        self.open[pid] = ep
        self.trackers[pid] = TaintTracker(self.net, gamma, pid)

    def _close_epoch(self, it: Interrupt, after: Configuration) -> None:
        pid = it.processor
        ep = self.open.pop(pid)
        tracker = self.trackers.pop(pid)
        ep.end, ep.terminal = it.position, it
        ep.summary = self._summarize(ep, tracker)
        self.closed_epochs += 1
        if len(self.epochs) < self.keep:
            self.epochs.append(ep)
        if self.annotate:
            self.annotations.append({"type": "epoch", **ep.summary})
        if h_safe(ep, ep.min_h):
            self.safe_epochs.append(ep.summary)
            if self.first_safe is None and ep.min_h < self.params.top:
                self.first_safe = ep.summary
            for v in ep.summary["zone_violations"]:
                self._violation({"check": "safety", "epoch_start": ep.start, "processor": pid, **v})

    def _summarize(self, ep: Epoch, tr: TaintTracker) -> dict:
        mu, label, h = ep.mu, ep.label, ep.min_h
        end = ep.end
        decs = [d for d in tr.decisions if d.mu == mu and d.label == label and (end is None or d.index <= end)]
        zone = tr.zone()
        inside = [d for d in decs if zone is not None and in_zone(zone, d)]
        window_viol = check_safety(decs, mu, label, h, self.mode) if label is not None else []
        zone_viol = check_safety(inside, mu, label, h, self.mode) if label is not None else []
        unsafe = sorted(unsafe_steps(tr.acceptances, mu, label)) if label is not None else []
        quiet = not any(ep.start < i < (end if end is not None else float("inf"))
                        for i in self.production_events.get(mu, ())) if mu is not OMEGA else False
        return {
            "processor": ep.processor,
            "start": ep.start,
            "end": end,
            "mu": None if mu is OMEGA else mu,
            "label": None if label is None else format_label(label),
            "terminal": None if ep.terminal is None else ep.terminal.name(),
            "exhausted": ep.exhausted,
            "min_h": h,
            "h_safe": h_safe(ep, h),
            "quorums": len(tr.quorums),
            "zone": "defined" if zone is not None else "undefined",
            "decisions": len(decs),
            "untainted_decisions": sum(not d.tainted for d in decs),
            "zone_decisions": len(inside),
            "unsafe_steps": unsafe,
            "unsafe_below_h": all(s < h for s in unsafe),
            "unsafe_within_h": all(s <= h for s in unsafe),
            "producer_quiet": quiet,
            "faults": tr.faults,
            "window_violations": window_viol,
            "zone_violations": zone_viol,
        }

    def interrupt_bound(self, rho: int, mu: int) -> int:
        return (self.productions[mu] + 1) * (self.params.K + 1) - 1

    def _check_interrupt_bound(self) -> None:
        for rho in self.params.ids:
            for mu, count in self.left_counts[rho].items():
                if mu < rho and count > self.interrupt_bound(rho, mu):
                    self._violation({"check": "interrupt_bound", "processor": rho, "mu": mu, "count": count,
                                     "bound": self.interrupt_bound(rho, mu)})

    def report(self) -> dict:
        p = self.params
        epochs = [ep.summary for ep in self.epochs] + [ep.summary for ep in self.open.values() if ep.summary]
        return {
            "interrupts": {str(pid): dict(sorted(c.items())) for pid, c in self.interrupts.items()},
            "productions": {str(pid): self.productions[pid] for pid in p.ids},
            "epochs": epochs,
            "closed_epochs": self.closed_epochs,
            "safe_epochs": len(self.safe_epochs),
            "first_safe": self.first_safe,
            "census": {"max_primary": self.max_primary, "max_embedded": self.max_embedded,
                       "max_cl": list(self.max_cl), "K": p.K, "Kcl": p.Kcl},
            "max_round_replies": self.max_round_replies,
            "decisions": self.decision_count,
            "violations": self.violations,
            "verdict": "violation" if self.violations else "ok",
        }
