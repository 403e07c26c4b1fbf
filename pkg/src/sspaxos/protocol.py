"""Acceptor and proposer state machines.

Every processor runs an acceptor and, while its leader predicate holds, a
proposer.  The proposer's blocking loop is recast as an event-driven phase
machine (``IDLE`` -> ``PHASE1`` -> ``PHASE2`` -> ``IDLE``).  Handlers are
pure: they take the current states and a message and return new states
plus an :class:`Effects` record with the messages to send and a few facts
that the monitor uses (productions, acceptances, counted replies).

Two value modes are supported.  In repeated mode every step decides an
opaque value.  In generalized mode the proposal is a command history whose
length equals the step number.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, NamedTuple, Optional

from .labeling import Label
from .tags import (
    OMEGA,
    DeploymentParams,
    FifoHistory,
    Tag,
    TagOrder,
    TagSystem,
    empty_history,
    fifo_add,
    uniform_tag,
)

NOP = "nop"


class Mode(Enum):
    REPEATED = "repeated"
    GENERALIZED = "generalized"


class Phase(Enum):
    IDLE = "idle"
    PHASE1 = "phase1"
    PHASE2 = "phase2"


class Kind(Enum):
    P1A = "p1a"
    P1B = "p1b"
    P2A = "p2a"
    P2B = "p2b"
    DECISION = "decision"
    HEARTBEAT = "heartbeat"


TAGGED_KINDS = frozenset({Kind.P1A, Kind.P1B, Kind.P2A, Kind.P2B, Kind.DECISION})


class Proposal(NamedTuple):
    tag: Tag
    value: Any


@dataclass(frozen=True)
class Message:
    """A protocol message.  ``kind`` determines which payload fields are set.

    ``last`` is the accepted proposal carried by a p1b reply; ``record`` is
    the full accepted-proposal record carried by a p2b reply.
    """

    kind: Kind
    sender: int
    tag: Optional[Tag] = None
    value: Any = None
    last: Optional[Proposal] = None
    record: Optional[tuple] = None

    def embedded_tags(self) -> list[Tag]:
        out = []
        if self.last is not None:
            out.append(self.last.tag)
        if self.record is not None:
            out.extend(pr.tag for pr in self.record if pr is not None)
        return out


def p1a(sender: int, tag: Tag) -> Message:
    return Message(Kind.P1A, sender, tag)


def p2a(sender: int, tag: Tag, value: Any) -> Message:
    return Message(Kind.P2A, sender, tag, value)


def decision(sender: int, tag: Tag, value: Any) -> Message:
    return Message(Kind.DECISION, sender, tag, value)


def heartbeat(sender: int) -> Message:
    return Message(Kind.HEARTBEAT, sender)


@dataclass(frozen=True)
class AcceptorState:
    a: Tag
    r: tuple
    H: tuple
    Hcl: FifoHistory
    learned: tuple = ()


@dataclass(frozen=True)
class ProposerState:
    phase: Phase = Phase.IDLE
    p: Any = None
    p_star: Any = None
    a_sent: Optional[Tag] = None
    N: frozenset = frozenset()
    m_count: int = 0
    collected: tuple = ()
    cmd: Optional[str] = None
    pending_cmd: Optional[str] = None
    inputs_read: int = 0


@dataclass(frozen=True)
class Decision:
    decider: int
    mu: int
    label: Label
    s: int
    t: int
    value: Any


@dataclass
class Effects:
    """Outputs and observable facts of one handler invocation."""

    sends: list = field(default_factory=list)
    produced: Optional[str] = None
    accepted: Optional[tuple] = None
    decided: Optional[Decision] = None
    counted: Optional[str] = None
    round_event: Optional[str] = None

    def note_production(self, cause: Optional[str]) -> None:
        if cause is not None:
            self.produced = cause


@dataclass(frozen=True)
class InputSource:
    """Deterministic proposer input.

    A command list is cycled through; an empty list yields ``nop``.  Without
    a list, tokens are generated from ``seed`` (or from the processor and
    call index alone when no seed is given).
    """

    commands: Optional[tuple] = None
    seed: Optional[int] = None

    def read(self, pid: int, k: int) -> str:
        if self.commands is not None:
            if not self.commands:
                return NOP
            return self.commands[k % len(self.commands)]
        if self.seed is not None:
            salt = random.Random(f"input:{self.seed}:{pid}:{k}").randrange(1 << 16)
            return f"v{pid}.{k}.{salt:04x}"
        return f"v{pid}.{k}"


def clean_acceptor(params: DeploymentParams, label: Label, mode: Mode) -> AcceptorState:
    n = params.n
    return AcceptorState(
        a=uniform_tag(n, label),
        r=(None,) * n,
        H=tuple(empty_history(params.K) for _ in range(n)),
        Hcl=empty_history(params.M),
        learned=() if mode is Mode.GENERALIZED else (),
    )


def clean_proposer(mode: Mode) -> ProposerState:
    return ProposerState(p=() if mode is Mode.GENERALIZED else None, p_star=() if mode is Mode.GENERALIZED else None)


def _set(seq: tuple, mu: int, value: Any) -> tuple:
    items = list(seq)
    items[mu - 1] = value
    return tuple(items)


class Protocol:
    """Handlers for one deployment."""

    def __init__(self, params: DeploymentParams, mode: Mode = Mode.REPEATED, inputs: Optional[InputSource] = None):
        self.params = params
        self.mode = mode
        self.ts = TagSystem(params)
        self.inputs = inputs or InputSource()

    # Acceptor

    def _preamble(self, me: int, acc: AcceptorState, b: Tag, eff: Effects):
        ts = self.ts
        hcl = ts.absorb_canceling(acc.Hcl, acc.a[me].l, b[me])
        a, b = ts.fill_cl(acc.a, b)
        a, hcl, cause = ts.check_entry(me, a, hcl)
        eff.note_production(cause)
        return a, b, hcl

    def _adopt(self, a: Tag, a_old: Tag, H: tuple, b: Tag, mu: int):
        """Copy ``b[mu]`` into ``a``; record a replaced label and look for a canceler."""
        a = a.with_entry(mu, b[mu])
        changed = a_old[mu].l != a[mu].l
        if changed:
            H = _set(H, mu, fifo_add(H[mu - 1], a_old[mu].l))
            canceler = self.ts.find_canceling(H[mu - 1], a[mu].l)
            if canceler is not None:
                a = a.replace(mu, cl=canceler)
        return a, H, changed

    @staticmethod
    def _purge(a: Tag, r: tuple) -> tuple:
        out = list(r)
        for i, prop in enumerate(r):
            if prop is None:
                continue
            c = prop.tag.entries[i]
            mine = a.entries[i]
            if c.l != mine.l or (mine.s, mine.t, mine.id) < (c.s, c.t, c.id):
                out[i] = None
        return tuple(out)

    def on_p1a(self, me: int, acc: AcceptorState, msg: Message) -> tuple[AcceptorState, Effects]:
        eff = Effects()
        a_old = acc.a
        a, b, hcl = self._preamble(me, acc, msg.tag, eff)
        r, H = acc.r, acc.H
        if self.ts.compare(a, b) is TagOrder.LESS:
            mu = self.ts.chi(b)
            a, H, changed = self._adopt(a, a_old, H, b, mu)
            if changed:
                r = _set(r, mu, None)
        r = self._purge(a, r)
        chi = self.ts.chi(a)
        last = None if chi is OMEGA else r[chi - 1]
        eff.sends.append((msg.sender, Message(Kind.P1B, me, a, last=last)))
        return AcceptorState(a, r, H, hcl, acc.learned), eff

    def on_p2a_or_decision(self, me: int, acc: AcceptorState, msg: Message) -> tuple[AcceptorState, Effects]:
        eff = Effects()
        a_old = acc.a
        a, b, hcl = self._preamble(me, acc, msg.tag, eff)
        r, H, learned = acc.r, acc.H, acc.learned
        if self.ts.compare(a, b) in (TagOrder.LESS, TagOrder.EQUIV):
            mu = self.ts.chi(b)
            a, H, _ = self._adopt(a, a_old, H, b, mu)
            proposal = Proposal(b, msg.value)
            r = _set(r, mu, proposal)
            eff.accepted = (mu, proposal)
            if msg.kind is Kind.DECISION:
                e = b[mu]
                eff.decided = Decision(me, mu, e.l, e.s, e.t, msg.value)
                if self.mode is Mode.GENERALIZED:
                    learned = msg.value
        r = self._purge(a, r)
        if msg.kind is Kind.P2A:
            eff.sends.append((msg.sender, Message(Kind.P2B, me, a, record=r)))
        return AcceptorState(a, r, H, hcl, learned), eff

    # Proposer

    def _broadcast(self, eff: Effects, msg: Message) -> None:
        for dst in self.params.ids:
            eff.sends.append((dst, msg))

    def truncate(self, a: Tag, p: tuple) -> tuple:
        """Cut or pad a command history to one less than the current step."""
        chi = self.ts.chi(a)
        if chi is OMEGA:
            return p
        target = max(a[chi].s - 1, 0)
        if len(p) > target:
            return tuple(p[len(p) - target:]) if target else ()
        return tuple(p) + (NOP,) * (target - len(p))

    def _extend(self, a: Tag, p_star: tuple, cmd: str) -> tuple:
        chi = self.ts.chi(a)
        if chi is OMEGA or a[chi].s == 0:
            return ()
        return tuple(p_star) + (cmd,)

    def _start_phase1(self, me: int, acc: AcceptorState, prop: ProposerState, eff: Effects, event: str):
        prop = replace(prop, phase=Phase.PHASE1, a_sent=acc.a, N=frozenset(), m_count=0, collected=())
        self._broadcast(eff, p1a(me, acc.a))
        eff.round_event = event
        return prop

    def begin_round(self, me: int, acc: AcceptorState, prop: ProposerState):
        """Start a new loop iteration: read input, increment the step, broadcast p1a."""
        eff = Effects()
        k = prop.inputs_read
        if self.mode is Mode.REPEATED:
            p_star = self.inputs.read(me, k)
            k += 1
            a, hcl, cause = self.ts.inc_step(me, acc.a, acc.Hcl)
            p, cmd = p_star, None
        else:
            p_star = prop.p if isinstance(prop.p, tuple) else ()
            if prop.pending_cmd is not None:
                cmd = prop.pending_cmd
            else:
                cmd = self.inputs.read(me, k)
                k += 1
            a, hcl, cause = self.ts.inc_step(me, acc.a, acc.Hcl)
            p_star = self.truncate(a, p_star)
            p = self._extend(a, p_star, cmd)
        eff.note_production(cause)
        acc = replace(acc, a=a, Hcl=hcl)
        prop = replace(prop, p=p, p_star=p_star, cmd=cmd, pending_cmd=None, inputs_read=k)
        prop = self._start_phase1(me, acc, prop, eff, "begin")
        return acc, prop, eff

    def retransmit(self, me: int, acc: AcceptorState, prop: ProposerState):
        """Re-send the current phase message to processors that have not answered.

        When the responder set already holds a quorum the phase is finalized
        instead.
        """
        eff = Effects()
        acc = self._own_entry(me, acc, eff)
        if prop.phase is Phase.IDLE or prop.a_sent is None:
            return acc, prop, eff
        if len(prop.N) >= self.params.quorum:
            # A corrupted responder set may already hold a quorum.
            acc, prop = self._advance(me, acc, prop, self.finalize(prop), eff)
            return acc, prop, eff
        if prop.phase is Phase.PHASE1:
            msg = p1a(me, prop.a_sent)
        else:
            msg = p2a(me, prop.a_sent, prop.p)
        for dst in self.params.ids:
            if dst not in prop.N:
                eff.sends.append((dst, msg))
        eff.round_event = "retransmit"
        return acc, prop, eff

    def _own_entry(self, me: int, acc: AcceptorState, eff: Effects) -> AcceptorState:
        """Replace an unusable own entry before any proposer action."""
        a, hcl, cause = self.ts.check_entry(me, acc.a, acc.Hcl)
        if cause is None:
            return acc
        eff.note_production(cause)
        return replace(acc, a=a, Hcl=hcl)

    def _negative_update(self, me: int, acc: AcceptorState, a_alpha: Tag, eff: Effects):
        ts = self.ts
        a, H = acc.a, acc.H
        hcl = ts.absorb_canceling(acc.Hcl, a[me].l, a_alpha[me])
        a_alpha, a = ts.fill_cl(a_alpha, a)
        a, hcl, cause = ts.check_entry(me, a, hcl)
        eff.note_production(cause)
        if not ts.leq(a_alpha, a):
            mu = ts.chi(a_alpha)
            c = ts.chi(a)
            if mu < c:
                H = _set(H, mu, fifo_add(H[mu - 1], a[mu].l))
                a = a.with_entry(mu, a_alpha[mu])
                canceler = ts.find_canceling(H[mu - 1], a[mu].l)
                if canceler is not None:
                    a = a.replace(mu, cl=canceler)
                a, hcl, cause = ts.inc_trial(me, a, hcl)
            elif mu == c and a_alpha[mu].l == a[mu].l:
                if a_alpha[mu].s == a[mu].s:
                    a = a.replace(mu, t=a_alpha[mu].t)
                    a, hcl, cause = ts.inc_trial(me, a, hcl)
                else:
                    a = a.replace(mu, s=a_alpha[mu].s)
                    a, hcl, cause = ts.inc_step(me, a, hcl)
            eff.note_production(cause)
        return replace(acc, a=a, H=H, Hcl=hcl)

    def pr_on_reply(self, me: int, acc: AcceptorState, prop: ProposerState, msg: Message):
        """Process a p1b/p2b reply; finalize and advance once a quorum answered."""
        eff = Effects()
        acc = self._own_entry(me, acc, eff)
        expected = Kind.P1B if prop.phase is Phase.PHASE1 else Kind.P2B if prop.phase is Phase.PHASE2 else None
        if msg.kind is not expected or prop.a_sent is None or msg.sender in prop.N:
            return acc, prop, eff
        ts = self.ts
        a_alpha, b = ts.fill_cl(msg.tag, prop.a_sent)
        order = ts.compare(a_alpha, b)
        positive = order is TagOrder.EQUIV
        if positive and prop.phase is Phase.PHASE2:
            chi = ts.chi(b)
            rec = None if chi is OMEGA or msg.record is None else msg.record[chi - 1]
            positive = rec is not None and rec.value == prop.p
        negative = order not in (TagOrder.LESS, TagOrder.EQUIV)
        if positive:
            collected = prop.collected
            if prop.phase is Phase.PHASE1:
                collected = collected + (msg.last,)
            prop = replace(prop, N=prop.N | {msg.sender}, m_count=prop.m_count + 1, collected=collected)
            eff.counted = "positive"
        elif negative:
            prop = replace(prop, N=prop.N | {msg.sender})
            acc = self._negative_update(me, acc, a_alpha, eff)
            eff.counted = "negative"
        else:
            return acc, prop, eff
        if len(prop.N) >= self.params.quorum:
            acc, prop = self._advance(me, acc, prop, self.finalize(prop), eff)
        return acc, prop, eff

    def finalize(self, prop: ProposerState) -> bool:
        return prop.m_count == self.params.quorum

    def _advance(self, me: int, acc: AcceptorState, prop: ProposerState, ok: bool, eff: Effects):
        if ok and prop.phase is Phase.PHASE1 and self.ts.equiv(acc.a, prop.a_sent):
            value = self.phase2_select(acc.a, prop)
            prop = replace(prop, phase=Phase.PHASE2, p=value, a_sent=acc.a, N=frozenset(), m_count=0, collected=())
            self._broadcast(eff, p2a(me, acc.a, value))
            eff.round_event = "phase2"
            return acc, prop
        if ok and prop.phase is Phase.PHASE2:
            tag = acc.a if self.ts.equiv(acc.a, prop.a_sent) else prop.a_sent
            self._broadcast(eff, decision(me, tag, prop.p))
            pending = None
            if self.mode is Mode.GENERALIZED and prop.cmd is not None:
                # a re-proposed history may not carry our command yet
                if not isinstance(prop.p, tuple) or prop.p[-1:] != (prop.cmd,):
                    pending = prop.cmd
            prop = replace(prop, phase=Phase.IDLE, N=frozenset(), m_count=0, collected=(), pending_cmd=pending)
            eff.round_event = "decide"
            return acc, prop
        acc = self._fresh_ballot(me, acc, prop, eff)
        if self.mode is Mode.GENERALIZED:
            p_star = self.truncate(acc.a, prop.p_star if isinstance(prop.p_star, tuple) else ())
            cmd = prop.cmd if prop.cmd is not None else NOP
            prop = replace(prop, p_star=p_star, p=self._extend(acc.a, p_star, cmd), cmd=cmd)
        else:
            prop = replace(prop, p=prop.p_star)
        prop = self._start_phase1(me, acc, prop, eff, "restart")
        return acc, prop

    def _fresh_ballot(self, me: int, acc: AcceptorState, prop: ProposerState, eff: Effects) -> AcceptorState:
        """Make sure a restarted phase 1 runs under a ballot no other round used.

        The tag may still be the failed round's own tag, or a copy of another
        proposer's tag adopted by the local acceptor; either is bumped.
        """
        ts = self.ts
        chi = ts.chi(acc.a)
        if chi is OMEGA:
            return acc
        reused = prop.a_sent is not None and ts.equiv(acc.a, prop.a_sent)
        if not reused and acc.a[chi].id == me:
            return acc
        a, hcl, cause = ts.inc_trial(me, acc.a, acc.Hcl)
        eff.note_production(cause)
        return replace(acc, a=a, Hcl=hcl)

    def phase2_select(self, a: Tag, prop: ProposerState):
        """Choose the phase-2 value from the collected phase-1 proposals."""
        ts = self.ts
        mu = ts.chi(a)
        if self.mode is Mode.GENERALIZED:
            default = prop.p
        else:
            default = prop.p_star
        gamma = [pr for pr in prop.collected if pr is not None]
        if not gamma or mu is OMEGA:
            return default
        label = a[mu].l
        for pr in gamma:
            if ts.chi(pr.tag) != mu or pr.tag[mu].l != label:
                return default
        step = a[mu].s
        if self.mode is Mode.GENERALIZED:
            return self._select_history(a, mu, step, gamma, prop, default)
        cands = [pr for pr in gamma if pr.tag[mu].s == step]
        if not cands:
            return default
        best = cands[0]
        for pr in cands[1:]:
            order = ts.compare(best.tag, pr.tag)
            if order is TagOrder.INCOMPARABLE:
                return default
            if order is TagOrder.LESS:
                best = pr
        top = [pr for pr in cands if ts.compare(pr.tag, best.tag) is TagOrder.EQUIV]
        values = {pr.value for pr in top}
        if len(values) == 1:
            return next(iter(values))
        return default

    def _select_history(self, a: Tag, mu: int, step: int, gamma: list, prop: ProposerState, default):
        """Pick the history to propose in generalized mode.

        Only well-formed records count: a history whose length equals its
        step, at a step no later than ours.  A record at our own step is
        re-proposed as is.  Otherwise the highest record is padded and
        extended with our command, so a new leader builds on what earlier
        steps chose rather than on its own stale history.
        """
        ts = self.ts
        cands = [
            pr for pr in gamma
            if isinstance(pr.value, tuple) and len(pr.value) == pr.tag[mu].s <= step
        ]
        if not cands:
            return default
        best = cands[0]
        for pr in cands[1:]:
            order = ts.compare(best.tag, pr.tag)
            if order is TagOrder.INCOMPARABLE:
                return default
            if order is TagOrder.LESS:
                best = pr
        top = max(pr.value for pr in cands if ts.compare(pr.tag, best.tag) is TagOrder.EQUIV)
        if len(top) == step:
            return top
        cmd = prop.cmd if prop.cmd is not None else NOP
        return self._extend(a, self.truncate(a, top), cmd)
