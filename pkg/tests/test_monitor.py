from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from sspaxos.labeling import Label
from sspaxos.monitor import (
    AcceptanceEvent,
    DecisionEvent,
    Epoch,
    Interrupt,
    InterruptKind,
    Monitor,
    TaintTracker,
    census,
    check_safety,
    classify_interrupt,
    exhausted_exit,
    h_safe,
    in_zone,
    min_safe_h,
    track_epochs,
    unsafe_steps,
)
from sspaxos.protocol import Kind, Mode, decision
from sspaxos.simnet import Event, EventKind, InFlight, Network, Scenario, Simulation
from sspaxos.tags import OMEGA, Tag, TagEntry, TagSystem, empty_history

SC = Scenario()
P = SC.params
TS = TagSystem(P)
TOP = P.top
A = Label(1, frozenset({3}))
B = Label(2, frozenset({1}))
C = Label(4, frozenset({1, 2, 3}))


def E(l=A, s=0, t=0, owner=1, cl=None):
    return TagEntry(l, s, t, owner, cl)


def dead(l=A):
    return E(l=l, cl=B)


class Recorder:
    def __init__(self):
        self.records = []

    def start(self, net, cfg):
        pass

    def observe(self, before, rec, after):
        self.records.append(rec)

    def finish(self, cfg):
        pass


# Interrupt classification

def test_chi_moving_left_and_right():
    at3 = Tag([dead(), dead(), E(l=C)])
    at1 = Tag([E(l=B), dead(), E(l=C)])
    assert classify_interrupt(TS, at3, at1, 3) == (InterruptKind.LEFT, 1)
    assert classify_interrupt(TS, at1, at3, 1) == (InterruptKind.RIGHT, 3)
    omega = Tag([dead(), dead(), dead()])
    assert classify_interrupt(TS, omega, at3, 2) == (InterruptKind.LEFT, 3)
    assert classify_interrupt(TS, at3, omega, 2) == (InterruptKind.RIGHT, OMEGA)
    assert classify_interrupt(TS, omega, omega, 2) is None


def test_same_entry_changes():
    x = Tag([E(l=A, s=3), E(), E()])
    assert classify_interrupt(TS, x, x.replace(1, s=4, t=2), 1) is None
    relabeled = x.replace(1, l=B, s=0)
    assert classify_interrupt(TS, x, relabeled, 2) == (InterruptKind.LEFT, 1)
    assert classify_interrupt(TS, x, relabeled, 1, "cl") == (InterruptKind.CL, 1)


def test_trial_saturation_gives_a_max_interrupt():
    x = Tag([E(l=A, s=2, t=TOP - 1), E(), E()])
    y, _, cause = TS.inc_trial(1, x, empty_history(P.M))
    assert cause == "max" and y[1].l != A and (y[1].s, y[1].t) == (0, 0)
    kind, mu = classify_interrupt(TS, x, y, 1, cause)
    assert (kind, mu) == (InterruptKind.MAX, 1)
    assert exhausted_exit(TS, x, y, kind)


def test_exhausted_exit_to_the_right():
    x = Tag([E(l=A, s=TOP - 1, owner=2), E(l=B), E()])
    y = x.replace(1, s=TOP)
    kind, mu = classify_interrupt(TS, x, y, 2)
    assert (kind, mu) == (InterruptKind.RIGHT, 2)
    assert exhausted_exit(TS, x, y, kind)
    canceled = x.replace(1, cl=C)
    assert not exhausted_exit(TS, x, canceled, InterruptKind.RIGHT)
    assert not exhausted_exit(TS, x, y, InterruptKind.LEFT)


def test_interrupt_names():
    it = Interrupt(2, 5, InterruptKind.LEFT, 1, 1, A)
    assert it.name() == "[1,<-]"
    assert it._replace(kind=InterruptKind.MAX).name() == "[2,max]"
    assert it._replace(kind=InterruptKind.FAULT).name() == "fault"


# Epochs

def test_track_epochs_partition():
    assert len(track_epochs(1, (1, A), [])) == 1
    its = [Interrupt(1, 4, InterruptKind.CL, 1, 1, B), Interrupt(2, 6, InterruptKind.LEFT, 1, 1, B),
           Interrupt(1, 9, InterruptKind.MAX, 1, 1, C, True)]
    eps = track_epochs(1, (1, A), its)
    assert [(e.start, e.end) for e in eps] == [(0, 4), (4, 9), (9, None)]
    assert [e.label for e in eps] == [A, B, C]
    assert eps[1].exhausted and not eps[0].exhausted and not eps[2].closed


@pytest.mark.parametrize("init, seed", [("clean", 0), ("adversarial", 4)])
def test_epoch_boundaries_match_offline_classification(init, seed):
    sc = Scenario(init=init, seed=seed, max_events=1500)
    rec, mon = Recorder(), Monitor(audit=[1])
    sim = Simulation(sc, [rec, mon])
    a0 = sim.config.node(1).acc.a
    sim.run()
    its = []
    for r in rec.records:
        for k, s in enumerate(r.steps):
            if s.pid != 1 or s.before == s.after:
                continue
            got = classify_interrupt(TS, s.before, s.after, 1, s.effects.produced)
            if got is not None:
                chi = TS.chi(s.after)
                its.append(Interrupt(1, r.index, got[0], got[1], chi, s.after[chi].l if chi is not OMEGA else None))
    chi0 = TS.chi(a0)
    offline = track_epochs(1, (chi0, a0[chi0].l if chi0 is not OMEGA else None), its)
    online = mon.epochs + [mon.open[1]]
    assert [(e.start, e.end, e.mu, e.label) for e in offline] == [(e.start, e.end, e.mu, e.label) for e in online]


def _config_with(tag):
    cfg = Network(SC).clean_config()
    nd = cfg.node(2)
    nodes = list(cfg.nodes)
    nodes[1] = replace(nd, acc=replace(nd.acc, a=tag))
    return replace(cfg, nodes=tuple(nodes))


def test_min_h_and_h_safe_fixture():
    h = 5
    label = Label(7, frozenset())
    cfg = _config_with(Tag([E(l=label, s=h + 1, t=2), E(), E()]))
    assert min_safe_h(cfg, 1, label) == h + 1
    ex = Interrupt(1, 50, InterruptKind.MAX, 1, 1, B, True)
    ep = Epoch(1, 10, 1, label, end=50, terminal=ex, min_h=min_safe_h(cfg, 1, label))
    assert not h_safe(ep, h) and h_safe(ep, h + 1)
    by_cl = replace(ep, terminal=Interrupt(1, 50, InterruptKind.CL, 1, 1, B, False))
    assert not h_safe(by_cl, TOP)
    assert min_safe_h(cfg, 1, Label(8, frozenset())) == 0


def test_min_h_sees_tags_inside_messages():
    label = Label(7, frozenset())
    cfg = Network(SC).clean_config()
    item = InFlight(0, 2, 1, decision(2, Tag([E(l=label, s=3, t=9), E(), E()]), "v"))
    cfg = replace(cfg, channels={**cfg.channels, (1, 2): (item,)}, next_uid=1)
    assert min_safe_h(cfg, 1, label) == 9


def test_clean_run_has_a_zero_safe_epoch():
    mon = Monitor()
    Simulation(Scenario(max_events=6000), [mon]).run()
    rep = mon.report()
    assert rep["verdict"] == "ok"
    assert rep["first_safe"] is not None and rep["first_safe"]["min_h"] == 0
    assert rep["first_safe"]["terminal"] == "[1,max]"


# Census

def test_census_clean():
    c = census(Network(SC).clean_config())
    assert c.primary == 3 and c.embedded == 3
    assert c.cl_counts == (1, 1, 1)


def test_census_at_capacity():
    cfg = Network(Scenario(init="adversarial", seed=1)).init_config()
    tagged = sum(m.msg.kind is not Kind.HEARTBEAT for m in cfg.inflight())
    c = census(cfg)
    assert c.primary == 3 + tagged <= P.K == 6


@given(st.integers(0, 5000), st.sampled_from([(3, 1, 1), (3, 1, 2), (5, 2, 1)]))
@settings(max_examples=25, deadline=None)
def test_census_bounds_on_generated_configs(seed, shape):
    n, f, c = shape
    sc = Scenario(n=n, f=f, C=c, init="adversarial", seed=seed)
    cfg = Network(sc).init_config()
    got = census(cfg)
    assert got.primary <= sc.params.K
    assert max(got.cl_counts) <= sc.params.Kcl


# Taint

def test_clean_run_has_no_taint():
    mon = Monitor()
    Simulation(Scenario(max_events=3000), [mon]).run()
    for ep in mon.report()["epochs"]:
        assert ep["untainted_decisions"] == ep["decisions"]
        assert ep["unsafe_steps"] == []


def test_decision_from_an_initial_message_is_tainted():
    net = Network(SC)
    cfg = net.clean_config()
    own = cfg.node(1).acc.a[1].l
    forged = decision(1, cfg.node(1).acc.a.replace(1, s=2), "forged")
    cfg = replace(cfg, channels={**cfg.channels, (1, 2): (InFlight(0, 1, 2, forged),)}, next_uid=1)
    tr = TaintTracker(net, cfg, 1)
    _, rec = net.apply_event(cfg, Event(EventKind.DELIVER, 2, 0))
    tr.process(rec)
    assert [d.tainted for d in tr.decisions] == [True]
    assert unsafe_steps(tr.acceptances, 1, own) == {2}


def _phase1_round(net, cfg, window_at):
    """Tick proposer 1, then answer from processor 2; open the window at ``window_at``."""
    tr = TaintTracker(net, cfg, 1) if window_at == 0 else None
    cfg, rec = net.apply_event(cfg, Event(EventKind.PROPOSER_TICK, 1))
    if tr is not None:
        tr.process(rec)
    else:
        tr = TaintTracker(net, cfg, 1)
    p1a_to_2 = next(m for m in cfg.inflight() if m.dst == 2)
    cfg, rec = net.apply_event(cfg, Event(EventKind.DELIVER, 2, p1a_to_2.uid))
    tr.process(rec)
    p1b = next(m for m in cfg.inflight() if m.dst == 1 and m.msg.kind is Kind.P1B)
    cfg, rec = net.apply_event(cfg, Event(EventKind.DELIVER, 1, p1b.uid))
    tr.process(rec)
    p2a = [m.uid for m in rec.emitted if m.msg.kind is Kind.P2A]
    assert p2a
    return tr, p2a


def test_one_tainted_reply_taints_the_quorum():
    net = Network(SC)
    cfg = net.clean_config()
    tr, p2a = _phase1_round(net, cfg, window_at=1)
    assert all(uid in tr.tainted for uid in p2a)
    tr, p2a = _phase1_round(net, cfg, window_at=0)
    assert not any(uid in tr.tainted for uid in p2a)


def test_unsafe_steps():
    assert unsafe_steps([], 1, A) == set()
    accs = [AcceptanceEvent(2, 10, 1, A, 7, "v", True), AcceptanceEvent(3, 11, 1, A, 8, "v", False),
            AcceptanceEvent(3, 12, 1, B, 9, "v", True), AcceptanceEvent(3, 12, 2, A, 5, "v", True)]
    assert unsafe_steps(accs, 1, A) == {7}


# Safety checks

def dec(value, s=3, tainted=False, decider=1, index=0, mu=1, label=A):
    return DecisionEvent(decider, index, mu, label, s, value, tainted)


def test_check_safety_repeated():
    assert check_safety([dec("x"), dec("x", decider=2)], 1, A, 0) == []
    bad = check_safety([dec("x"), dec("y", decider=2)], 1, A, 0)
    assert [v["check"] for v in bad] == ["agreement"] and bad[0]["s"] == 3
    assert check_safety([dec("x"), dec("y", tainted=True)], 1, A, 0) == []
    assert check_safety([dec("x"), dec("y")], 1, A, 4) == []
    assert check_safety([dec("x"), dec("y", label=B)], 1, A, 0) == []


def test_check_safety_generalized():
    g = Mode.GENERALIZED
    ok = [dec(("c1",), s=2, index=1), dec(("c1", "c2"), s=3, index=2)]
    assert check_safety(ok, 1, A, 0, g) == []
    forked = [dec(("c1",), s=2), dec(("c2",), s=2, decider=2)]
    assert [v["check"] for v in check_safety(forked, 1, A, 0, g)] == ["prefix"]
    tainted_fork = [dec(("c1",), s=2), dec(("c2",), s=2, decider=2, tainted=True)]
    assert check_safety(tainted_fork, 1, A, 0, g) == []
    # A learner going back to a shorter history breaks stability only.
    back = [dec(("c1", "c2"), s=3, index=1), dec(("c1",), s=2, index=2)]
    assert [v["check"] for v in check_safety(back, 1, A, 0, g)] == ["stability"]


def test_zone_membership():
    zone = ({1: 10, 2: 12}, {2: 40, 3: 41})
    assert in_zone(zone, dec("x")._replace(support=((2, 20),)))
    assert not in_zone(zone, dec("x")._replace(support=((2, 50),)))
    assert not in_zone(zone, dec("x")._replace(support=((1, 20),)))
    assert not in_zone(zone, dec("x"))


# Whole-run checks

def test_monitor_is_non_invasive():
    sc = Scenario(init="adversarial", seed=8, max_events=2000, theta="detector")
    plain, watched = Recorder(), Recorder()
    Simulation(sc, [plain]).run()
    Simulation(sc, [watched, Monitor()]).run()
    assert [(r.event, r.emitted, r.dropped) for r in plain.records] == \
        [(r.event, r.emitted, r.dropped) for r in watched.records]


def test_adversarial_run_report():
    mon = Monitor()
    Simulation(Scenario(init="adversarial", seed=2, max_events=5000), [mon]).run()
    rep = mon.report()
    assert rep["verdict"] == "ok", rep["violations"][:3]
    assert rep["census"]["max_primary"] <= P.K
    assert max(rep["census"]["max_cl"]) <= P.Kcl
    assert rep["safe_epochs"] >= 1
    for ep in rep["epochs"]:
        if ep["h_safe"]:
            assert ep["unsafe_within_h"]
