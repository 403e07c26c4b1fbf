import io

import pytest
from hypothesis import given, settings, strategies as st

from sspaxos.errors import ConfigurationError
from sspaxos.protocol import Kind, Message, Mode, Phase, heartbeat
from sspaxos.simnet import (
    Configuration,
    Event,
    EventKind,
    InFlight,
    Network,
    Scenario,
    Simulation,
    TraceWriter,
    scenario_from_config,
)
from sspaxos.tags import TagSystem, format_tag


def trace_text(sc, observers=()):
    buf = io.StringIO()
    Simulation(sc, [TraceWriter(buf), *observers]).run()
    return buf.getvalue()


def test_clean_config_is_uniform():
    net = Network(Scenario())
    cfg = net.clean_config()
    ts = TagSystem(net.params)
    tags = [nd.acc.a for nd in cfg.nodes]
    assert len(set(tags)) == 1
    assert all((e.s, e.t, e.cl) == (0, 0, None) for e in tags[0])
    assert ts.chi(tags[0]) == 1
    assert all(nd.prop.phase is Phase.IDLE for nd in cfg.nodes)
    assert all(items == () for items in cfg.channels.values())


def test_adversarial_config_is_deterministic_and_hits_the_top():
    sc = Scenario(init="adversarial", seed=11)
    c1, c2 = Network(sc).init_config(), Network(sc).init_config()
    assert c1 == c2
    top = sc.params.top
    assert any(top in (e.s,) for nd in c1.nodes for e in nd.acc.a)
    assert Network(sc.with_seed(12)).init_config() != c1


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_adversarial_configs_fill_channels_to_capacity(seed):
    sc = Scenario(init="adversarial", seed=seed, C=2)
    cfg = Network(sc).init_config()
    assert all(len(items) == 2 for items in cfg.channels.values())
    assert any(e.s == sc.params.top for nd in cfg.nodes for e in nd.acc.a)
    uids = [m.uid for m in cfg.inflight()]
    assert len(uids) == len(set(uids))


def _item(uid, src=1, dst=2, kind=Kind.P1A):
    msg = heartbeat(src) if kind is Kind.HEARTBEAT else Message(kind, src)
    return InFlight(uid, src, dst, msg)


@pytest.mark.parametrize("policy, kept", [("drop-oldest", (1, 2)), ("drop-newest", (0, 1))])
def test_enqueue_overflow_policies(policy, kept):
    net = Network(Scenario(C=2, overflow=policy))
    channels = {(1, 2): ()}
    assert net.enqueue(channels, _item(0)) == []
    assert net.enqueue(channels, _item(1, src=2, dst=1)) == []
    lost = net.enqueue(channels, _item(2))
    assert tuple(m.uid for m in channels[(1, 2)]) == kept
    assert len(lost) == 1 and lost[0] not in kept


def test_enqueue_protects_heartbeats_when_asked():
    net = Network(Scenario(C=1, fair_heartbeat=True, theta="detector"))
    channels = {(1, 2): (_item(0, kind=Kind.HEARTBEAT),)}
    assert net.enqueue(channels, _item(1)) == [1]
    assert channels[(1, 2)][0].uid == 0


def test_self_send_is_delivered_within_the_event():
    sc = Scenario()
    net = Network(sc)
    cfg = net.clean_config()
    cfg, rec = net.apply_event(cfg, Event(EventKind.PROPOSER_TICK, 1))
    roles = [(s.pid, s.role, s.kind) for s in rec.steps]
    assert roles[0] == (1, "proposer", "tick")
    assert (1, "acceptor", "p1a") in roles
    assert (1, "proposer", "p1b") in roles
    assert all(key == (1, 2) or key == (1, 3) for key, items in cfg.channels.items() if items)


def test_tick_at_non_leader_is_a_no_op():
    net = Network(Scenario())
    cfg = net.clean_config()
    after, rec = net.apply_event(cfg, Event(EventKind.PROPOSER_TICK, 2))
    assert rec.steps[0].role == "ignored"
    assert after.nodes == cfg.nodes and not rec.emitted


def test_crash_budget_and_sink():
    net = Network(Scenario(n=3, f=1))
    cfg = net.clean_config()
    cfg, _ = net.apply_event(cfg, Event(EventKind.PROPOSER_TICK, 1))
    cfg, _ = net.apply_event(cfg, Event(EventKind.CRASH, 2))
    assert cfg.crashed() == {2}
    with pytest.raises(ConfigurationError):
        net.apply_event(cfg, Event(EventKind.CRASH, 3))
    # A message to the crashed processor is consumed without effect.
    to_two = next(m for m in cfg.inflight() if m.dst == 2)
    after, rec = net.apply_event(cfg, Event(EventKind.DELIVER, 2, to_two.uid))
    assert rec.steps[0].role == "sink" and not rec.emitted
    assert after.node(2) == cfg.node(2)


def test_scenario_rejects_too_many_crashes():
    with pytest.raises(ConfigurationError):
        Scenario(n=3, f=1, crashes=((2, 10), (3, 20)))


@pytest.mark.parametrize("init", ["clean", "adversarial"])
def test_same_seed_same_trace(init):
    sc = Scenario(init=init, seed=5, max_events=1500, theta="detector")
    assert trace_text(sc) == trace_text(sc)
    assert trace_text(sc) != trace_text(sc.with_seed(6))


def test_channel_capacity_never_exceeded():
    sc = Scenario(init="adversarial", seed=3, C=2, n=5, f=2, schedule="random", theta="detector",
                  max_events=3000)
    caps = []

    class Probe:
        def start(self, net, cfg):
            caps.append(max(len(v) for v in cfg.channels.values()))

        def observe(self, before, rec, after):
            caps.append(max(len(v) for v in after.channels.values()))

        def finish(self, cfg):
            pass

    Simulation(sc, [Probe()]).run()
    assert max(caps) <= 2


def test_fair_heartbeat_interleaving():
    # Between two heartbeats of beta delivered at alpha, fewer than W other
    # heartbeats are delivered at alpha.
    sc = Scenario(n=5, f=2, C=2, theta="detector", fair_heartbeat=True, init="adversarial", seed=2,
                  max_events=6000)
    sim = Simulation(sc)
    last: dict = {}
    worst = 0
    count = {pid: 0 for pid in range(1, 6)}
    for _ in range(sc.max_events):
        rec = sim.step()
        for s in rec.steps:
            if s.role == "detector":
                count[s.pid] += 1
                key = (s.pid, s.src)
                if key in last:
                    worst = max(worst, count[s.pid] - last[key] - 1)
                last[key] = count[s.pid]
    assert worst < sc.window


def test_scenario_file_mapping():
    sc = scenario_from_config({
        "params": {"n": 5, "C": 2, "b": 5},
        "init": {"mode": "adversarial", "seed": 9},
        "schedule": {"fairness": "heartbeat", "crashes": [[2, 100]], "weights": {"deliver": 3}},
        "theta": {"mode": "detector"},
        "run": {"mode": "generalized", "max_events": 10, "commands": ["a", "b"]},
    })
    assert (sc.n, sc.f, sc.C, sc.b, sc.seed) == (5, 2, 2, 5, 9)
    assert sc.fair_heartbeat and sc.theta == "detector" and sc.mode is Mode.GENERALIZED
    assert sc.crashes == ((2, 100),) and sc.commands == ("a", "b")
    assert dict(sc.weights)["deliver"] == 3.0


@pytest.mark.parametrize("doc, key", [
    ({"params": {"n": "3"}}, "params.n"),
    ({"params": {"q": 3}}, "params.q"),
    ({"extra": {}}, "extra"),
    ({"run": {"mode": "bogus"}}, "run.mode"),
    ({"schedule": {"crashes": [[1]]}}, "schedule.crashes"),
    ({"schedule": {"weights": {"deliver": -1}}}, "schedule.weights.deliver"),
])
def test_scenario_file_errors_name_the_key(doc, key):
    with pytest.raises(ConfigurationError, match=key.replace(".", r"\.")):
        scenario_from_config(doc)


def test_trace_uses_canonical_tags():
    sc = Scenario(max_events=5)
    text = trace_text(sc)
    tag = format_tag(Network(sc).clean_config().node(1).acc.a)
    assert tag in text
    assert len(text.splitlines()) == 5


def test_configuration_helpers():
    cfg = Network(Scenario()).clean_config()
    assert isinstance(cfg, Configuration)
    assert cfg.node(2).pid == 2 and cfg.crashed() == frozenset()
