import pytest
from hypothesis import given, strategies as st

from gpussd.engine import Engine
from gpussd.errors import SchedulingInPast


def test_event_fires_at_its_time():
    e = Engine()
    seen = []
    e.schedule(100, lambda: seen.append(e.now))
    assert e.run_until_idle() == 100
    assert seen == [100]


def test_equal_times_fire_in_insertion_order():
    e = Engine()
    order = []
    e.schedule(100, order.append, "A")
    e.schedule(100, order.append, "B")
    e.run_until_idle()
    assert order == ["A", "B"]


def test_scheduling_in_the_past_is_rejected():
    e = Engine()
    e.schedule(100, lambda: None)
    e.run_until_idle()
    with pytest.raises(SchedulingInPast):
        e.schedule(50, lambda: None)


def test_idle_end_times():
    assert Engine().run_until_idle() == 0
    e = Engine()
    e.schedule(700_000, lambda: None)
    assert e.run_until_idle() == 700_000


def test_chain_of_successors():
    e = Engine()

    def hop(depth):
        if depth < 5:
            e.after(10, hop, depth + 1)

    e.schedule(0, hop, 0)
    assert e.run_until_idle() == 50


def test_cancel_skips_event():
    e = Engine()
    hits = []
    a = e.schedule(10, hits.append, "a")
    e.schedule(20, hits.append, "b")
    assert e.cancel(a)
    assert not e.cancel(a)
    assert e.pending() == 1
    e.run_until_idle()
    assert hits == ["b"]
    assert not e.cancel(a)


events = st.lists(st.tuples(st.integers(0, 1000), st.integers(0, 50), st.booleans()), max_size=40)


def _play(plan):
    e = Engine()
    log = []
    ids = []

    def fire(tag, delay):
        log.append((e.now, tag))
        if delay:
            e.after(delay, fire, f"{tag}+", 0)

    for i, (t, delay, _) in enumerate(plan):
        ids.append(e.schedule(t, fire, i, delay))
    for (t, _, cancel), eid in zip(plan, ids):
        if cancel:
            e.cancel(eid)
    end = e.run_until_idle()
    return e, log, end


@given(events)
def test_determinism_monotonicity_conservation(plan):
    e1, log1, end1 = _play(plan)
    e2, log2, end2 = _play(plan)
    assert (log1, end1) == (log2, end2)
    times = [t for t, _ in log1]
    assert times == sorted(times)
    assert e1.fired + e1.cancelled == e1.scheduled
    assert e1.pending() == 0
