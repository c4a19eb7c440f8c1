import threading

import pytest

import contmsg


def test_continuation_runs_after_delivery():
    rt = contmsg.Runtime.loopback(2)
    cr = rt.continue_init()
    recv = rt.endpoint(0).irecv(1, 7, 16)
    seen = []
    assert rt.attach([recv], cr, lambda statuses: seen.append(statuses)) is False
    assert cr.state == "ACTIVE_REFERENCED"
    send = rt.endpoint(1).isend(0, 7, b"hello")
    rt.cr_wait(cr)
    assert len(seen) == 1
    (st,) = seen[0]
    assert (st.source, st.tag, st.count, st.cancelled) == (1, 7, 5, False)
    assert recv.data[:5] == b"hello"
    rt.wait(send)
    rt.cr_free(cr)
    assert cr.state == "FREED"


def test_immediate_completion_skips_callback():
    rt = contmsg.Runtime.loopback(1)
    recv = rt.endpoint(0).irecv(contmsg.ANY_SOURCE, contmsg.ANY_TAG, 4)
    send = rt.endpoint(0).isend(0, 3, b"abcdefgh")
    rt.wait(send)
    while recv.status is None:
        rt.poll_all()
    assert recv.status.truncated
    calls = []
    cr = rt.continue_init()
    assert rt.attach([recv], cr, lambda s: calls.append(s)) is True
    assert rt.cr_test(cr)
    assert calls == []

    deferred = rt.continue_init(contmsg.InfoConfig(enqueue_complete=True))
    recv2 = rt.endpoint(0).irecv(0, 4, 4)
    rt.endpoint(0).isend(0, 4, b"x")
    while recv2.status is None:
        rt.poll_all()
    assert rt.attach([recv2], deferred, lambda s: calls.append(s)) is False
    assert rt.cr_test(deferred)
    assert len(calls) == 1


def test_errors_carry_codes():
    rt = contmsg.Runtime.loopback(2)
    cr = rt.continue_init()
    rt.cr_free(cr)
    with pytest.raises(contmsg.ContmsgError) as err:
        rt.cr_free(cr)
    assert err.value.code == "DOUBLE_FREE"
    with pytest.raises(contmsg.ContmsgError):
        contmsg.InfoConfig(max_poll=-5)


def test_progress_agent_runs_python_callbacks():
    rt = contmsg.Runtime.loopback(2)
    cr = rt.continue_init(contmsg.InfoConfig(any_thread=True))
    done = threading.Event()
    ops = [rt.endpoint(0).irecv(1, t, 8) for t in range(10)]
    rt.attach(ops, cr, lambda s: done.set())
    rt.start_progress_agent()
    for t in range(10):
        rt.endpoint(1).isend(0, t, b"p")
    assert done.wait(10)
    rt.stop_progress_agent()
    rt.cr_wait(cr)
    rt.cr_free(cr)
    assert contmsg.Runtime.max_observed_depth() <= 1


def test_scenario_csv_is_reproducible():
    cfg = contmsg.ScenarioConfig()
    cfg.scenario = "burst"
    cfg.world = 3
    cfg.K = 8
    cfg.variant = "activeset"
    csv1, failures = contmsg.run_scenario(cfg)
    csv2, _ = contmsg.run_scenario(cfg)
    assert failures == []
    assert csv1 == csv2
    assert csv1.startswith("# contmsg-csv schema=1 scenario=burst\n")
