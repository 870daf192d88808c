import threading

import pytest

from sweep import resolve_threads, run_sweep


def test_flag_wins_over_environment(monkeypatch):
    monkeypatch.setenv("SKYRLAB_THREADS", "8")
    assert resolve_threads(3) == 3
    assert resolve_threads(0) == 1


@pytest.mark.parametrize("value, expected", [("", 1), ("4", 4), ("-2", 1), ("many", 1)])
def test_environment_variable(monkeypatch, value, expected):
    monkeypatch.setenv("SKYRLAB_THREADS", value)
    assert resolve_threads() == expected


def test_default_without_environment(monkeypatch):
    monkeypatch.delenv("SKYRLAB_THREADS", raising=False)
    assert resolve_threads() == 1


def test_results_merge_in_key_order():
    keys = [0.5, 0.1, 0.3, 0.2]
    serial = run_sweep(lambda k: k * k, keys, threads=1)
    parallel = run_sweep(lambda k: k * k, keys, threads=4)
    assert serial == parallel
    assert [k for k, _ in serial] == sorted(keys)


def test_threads_are_used():
    seen = set()
    barrier = threading.Barrier(2, timeout=5)

    def work(k):
        seen.add(threading.get_ident())
        barrier.wait()
        return k

    run_sweep(work, [1, 2], threads=2)
    assert len(seen) == 2
