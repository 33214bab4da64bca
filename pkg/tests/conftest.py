import copy
import functools
import json

import pytest

from hacgrid import scenarios as sc


def shipped(name):
    return sc.load_scenario(sc.shipped_scenario(name))


@functools.lru_cache(maxsize=None)
def _run_cached(key):
    spec = json.loads(key)
    return sc.run(spec)


def run_spec(spec):
    """Run a scenario once per session; identical specs share the result."""
    return _run_cached(json.dumps(spec, sort_keys=True))


def sweep_specs(name):
    """(labels, spec) for every point of a shipped sweep scenario."""
    spec = shipped(name)
    return [(labels, sc.point_spec(spec, sets)) for sets, labels in sc.grid_points(spec["sweep"])]


def with_event(spec, **changes):
    s = copy.deepcopy(spec)
    s["events"][0].update(changes)
    return s


@pytest.fixture
def tiny_spec():
    """All-converter system with a short horizon for fast plumbing tests."""
    s = shipped("iva_all_gfc_hac")
    s["horizon_s"] = 0.3
    s["settle_s"] = 0.1
    s["events"][0]["t_s"] = 0.05
    s["integrator"] = {"h_s": 20e-6, "record_every": 100}
    s["metrics"] = {"rocof_window_s": 0.1}
    return s


ACCEPTANCE = {}


class criterion:
    """Records a pass/fail line for an acceptance criterion; failures still propagate."""

    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        if not ok and not self.detail:
            self.detail = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
        ACCEPTANCE[self.number] = (ok, self.title, self.detail)
        print(f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}: {self.title} {self.detail}")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
