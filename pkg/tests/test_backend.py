import numpy as np
import pytest

from hacgrid import backend
from hacgrid import scenarios as sc

from conftest import shipped

needs_kernel = pytest.mark.skipif(not backend.compiled_available(), reason="compiled kernel not built")


@needs_kernel
@pytest.mark.parametrize("name", ["iva_all_gfc_hac", "ivc_droop", "ivc_matching", "ive_pss_free"])
def test_compiled_rhs_matches_python(name):
    spec = shipped(name)
    spec.pop("sweep", None)
    b = sc.build_system(spec)
    comp = backend.make_model(b.system, "compiled")
    py = backend.make_model(b.system, "python")
    rng = np.random.default_rng(3)
    for _ in range(5):
        x = b.x0 * (1 + 1e-3 * rng.normal(size=b.x0.size)) + 1e-3 * rng.normal(size=b.x0.size)
        a, c = comp.rhs(x), py.rhs(x)
        assert np.allclose(a, c, rtol=1e-10, atol=1e-8 * np.abs(c).max())
        assert np.allclose(comp.outputs(x[None]), py.outputs(x[None]), rtol=1e-10, atol=1e-9)


@needs_kernel
def test_compiled_integration_matches_python():
    b = sc.build_system(shipped("ivc_hac"))
    G = b.system.network.G.copy()
    G[b.system.network.node_of[7]] *= 1.5
    outs = []
    for kind in ("compiled", "python"):
        m = backend.make_model(b.system, kind)
        m.set_conductance(G)
        t, X, _, bad = m.integrate(b.x0, 0.0, 20e-6, 500, 100)
        assert bad == -1
        outs.append(X)
    assert np.allclose(outs[0], outs[1], rtol=1e-9, atol=1e-9)


def test_environment_forces_python(monkeypatch):
    monkeypatch.setenv("HACGRID_BACKEND", "python")
    assert backend.default_backend() == "python"


def test_fallback_without_kernel(monkeypatch):
    monkeypatch.setattr(backend, "_kernel", None)
    monkeypatch.delenv("HACGRID_BACKEND", raising=False)
    assert backend.default_backend() == "python"
    b = sc.build_system(shipped("iva_all_gfc_hac"))
    assert isinstance(backend.make_model(b.system), backend.PythonModel)
    with pytest.raises(RuntimeError):
        backend.make_model(b.system, "compiled")


def test_unknown_backend():
    b = sc.build_system(shipped("iva_all_gfc_hac"))
    with pytest.raises(ValueError):
        backend.make_model(b.system, "gpu")


def test_integration_failure_reported():
    b = sc.build_system(shipped("iva_all_gfc_hac"))
    x = b.x0.copy()
    x[b.system.layout[("gfc1", "v_dc")].offset] = np.inf
    for kind in (["compiled"] if backend.compiled_available() else []) + ["python"]:
        m = backend.make_model(b.system, kind)
        t, X, ft, bad = m.integrate(x, 0.0, 20e-6, 10, 1)
        assert bad >= 0 and len(X) == 1
