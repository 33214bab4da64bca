"""Compiled kernel vs pure-Python model: derivative evaluations and integration throughput.

    python3 benchmarks/bench_kernels.py [--scenario ivc_hac] [--steps 2000]
"""
import argparse
import time

import numpy as np

from hacgrid import backend
from hacgrid import scenarios as sc


def best_of(fn, repeat=3):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="ivc_hac")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--rhs-calls", type=int, default=2000)
    args = ap.parse_args(argv)

    spec = sc.load_scenario(sc.shipped_scenario(args.scenario))
    spec.pop("sweep", None)
    built = sc.build_system(spec)
    x0 = built.x0
    kinds = ["python"] + (["compiled"] if backend.compiled_available() else [])
    h = 20e-6
    print(f"scenario {args.scenario}: {x0.size} states, h = {h:g} s")
    print(f"{'backend':<10}{'rhs (us/call)':>16}{'RK4 (us/step)':>16}{'sim s per wall s':>18}")
    res = {}
    for kind in kinds:
        m = backend.make_model(built.system, kind)
        n_rhs = args.rhs_calls if kind == "compiled" else max(50, args.rhs_calls // 20)
        n_int = args.steps if kind == "compiled" else max(50, args.steps // 20)
        t_rhs = best_of(lambda: [m.rhs(x0) for _ in range(n_rhs)]) / n_rhs
        t_int = best_of(lambda: m.integrate(x0, 0.0, h, n_int, n_int)) / n_int
        res[kind] = (t_rhs, t_int)
        print(f"{kind:<10}{t_rhs * 1e6:16.2f}{t_int * 1e6:16.2f}{h / t_int:18.4f}")
    if len(res) == 2:
        print(f"speed-up: rhs x{res['python'][0] / res['compiled'][0]:.0f}, "
              f"integration x{res['python'][1] / res['compiled'][1]:.0f}")
        m_c = backend.make_model(built.system, "compiled")
        m_p = backend.make_model(built.system, "python")
        x = x0 * (1 + 1e-4 * np.random.default_rng(0).normal(size=x0.size))
        print(f"max |rhs difference| / max |rhs|: "
              f"{np.max(np.abs(m_c.rhs(x) - m_p.rhs(x))) / np.max(np.abs(m_p.rhs(x))):.1e}")


if __name__ == "__main__":
    main()
