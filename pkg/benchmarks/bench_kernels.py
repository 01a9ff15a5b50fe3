"""Time the compiled kernels against the numpy fallback on the three hot loops.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]
"""
import argparse
import time

import numpy as np

from bbbtraj import _backend, polar_decompose
from bbbtraj import spinzero as sz
from bbbtraj import wavefree as wf
from bbbtraj.models import build_circle, periodic_gaussian
from bbbtraj.reference import UnitaryIntegrator, simulate_guided_ensemble


def best_of(fn, repeat):
    out = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return min(out)


def cases(quick: bool):
    s = 0.1 if quick else 1.0
    N, L = 64, 32.0
    H = build_circle(N, L / N, 1.0)
    psi = periodic_gaussian(N, L / N, L / 2, 3.0, 2 * np.pi * 2 / L)
    state = wf.init_from_polar(polar_decompose(psi), H)
    wf_steps = int(20_000 * s)
    yield (f"wave-free rk4, ring N={N}, {wf_steps} steps",
           lambda b: wf.evolve_wavefree(state, H, 1e-3, wf_steps, record_every=wf_steps, backend=b))

    Hs = build_circle(32, 1.0, 1.0)
    psis = periodic_gaussian(32, 1.0, 16.0, 3.0, 2 * np.pi * 4 / 32)
    integ = UnitaryIntegrator(Hs, 1e-2)
    M = int(100_000 * s)
    yield (f"jump ensemble, ring N=32, M={M}, 500 steps",
           lambda b: simulate_guided_ensemble(psis, integ, M, 5.0, seed=1, backend=b))

    Ng, Lg = 256, 40.0
    g = sz.grid_field_from_psi(periodic_gaussian(Ng, Lg / Ng, 10.0, 4.0, 2 * np.pi / Lg), Lg / Ng, 1.0)
    f3_steps = int(50_000 * s)
    yield (f"grid hydrodynamics, N={Ng}, {f3_steps} steps",
           lambda b: sz.f3_evolve(g, np.zeros(Ng), 1.0, 1e-3, f3_steps, backend=b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="a tenth of the work per case")
    args = ap.parse_args()
    backends = _backend.available()
    if "compiled" not in backends:
        print("compiled kernels not built; only the numpy fallback is timed")
    print(f"{'case':<48}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases(args.quick):
        t = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
        row = f"{name:<48}" + "".join(f"{t[b]:11.3f}s" for b in backends)
        if len(backends) == 2:
            row += f"{t['python'] / t['compiled']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
