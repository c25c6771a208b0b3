"""Time the hot kernels with numba and with the pure-Python fallback.

Each backend runs in its own interpreter because the switch is read at
import time. Usage: python3 benchmarks/bench_kernels.py [--repeats 5]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from ura_sim._accel import backend_name
from ura_sim.codebook import generate_codebook
from ura_sim.inner_detector import DetectorOptions, detect
from ura_sim.outer_code import AllocationProfile, ParityGeneratorSet, SubBlockList, encode_values, outer_decode

repeats = int(sys.argv[1])
rng = np.random.default_rng(0)
cb = generate_codebook(100, 6, 0.04, seed=1)
H = (rng.standard_normal((4, 64)) + 1j * rng.standard_normal((4, 64))) / np.sqrt(2)
Y = cb.C[:, [1, 7, 20, 41]] @ H + (rng.standard_normal((100, 64)) + 1j * rng.standard_normal((100, 64))) / np.sqrt(2)
G = np.zeros((64, 64), complex); G[[1, 7, 20, 41]] = 0.5
alloc = AllocationProfile.from_parity(8, [0, 4, 4, 4, 5, 5, 6, 8])
gens = ParityGeneratorSet.random(alloc, seed=3)
msgs = rng.integers(0, 2, size=(8, alloc.b), dtype=np.uint8)
vals = encode_values(msgs, alloc, gens)
extra = rng.integers(0, 256, size=(4, alloc.L))
lists = SubBlockList(np.concatenate([vals, extra]).T.copy())

cases = {
    "detect_exact": lambda: detect(Y, cb, type("E", (), {"G_tilde": G})(), DetectorOptions(seed=0)),
    "detect_linearized": lambda: detect(Y, cb, type("E", (), {"G_tilde": G})(), DetectorOptions(seed=0, update="linearized")),
    "detect_baseline": lambda: detect(Y, cb, None, DetectorOptions(seed=0, mode="zero_mean_baseline")),
    "outer_decode": lambda: outer_decode(lists, alloc, gens),
}
out = {"backend": backend_name(), "times": {}}
for name, fn in cases.items():
    fn()  # warm up / compile
    best = float("inf")
    for _ in range(repeats):
        t = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t)
    out["times"][name] = best
print(json.dumps(out))
"""


def run(disable, repeats):
    env = dict(os.environ, URA_SIM_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeats)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    t0 = time.perf_counter()
    fast = run(False, args.repeats)
    slow = run(True, args.repeats)
    print(f"{'kernel':<20}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for name, t_fast in fast["times"].items():
        t_slow = slow["times"][name]
        print(f"{name:<20}{t_fast * 1e3:>10.2f}ms{t_slow * 1e3:>10.2f}ms{t_slow / t_fast:>9.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
