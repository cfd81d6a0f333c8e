"""Compare the numba-compiled engine with the pure-python fallback.

Each backend runs in its own interpreter because the switch
(``PURE_EXPLORE_DISABLE_JIT``) is read at import time. Compilation and cache
loading are excluded by a warm-up run. Both backends must produce identical
sample counts; the script exits non-zero otherwise.

Usage::

    python3 benchmarks/bench_engine.py [--budget 5000] [--repeats 3]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from pure_explore._jit import BACKEND
from pure_explore.chernoff import Query
from pure_explore.divergences import RewardFamily
from pure_explore.harness import BanditInstance, ExperimentConfig, FixedBudget, run_one
from pure_explore.rules import RuleConfig

budget, repeats = int(sys.argv[1]), int(sys.argv[2])
g = RewardFamily.gaussian((1.0,))
workloads = {
    "case1 best-k TS-TS-IDS": (BanditInstance(g, (0.1, 0.2, 0.3, 0.4, 0.5)), Query.best_k(2), "TS-TS-IDS"),
    "slippage K=50 TS-PPS-IDS": (BanditInstance(g, (0.75,) + (0.5,) * 49), Query.best_arm(), "TS-PPS-IDS"),
    "bernoulli threshold EB-KKT-IDS": (BanditInstance(RewardFamily.bernoulli(), tuple(0.05 + 0.09 * i for i in range(10))),
                                       Query.thresholding(0.5), "EB-KKT-IDS"),
}
out = {"backend": BACKEND, "results": {}}
for name, (inst, q, rule) in workloads.items():
    cfg = ExperimentConfig(inst, q, RuleConfig.parse(rule), FixedBudget(budget), 1, 2024)
    run_one(cfg, 0)  # warm-up: compile or load the cache
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        rec = run_one(cfg, 0)
        best = min(best, time.perf_counter() - start)
    out["results"][name] = {"seconds": best, "counts": rec.counts.tolist()}
print(json.dumps(out))
"""


def run_backend(disable_jit, budget, repeats):
    env = dict(os.environ)
    env.pop("PURE_EXPLORE_DISABLE_JIT", None)
    if disable_jit:
        env["PURE_EXPLORE_DISABLE_JIT"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(budget), str(repeats)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--budget", type=int, default=5000, help="samples per run")
    parser.add_argument("--repeats", type=int, default=3, help="timed repeats (best is kept)")
    args = parser.parse_args(argv)

    jit = run_backend(False, args.budget, args.repeats)
    py = run_backend(True, args.budget, args.repeats)
    width = max(len(n) for n in jit["results"])
    print(f"{'workload':<{width}}  {'numba s':>9}  {'python s':>9}  {'speedup':>8}  identical")
    ok = True
    for name, res in jit["results"].items():
        other = py["results"][name]
        same = res["counts"] == other["counts"]
        ok &= same
        print(f"{name:<{width}}  {res['seconds']:9.4f}  {other['seconds']:9.4f}  "
              f"{other['seconds'] / res['seconds']:7.1f}x  {same}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
