import json
import os
import subprocess
import sys

import pytest

SCRIPT = r"""
import json
from pure_explore._jit import BACKEND
from pure_explore.chernoff import Query
from pure_explore.divergences import RewardFamily
from pure_explore.harness import (BanditInstance, ExperimentConfig, FixedBudget,
                                  FixedConfidence, run_one, trajectory_csv)
from pure_explore.rules import RuleConfig

g = RewardFamily.gaussian((1.0,))
setups = [
    (BanditInstance(g, (0.1, 0.2, 0.3, 0.4, 0.5)), Query.best_k(2), "TS-TS-IDS"),
    (BanditInstance(RewardFamily.bernoulli(), (0.2, 0.5, 0.7)), Query.thresholding(0.45), "TS-PPS-IDS"),
    (BanditInstance(g, (1.0, 0.6, 0.0), rho=0.5), Query.best_arm(), "EB-KKT-0.5"),
    (BanditInstance(RewardFamily.gaussian_unknown_variance(), (1.0, 0.5, 0.0),
                    true_variances=(1.0, 2.0, 0.5)), Query.best_arm(), "EB-KKT-IDS"),
    (BanditInstance(g, (0.3, -0.4, 0.8)), Query.closest_to_threshold(0.0), "TS-TS-IDS"),
]
out = {"backend": BACKEND, "runs": []}
for inst, q, rule in setups:
    cfg = ExperimentConfig(inst, q, RuleConfig.parse(rule), FixedBudget(2000, (50, 2000)),
                           1, 11, log_steps=True)
    rec = run_one(cfg, 0)
    out["runs"].append({"counts": rec.counts.tolist(),
                        "log": [[s.estimate_hash, s.pitfall, s.arm, repr(s.glrt)] for s in rec.step_log],
                        "traj": trajectory_csv([rec], inst.K)})
cfg = ExperimentConfig(BanditInstance(g, (0.5, 0.0)), Query.best_arm(), RuleConfig.parse("TS-KKT-IDS"),
                       FixedConfidence(), 1, 5)
out["tau"] = run_one(cfg, 0).tau
print(json.dumps(out))
"""


def _run(disable):
    env = dict(os.environ)
    env.pop("PURE_EXPLORE_DISABLE_JIT", None)
    if disable:
        env["PURE_EXPLORE_DISABLE_JIT"] = "1"
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True,
                         text=True, timeout=900)
    assert res.returncode == 0, res.stderr
    return json.loads(res.stdout)


@pytest.mark.slow
def test_jit_and_python_paths_agree_bitwise():
    jit, py = _run(False), _run(True)
    assert jit["backend"] == "numba" and py["backend"] == "python"
    assert jit["tau"] == py["tau"]
    for a, b in zip(jit["runs"], py["runs"]):
        assert a["counts"] == b["counts"]
        assert a["log"] == b["log"]
        assert a["traj"] == b["traj"]
