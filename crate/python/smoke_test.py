"""Smoke test for the ctrl_py extension.

Run after `maturin develop -m crates/python/Cargo.toml --release`, or point
CTRL_PY_LIB at a built libctrl_py.so.
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile


def load():
    try:
        import ctrl_py

        return ctrl_py
    except ImportError:
        pass
    here = os.path.dirname(os.path.abspath(__file__))
    lib = os.environ.get(
        "CTRL_PY_LIB", os.path.join(here, "..", "target", "release", "libctrl_py.so")
    )
    tmp = tempfile.mkdtemp()
    dst = os.path.join(tmp, "ctrl_py.so")
    shutil.copy(lib, dst)
    spec = importlib.util.spec_from_file_location("ctrl_py", dst)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def main():
    m = load()

    sol = m.solve_lq()
    assert abs(sol["k0"] - 0.71914874) < 1e-6, sol
    assert abs(sol["k1"] + 0.10555128) < 1e-6, sol
    assert abs(sol["k2"] + 0.53518376) < 1e-6, sol
    assert abs(sol["mean_intercept"] + 0.78889745) < 1e-6, sol

    star = m.GaussianPolicy(*sol["theta"])
    k = m.evaluate_policy(sol["theta"])
    assert all(abs(a - b) < 1e-9 for a, b in zip(k, (sol["k0"], sol["k1"], sol["k2"])))
    assert abs(star.variance() - sol["variance"]) < 1e-12
    assert star.kl(star, 0.3) == 0.0
    other = m.GaussianPolicy(sol["theta"][0], sol["theta"][1] + 1.0, sol["theta"][2])
    assert abs(star.kl(other, 0.0) - 0.5 / sol["variance"]) < 1e-9

    h = 1e-6
    t = list(sol["theta"])
    s = star.score(0.4, -0.2)
    for i in range(3):
        up, dn = list(t), list(t)
        up[i] += h
        dn[i] -= h
        fd = (m.GaussianPolicy(*up).log_density(0.4, -0.2) - m.GaussianPolicy(*dn).log_density(0.4, -0.2)) / (2 * h)
        assert abs(fd - s[i]) < 1e-5 * max(1.0, abs(fd))

    phi = m.critic_sweep([0.0, 0.0, 0.0], star, 0.01, steps=200, seed=1)
    assert all(math.isfinite(v) for v in phi)

    assert m.penalty_adapt(1.0, 0.0004, 0.0002, 0.5) == 2.0
    assert m.penalty_adapt(1.0, 0.0001, 0.0002, 0.5) == 0.5
    assert m.penalty_adapt(1.0, 0.0002, 0.0002, 0.5) == 1.0

    out = tempfile.mkdtemp()
    res = m.run(
        "env = lq\nalgo = cpg\nK = 3\nT = 2\ndt = 0.01\nmc_eval_samples = 4\n",
        [("seeds", "1,2"), ("out", out)],
    )
    assert res["exit_code"] == 0
    assert [s["seed"] for s in res["seeds"]] == [1, 2]
    assert os.path.exists(os.path.join(out, "metrics.csv"))

    try:
        m.run("K = -1\n")
    except ValueError as e:
        assert "K" in str(e) or "line" in str(e)
    else:
        raise AssertionError("bad config accepted")

    print("ctrl_py smoke test: ok")


if __name__ == "__main__":
    sys.exit(main())
