"""Builds the extension module and exercises it end to end.

    python3 python/smoke_test.py
"""

import importlib
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "movefit-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    target = os.environ.get("CARGO_TARGET_DIR", os.path.join(ROOT, "target"))
    lib = os.path.join(target, "release", "libmovefit.so")
    if not os.path.exists(lib):
        lib = os.path.join(target, "release", "libmovefit.dylib")
    out = tempfile.mkdtemp(prefix="movefit-py-")
    shutil.copy(lib, os.path.join(out, "movefit.so"))
    sys.path.insert(0, out)
    return importlib.import_module("movefit")


def main():
    mf = build()

    truth = mf.NegBinParams(12.0, 0.6)
    mean, variance, scale = truth.moments()
    assert abs(variance - mean / 0.4) < 1e-9
    assert abs(sum(truth.pmf(m) for m in range(400)) - 1.0) < 1e-9
    assert abs(mf.NegBinParams.from_scale(12.0, scale).p - 0.6) < 1e-12

    level = mf.simulate_level("S1", truth, 20, 50_000, 200, seed=3)
    oracle = mf.oracle_completion_rate(truth, 20)
    assert abs(level.completion_rate() - oracle) < 0.01, (level.completion_rate(), oracle)

    fit = mf.fit_level(level, grid_n=8, grid_p=8)
    assert fit.converged and fit.ks_distance < 0.05, fit
    assert abs(fit.n / 12.0 - 1.0) < 0.1 and abs(fit.p - 0.6) < 0.02, fit
    assert abs(mf.ks_distance(level, fit.params) - fit.ks_distance) < 1e-15

    base = mf.predict_completion(fit, 0)
    assert base == fit.fitted_completion
    up = mf.predict_completion(fit, 1)
    assert abs(up - base - fit.params.pmf(21)) < 1e-12
    corrected = mf.predict_completion(fit, 1, (1.035, -0.104))
    assert abs(corrected - (up + 0.104) / 1.035) < 1e-12

    try:
        mf.NegBinParams(0.0, 0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("invalid parameters accepted")

    full = {}
    for m in truth.sample(5, 200_000):
        if 1 <= m <= 200:
            full[m] = full.get(m, 0) + 1
    untruncated = mf.fit_untruncated("U", full, 20)
    assert untruncated.ks_distance < 0.02, untruncated

    print("smoke test ok:", fit, untruncated)


if __name__ == "__main__":
    main()
