#!/usr/bin/env python3
"""Smoke test of the gpcond_py extension module.

Builds nothing itself: run `cargo build -p gpcond-py --release` first, then
`python3 python/smoke_test.py`. The script locates the compiled cdylib,
exposes it under the importable module name, and exercises the main surface
against the closed forms of the two built-in configurations.
"""

import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    candidates = [
        os.path.join(ROOT, "target", profile, name)
        for profile in ("release", "debug")
        for name in ("libgpcond_py.so", "gpcond_py.so", "libgpcond_py.dylib")
    ]
    lib = next((c for c in candidates if os.path.exists(c)), None)
    if lib is None:
        sys.exit("build the extension first: cargo build -p gpcond-py --release")
    stage = tempfile.mkdtemp(prefix="gpcond-py-")
    shutil.copy(lib, os.path.join(stage, "gpcond_py.so"))
    sys.path.insert(0, stage)
    import gpcond_py

    return gpcond_py


def approx(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    gp = load_module()

    kernel = gp.Kernel.brownian(1.0)
    approx(kernel.cov(0.3, 0.8), 0.3, 1e-15)

    endpoint = gp.Condition.endpoint(1.0)
    area = gp.Condition.unit_density(1.0)
    approx(endpoint.tail_mass(0.4), 1.0, 1e-15)
    approx(area.tail_mass(0.25), 0.75, 1e-15)

    # zero-area bridge model
    zabb = gp.Model(kernel, [endpoint, area])
    assert zabb.rank() == 2
    approx(zabb.cond_cov(0.5, 0.5), 0.0625, 1e-13)
    approx(zabb.cond_cov(0.3, 0.7), -0.0423, 1e-13)

    gram = zabb.gram()
    approx(gram[0][0], 1.0, 1e-13)
    approx(gram[0][1], 0.5, 1e-13)
    approx(gram[1][1], 1.0 / 3.0, 1e-13)

    b = zabb.b_matrix()
    approx(b[0][0], 1.0, 1e-13)
    approx(b[0][1], 0.0, 1e-13)
    approx(b[1][0], 0.5, 1e-13)
    approx(b[1][1], 1.0 / (2.0 * math.sqrt(3.0)), 1e-13)

    # anticipative sampling: deterministic in the seed and condition-free
    grid, values = zabb.sample_anticipative(2000, seed=7)
    grid2, values2 = zabb.sample_anticipative(2000, seed=7)
    assert values == values2
    assert abs(values[-1]) < 1e-10, "endpoint must vanish"
    trapz = sum(
        0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i])
        for i in range(len(grid) - 1)
    )
    assert abs(trapz) < 1e-5, f"area residual {trapz}"

    # series sampling agrees in shape and annihilates the endpoint
    sgrid, svalues = zabb.sample_series(terms=256, grid_steps=500, seed=3)
    assert len(sgrid) == 501
    assert abs(svalues[-1]) < 1e-9

    # drift and expected future against the closed forms
    approx(zabb.drift(0.5, 0.1, [0.0, 0.02]), -1.28, 1e-8)
    bridge = gp.Model(gp.Kernel.brownian(1.0), [gp.Condition.endpoint(1.0)])
    approx(bridge.expected_future(0.5, 0.2, [0.0], 0.75), 0.1, 1e-10)
    approx(bridge.drift(0.5, 0.2, [0.0]), -0.4, 1e-8)

    # SDE integration runs to T - eps_end and tracks the area integral
    times, xs, ivals = zabb.sample_sde(dt=1e-3, eps_end=1e-2, seed=11)
    approx(times[-1], 0.99, 1e-12)
    assert len(ivals) == 2 and len(ivals[1]) == len(times)

    # Ornstein-Uhlenbeck kernel is exposed too
    ou = gp.Kernel.ornstein_uhlenbeck(1.0, 1.0)
    approx(ou.cov(0.3, 0.7), math.exp(-0.4), 1e-14)
    _, ou_values = ou.sample(100, seed=5)
    assert len(ou_values) == 101

    print("gpcond_py smoke test passed")


if __name__ == "__main__":
    main()
