#!/usr/bin/env python3
"""Smoke test for the boxmotion Python bindings.

Builds (or reuses) the cdylib, loads it as a module, and runs a miniature
end-to-end session: build the integrator family, run the conformance suite,
compose two axes, then plan and simulate a bundled scenario.

Usage: python3 python/smoke_test.py
"""

import json
import pathlib
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_and_import():
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libboxmotion_py.so", "boxmotion_py.dll", "libboxmotion_py.dylib")
    ]
    lib = next((c for c in candidates if c.exists()), None)
    if lib is None:
        subprocess.run(
            ["cargo", "build", "-p", "boxmotion-py"], cwd=ROOT, check=True
        )
        lib = next(c for c in candidates if c.exists())
    tmp = tempfile.mkdtemp(prefix="boxmotion_py_")
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(lib, pathlib.Path(tmp) / f"boxmotion_py{suffix}")
    sys.path.insert(0, tmp)
    import boxmotion_py

    return boxmotion_py


def main():
    bm = build_and_import()

    # Single-axis family: three primitives, four edges, all checks green.
    axis = bm.Automaton.double_integrator(1.0, 1.0)
    assert axis.p == 1 and axis.n == 2 and axis.num_primitives == 3
    assert axis.primitive_names() == ["H", "F", "B"]
    assert axis.sigma([1]) == [[1]]
    report = axis.check(samples=120)
    assert report["all_ok"], report
    print("axis conformance:", {k: report[k] for k in ("i", "vi", "vii")})

    # Two-axis composition: 9 primitives, serialization round-trips.
    plane = axis.compose_n(2)
    assert plane.num_primitives == 9
    back = bm.Automaton.from_json(plane.to_json())
    assert back.to_json() == plane.to_json()
    assert plane.sigma([1, 0]) == [[1, 0]]
    assert sorted(map(tuple, plane.sigma([1, 1]))) == [(0, 1), (1, 0), (1, 1)]

    # Scenario round trip, planning, and closed-loop verification.
    scn = bm.Scenario.load(str(ROOT / "scenarios" / "fig7.scn"))
    assert scn.name == "fig7" and scn.planner == "ndd"
    policy = json.loads(scn.plan())
    assert policy["planner"] == "ndd"
    assert policy["stages"][0]["kind"] == "value"
    verdicts = scn.simulate(samples=5)
    assert len(verdicts) == 5
    assert all(v["pass"] and not v["zeno"] for v in verdicts), verdicts
    print("fig7 verdicts:", [(v["events"], v["pass"]) for v in verdicts])

    # The deterministic planner path through the bindings.
    open1 = bm.Scenario.load(str(ROOT / "scenarios" / "open7x7x2_n1.scn"))
    path_policy = json.loads(open1.plan(algo="astar"))
    steps = path_policy["stages"][0]["steps"]
    assert steps[0]["box"] == [0, 0, 0] and steps[-1]["box"] == [6, 6, 0]
    print("astar path length:", len(steps) - 1)

    print("smoke test OK")


if __name__ == "__main__":
    main()
