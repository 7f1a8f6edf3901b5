"""Smoke test for the optdesign_py extension.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import json
import sys

import optdesign_py as od


def main() -> int:
    text = od.generate_gaussian(3, 20, seed=1, budget=8)
    assert text == od.generate_gaussian(3, 20, seed=1, budget=8), "generation is not deterministic"
    assert text.startswith("optdesign v1 d=3 n=20 m=1")

    relax = json.loads(od.solve(text, "d", "relax", tol=1e-8))
    assert relax["schema"] == od.SCHEMA_VERSION == 1
    assert relax["termination_reason"] == "Converged"
    assert abs(relax["costs"][0] - 8.0) < 1e-9

    fed = json.loads(od.solve(text, "d", "fedorov"))
    assert fed["feasible"] and len(fed["subset"]) == 8
    # Fedorov's guarantee against the relaxation: (b - d - 1)/b.
    assert fed["approximation_ratio"] >= (8 - 3 - 1) / 8

    big = od.generate_gaussian(3, 900, seed=1, budget=600)
    a1 = od.solve(big, "a", "round", eps=0.01, seed=7)
    a2 = od.solve(big, "a", "round", eps=0.01, seed=7)
    assert a1 == a2, "rounding is not deterministic"
    assert json.loads(a1)["costs"][0] <= 600

    k4 = "graph 4 6\n0 1 1\n0 2 1\n0 3 1\n1 2 1\n1 3 1\n2 3 1\n"
    reff = json.loads(od.solve(k4, "a", "round", eps=0.1, budget=6))
    assert abs(reff["objective_value"] - 3.0) < 1e-8

    try:
        od.solve(text, "e", "fedorov")
    except ValueError:
        pass
    else:
        raise AssertionError("E with fedorov should be rejected")

    ok, lines = od.verify("traps")
    assert ok, "\n".join(lines)

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
