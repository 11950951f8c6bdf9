"""Smoke test for the rbdsde extension module.

Build and run from the repository root:

    cargo build --release -p rbdsde-python
    python3 python/smoke_test.py

The script copies target/release/librbdsde_py.so next to itself as rbdsde.so
unless an importable rbdsde module already exists.
"""

import json
import math
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROOT = HERE.parent


def load_module():
    try:
        import rbdsde
        return rbdsde
    except ImportError:
        pass
    built = ROOT / "target" / "release" / "librbdsde_py.so"
    if not built.exists():
        sys.exit(f"{built} not found; run `cargo build --release -p rbdsde-python` first")
    shutil.copy(built, HERE / "rbdsde.so")
    sys.path.insert(0, str(HERE))
    import rbdsde
    return rbdsde


def main():
    rbdsde = load_module()

    y, dk = rbdsde.penalty_step(0.2, 1.0, 4.0)
    assert math.isclose(y, 0.84) and math.isclose(dk, 0.64), (y, dk)
    y, kp, km = rbdsde.double_penalty_step(0.5, -1.0, 1.0, 4.0, 4.0)
    assert (y, kp, km) == (0.5, 0.0, 0.0)

    mean, _ = rbdsde.closed_form_reference("linear_drift")
    problem = rbdsde.Problem.catalog("linear_drift", 40, 5000, seed=3)
    assert problem.validate() == []
    sol = problem.solve()
    assert abs(sol.y0 - mean) < 1e-2, (sol.y0, mean)
    drift_y0 = sol.y0
    assert sol.y.shape == (5000, 41) and sol.z.shape == (5000, 40, 1)

    put = rbdsde.Problem.from_file(str(ROOT / "configs" / "american_put.json"))
    sol = put.solve()
    value, refined, reliable = put.stopping_oracle(400)
    assert reliable and abs(sol.y0 - value) / value < 0.02, (sol.y0, value)
    assert (sol.k_plus[:, 1:] >= sol.k_plus[:, :-1]).all()
    assert json.loads(sol.trace_json())["kind"] == "lower"

    cfg = json.loads((ROOT / "configs" / "doubly_stochastic.json").read_text())
    cfg["noise"]["alpha"] = 1.2
    errors = rbdsde.Problem.from_json(json.dumps(cfg)).validate()
    assert any("alpha out of (0,1)" in e for e in errors), errors

    try:
        rbdsde.Problem.from_file(str(ROOT / "configs" / "doubly_stochastic.json")).stopping_oracle()
    except NotImplementedError:
        pass
    else:
        raise AssertionError("lattice oracle accepted g != 0")

    print(f"smoke test passed: linear_drift Y0={drift_y0:.6f}, american_put Y0={sol.y0:.6f} vs lattice {value:.6f}")


if __name__ == "__main__":
    main()
