"""Smoke test for the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o target/wheels
    pip install target/wheels/stokes_homog-*.whl

then run ``python python/smoke_test.py`` from the repository root.
"""

import json
import math
import pathlib
import sys
import tempfile

import stokes_homog as sh

ROOT = pathlib.Path(__file__).resolve().parent.parent


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        sys.exit(1)


def main():
    ident = sh.CoefficientField.identity(2)
    check(ident.is_constant and ident.mu == 1.0, "identity family is constant with μ = 1")

    scaled = sh.CoefficientField(2, json.dumps({"family": "scaled", "base": {"family": "identity"}, "factor": 2.5}))
    cell = sh.solve_cell(scaled, 8)
    zero = max(abs(v) for j in range(2) for b in range(2) for v in cell.chi(j, b))
    check(zero == 0.0, "constant coefficients give zero correctors")
    eff = cell.effective()
    check(abs(eff.get(0, 0, 0, 0) - 2.5) < 1e-12, "constant Â equals A")

    lam = sh.CoefficientField.laminate(2)
    a = lam.evaluate([0.25, 0.0])
    check(len(a) == 16 and abs(a[0] - 1.5) < 1e-12, "laminate evaluates to 1 + ½ sin 2πy₁ on the diagonal")

    cell = sh.solve_cell(lam, 32)
    check(cell.max_residual <= 1e-10, f"laminate correctors reach tolerance ({cell.max_residual:.2e})")
    eff = cell.effective()
    check(eff.mu_lower >= lam.mu - 1e-8, f"μ(Â) = {eff.mu_lower:.4f} ≥ μ = {lam.mu:.4f}")

    liou = cell.liouville()
    check(liou["rank"] == 7, "Liouville family has rank 7 in two dimensions")

    rnd = sh.CoefficientField(2, json.dumps({"family": "random_trig", "seed": 17, "modes": 3, "amplitude": 0.6}))
    check(sh.duality_defect(rnd, 16) <= 1e-8, "duality holds for a nonsymmetric family")

    sol = sh.solve_dirichlet(lam, 0.25, 32, json.dumps({"center": [0.5, 0.5], "radius": 0.3}))
    check(sol["relative_residual"] <= 1e-10, "Dirichlet solve converges")
    check(math.fsum(v * v for v in sol["velocity"]) > 0.0, "Dirichlet velocity is nonzero")

    check(sh.validate_config(ROOT / "configs" / "cell.json") == [], "cell.json validates")
    with tempfile.TemporaryDirectory() as tmp:
        bad = pathlib.Path(tmp) / "bad.json"
        cfg = json.loads((ROOT / "configs" / "sweep.json").read_text())
        cfg["estimates"]["q"] = 2.0
        bad.write_text(json.dumps(cfg))
        diags = sh.validate_config(bad)
        check(any("ρ out of (0,1)" in msg for _, msg in diags), "q ≤ d is rejected")

        res = sh.run_config(ROOT / "configs" / "cell.json", out=pathlib.Path(tmp) / "cell")
        check(res["passed"] and "correctors.csv" in res["artifacts"], "cell.json run passes")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
