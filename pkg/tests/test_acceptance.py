"""Acceptance criteria AC-1 .. AC-11 at their stated tolerances.

Each criterion runs the shipped config through the same runner the CLI uses
(``hdiff <subcommand> --config configs/acNN_*.yaml``) and prints one
``AC-n PASS|FAIL`` line; the lines are repeated in the terminal summary.
Run with ``pytest tests/test_acceptance.py -s`` to see them as they happen.
"""
from pathlib import Path

import pytest

from horizontal_diffusion.config import load_config
from horizontal_diffusion.experiments import RUNNERS, run_selftest

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
RESULTS = []  # collected lines, printed by conftest.pytest_terminal_summary


def run_config(name, subcommand):
    cfg = load_config(CONFIGS / name)
    files = {}
    checks, summary = RUNNERS[subcommand](cfg, files.__setitem__)
    return checks, summary, files


def report(label, title, checks):
    passed = bool(checks) and all(c.passed for c in checks)
    detail = "; ".join(f"{c.name}={c.value:.6g} (limit {c.threshold})" for c in checks)
    line = f"{label} {'PASS' if passed else 'FAIL'} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return passed


def check_all(label, title, checks):
    failed = [c.line() for c in checks if not c.passed]
    assert report(label, title, checks), "\n".join(failed)


def test_ac01_derivative_identity():
    checks, summary, _ = run_config("ac01_derivative_identity.yaml", "family")
    names = {c.name for c in checks}
    assert any("derivative" in n for n in names) and any("refinement" in n for n in names)
    check_all("AC-1", "finite-difference vs deformed derivative on the unit sphere", checks)


def test_ac02_length_preservation():
    checks, _, _ = run_config("ac02_length_preservation.yaml", "family")
    assert any("length" in c.name for c in checks)
    check_all("AC-2", "length preservation under backward Ricci flow", checks)


def test_ac03_damped_equals_parallel():
    checks, _, _ = run_config("ac03_damped_equals_parallel.yaml", "transport")
    assert any("gap" in c.name for c in checks)
    check_all("AC-3", "damped transport coincides with parallel transport", checks)


def test_ac04_damped_norm():
    checks, _, _ = run_config("ac04_damped_norm.yaml", "transport")
    prefixes = {c.name.split(".")[0] for c in checks}
    assert {"sphere", "hyperbolic", "euclidean"} <= prefixes
    check_all("AC-4", "damped transport norm vs exp(-kt/2)", checks)


def test_ac05_wasserstein_contraction():
    checks, _, files = run_config("ac05_wasserstein_contraction.yaml", "ot-contract")
    assert any(n.endswith(".csv") for n in files)
    assert any("rigidity" in c.name for c in checks)
    check_all("AC-5", "W2 contraction on the unit sphere, Euclidean rigidity", checks)


def test_ac06_cost_monotonicity():
    checks, _, _ = run_config("ac06_cost_monotonicity.yaml", "ot-contract")
    mono = [c for c in checks if "isotone_residual" in c.name]
    assert len(mono) == 2
    check_all("AC-6", "optimal cost series non-increasing (phi = r, r^2)", checks)


def test_ac07_alpha_order():
    checks, _, _ = run_config("ac07_alpha_order.yaml", "family")
    slope = [c for c in checks if "slope" in c.name]
    assert slope
    check_all("AC-7", "alpha-convergence slope in [0.7, 1.3]", slope)


def test_ac08_coupling_rate():
    checks, _, _ = run_config("ac08_coupling_rate.yaml", "coupling")
    assert any("rate" in c.name for c in checks)
    check_all("AC-8", "fitted exponential rate of the coupled distance", checks)


def test_ac09_euclidean_translation():
    checks, _, _ = run_config("ac09_euclidean_translation.yaml", "family")
    assert any("translation" in c.name for c in checks)
    check_all("AC-9", "Euclidean family is a translate of the base path", checks)


@pytest.fixture(scope="module")
def selftest_checks():
    checks, _ = run_selftest(None, lambda name, text: None, seed=0)
    return checks


def test_ac10_ot_exactness(selftest_checks):
    checks = [c for c in selftest_checks if c.name.startswith("ot.")]
    assert checks
    check_all("AC-10", "exact OT vs brute force on 100 instances", checks)


def test_ac11_geometry_oracles(selftest_checks):
    checks = [c for c in selftest_checks if c.name.startswith("geometry.")]
    assert len(checks) == 5
    check_all("AC-11", "geometry oracles", checks)
