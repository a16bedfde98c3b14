"""Acceptance suite: one experiment per criterion, run at its default configuration.

Each criterion prints a single PASS/FAIL line with its key metrics and wall
time.  Run standalone with ``python3 tests/test_acceptance.py`` or through
pytest (the lines appear even when output capture is on).
"""
import sys
import time

import pytest

from stochricci.experiments import REGISTRY, Context

CRITERIA = [
    (1, "stationarity", 5),
    (2, "laplacian_eigen", 1),
    (3, "linear_decay", 30),
    (4, "representation", 180),
    (5, "martingale", 180),
    (6, "on_section", 300),
    (7, "max_principle", 10),
    (8, "barrier_residuals", 1),
    (9, "mirror_drift", 60),
    (10, "coupling_scaling", 300),
    (11, "hitting_formulas", 1),
    (12, "sum_identity", 180),
    (13, "swap_symmetry", 180),
    (14, "middle_martingale", 180),
    (15, "jacobi_layer", 1),
    (16, "derivative_decay", 120),
    (17, "oscillation_contraction", 180),
]


def _brief(metrics, limit=6):
    items = []
    for k, v in metrics.items():
        if isinstance(v, float):
            items.append(f"{k}={v:.4g}")
        elif isinstance(v, (int, bool, str)):
            items.append(f"{k}={v}")
        if len(items) == limit:
            break
    return " ".join(items)


def run_criterion(number, name, budget):
    exp = REGISTRY[name]
    cfg = exp.config()
    start = time.perf_counter()
    outcome = exp.run(cfg, Context(cfg.seed))
    wall = time.perf_counter() - start
    status = "PASS" if outcome.passed else "FAIL"
    over = "" if wall <= budget else f" (over the {budget}s runtime target)"
    line = f"criterion {number:2d} {name}: {status} in {wall:.1f}s{over}  {_brief(outcome.metrics)}"
    return outcome, line


@pytest.mark.acceptance
@pytest.mark.parametrize("number, name, budget", CRITERIA, ids=[f"c{n:02d}_{m}" for n, m, _ in CRITERIA])
def test_criterion(number, name, budget, capsys):
    outcome, line = run_criterion(number, name, budget)
    with capsys.disabled():
        print("\n" + line)
    assert outcome.passed, line


if __name__ == "__main__":
    failed = 0
    for number, name, budget in CRITERIA:
        outcome, line = run_criterion(number, name, budget)
        print(line, flush=True)
        failed += not outcome.passed
    sys.exit(1 if failed else 0)
