import numpy as np
import pytest

from micromacro import tensor as T
from micromacro.gradcheck import (ABS_FLOOR, CheckResult, descriptor_checks, end_to_end_check, gradient_error,
                                  run_all)


@pytest.fixture(scope="module")
def results():
    return run_all(0)


def test_all_checks_pass(results):
    names = [r.name for r in results]
    assert names == (["soft_degree_histogram"] + [f"transition_matrix s={s}" for s in range(1, 6)]
                     + ["triangle_count", "mm_elbo_loss end-to-end"])
    for r in results:
        assert r.passed, r.line()
    assert all(r.tolerance == 1e-4 for r in results[:-1]) and results[-1].tolerance == 1e-3


def test_result_line_format():
    line = CheckResult("x", 2e-3, 1e-3, 0.1).line()
    assert line.startswith("FAIL") and "2.000e-03" in line


def test_gradient_error_floor():
    # tiny entries are compared against the floor, not their own magnitude
    assert gradient_error(np.array([1.0, 1e-9]), np.array([1.0, 2e-9])) == pytest.approx(1e-9 / ABS_FLOOR)
    assert gradient_error(np.array([1.0, 0.5]), np.array([1.0, 0.6])) == pytest.approx(0.1 / 0.6)


def test_corrupted_adjoint_is_detected(monkeypatch):
    original = T.MatrixPower.backward

    def wrong(*args, **kwargs):
        return [0.9 * g for g in original(*args, **kwargs)]

    monkeypatch.setattr(T.MatrixPower, "backward", staticmethod(wrong))
    failed = {r.name for r in descriptor_checks(0) if not r.passed}
    assert failed == {"triangle_count"}


def test_corrupted_sigmoid_breaks_end_to_end(monkeypatch):
    original = T.Sigmoid.backward
    monkeypatch.setattr(T.Sigmoid, "backward", staticmethod(lambda *a, **k: [1.01 * g for g in original(*a, **k)]))
    assert not end_to_end_check(0).passed
