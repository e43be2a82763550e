"""The checker itself: positive control, negative control, diagnostics."""

import numpy as np
import pytest

from pointcompact import tensor as T
from pointcompact.gradcheck import GradCheckError, grad_check


def test_sum_gradient_is_ones():
    x = T.parameter(np.random.default_rng(0).normal(size=(3, 4)), "x")
    report = grad_check(lambda: x.tensor.sum(), [x], tol=1e-8)
    assert report.max_rel_err < 1e-8


def test_wrong_backward_rule_is_caught():
    # forward exp, backward pretending to be identity
    def bad_exp(a):
        return T._make(np.exp(a.data), (a,), lambda g: (g,))

    x = T.parameter(np.random.default_rng(1).normal(size=(2, 3)), "x")
    report = grad_check(lambda: bad_exp(x.tensor).sum(), [x], tol=1e-6)
    assert report.max_rel_err > 0.1  # error far above any tolerance


def test_nonfinite_objective_reported():
    x = T.parameter(np.array([1.0]), "x")
    with pytest.raises(GradCheckError), np.errstate(divide="ignore", invalid="ignore"):
        grad_check(lambda: T.log(x.tensor * 0.0).sum(), [x])


def test_nonfinite_gradient_names_parameter():
    # sqrt at 0: finite value, infinite derivative
    x = T.parameter(np.array([0.0]), "weights.w")
    with pytest.raises(GradCheckError, match="weights.w"):
        grad_check(lambda: T.power(x.tensor, 0.5).sum(), [x])


def test_subsampled_entries_still_deterministic():
    rng = np.random.default_rng(2)
    x = T.parameter(rng.normal(size=(20, 20)), "x")
    f = lambda: (x.tensor * x.tensor).sum()
    r1 = grad_check(f, [x], max_entries_per_param=10, seed=3)
    r2 = grad_check(f, [x], max_entries_per_param=10, seed=3)
    assert r1.per_param == r2.per_param


def test_report_names_worst_parameter():
    a = T.parameter(np.ones(2), "a")
    b = T.parameter(np.ones(2), "b")
    report = grad_check(lambda: (a.tensor + b.tensor * 2.0).sum(), [a, b])
    name, err = report.worst()
    assert name in ("a", "b") and err < 1e-8
