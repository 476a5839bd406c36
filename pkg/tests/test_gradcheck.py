import numpy as np
import pytest

from dfvt.gradcheck import (
    DEFAULT_TOL,
    grad_check,
    run_standard_checks,
)
from dfvt.tensor import Tensor, matmul, mul, tensor, tsum


def _params(**arrays):
    return {k: Tensor(np.asarray(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}


def test_linear_function_machine_epsilon():
    # central differences are exact on linear functions
    p = _params(w=[1.0, -2.0, 3.0])
    c = tensor([0.5, 1.5, -2.5], np.float64)
    res = grad_check(lambda: tsum(mul(p["w"], c)), p, name="linear")
    assert res.max_rel_err < 1e-9


def test_quadratic_function_machine_epsilon():
    # ... and on quadratics
    p = _params(w=[[1.0, 2.0], [3.0, 4.0]])
    res = grad_check(lambda: tsum(mul(p["w"], p["w"])), p, name="quadratic")
    assert res.max_rel_err < 1e-9


def test_requires_float64():
    p = {"w": Tensor(np.ones(3, dtype=np.float32), requires_grad=True)}
    with pytest.raises(ValueError, match="64-bit"):
        grad_check(lambda: tsum(p["w"]), p)


def test_nonfinite_reported_with_coordinate():
    p = _params(w=[2.0, 0.0])

    def f():
        # 1/w is non-finite at w[1] == 0 when perturbed across the pole
        inv = Tensor(1.0 / p["w"].data, _parents=(p["w"],), requires_grad=True,
                     _vjp=lambda g: (-g / (p["w"].data ** 2),))
        return tsum(inv)

    res = grad_check(f, p, name="pole")
    assert res.notes
    assert "w[1]" in res.notes[0]
    assert not res.passed()


def test_matmul_gradients_vs_oracle_tight():
    rng = np.random.default_rng(5)
    p = _params(a=rng.normal(size=(4, 5)), b=rng.normal(size=(5, 3)))
    w = tensor(rng.normal(size=(4, 3)), np.float64)
    res = grad_check(lambda: tsum(mul(matmul(p["a"], p["b"]), w)), p, max_coords=None)
    assert res.max_rel_err < 1e-6


def test_standard_suite_covers_ops_and_passes():
    results = run_standard_checks(seed=0)
    names = {r.name for r in results}
    for required in ("matmul", "conv2d", "layer_norm", "softmax", "gelu",
                     "attention", "encoder_block", "cross_entropy",
                     "anchor_penalty", "full_model"):
        assert required in names
    failures = [r.describe() for r in results if not r.passed(DEFAULT_TOL)]
    assert not failures, "\n".join(failures)


def test_per_op_tolerances_from_examples():
    results = {r.name: r for r in run_standard_checks(seed=1)}
    assert results["conv2d"].max_rel_err < 1e-5
    assert results["layer_norm"].max_rel_err < 1e-5
    assert results["gelu"].max_rel_err < 1e-5
    assert results["cross_entropy"].max_rel_err < 1e-6
    assert results["full_model"].max_rel_err < 1e-4


def test_corrupted_rule_is_flagged_by_name():
    results = run_standard_checks(seed=0, only=["gelu", "matmul"], corrupt="gelu")
    by_name = {r.name: r for r in results}
    assert not by_name["gelu"].passed(DEFAULT_TOL)
    assert by_name["matmul"].passed(DEFAULT_TOL)
    # failure output names the op, coordinate and both values
    text = by_name["gelu"].describe(DEFAULT_TOL)
    assert "gelu" in text and "analytic=" in text and "numeric=" in text


def test_same_seed_same_table():
    a = run_standard_checks(seed=3, only=["matmul", "softmax"])
    b = run_standard_checks(seed=3, only=["matmul", "softmax"])
    assert [(r.name, r.max_rel_err) for r in a] == [(r.name, r.max_rel_err) for r in b]
