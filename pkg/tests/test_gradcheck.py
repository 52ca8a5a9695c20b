"""The finite-difference harness itself: green on real ops, and loud on a
deliberately wrong gradient (a checker that cannot fail checks nothing)."""

import numpy as np
import pytest

from ddt.gradcheck import fd_check, module_names, run_suite
from ddt.tensor import Tensor, _finish


def test_module_names():
    # bottom-up pipeline order, so failures point at the lowest broken layer
    assert module_names() == ["tensor", "nn", "attention", "blocks", "network"]


def test_tensor_module_all_pass():
    results = run_suite("tensor")
    assert results and all(r.passed for r in results)
    for r in results:
        assert r.rel_err < r.tol


def test_nn_module_all_pass():
    assert all(r.passed for r in run_suite("nn"))


def test_unknown_module_rejected():
    with pytest.raises(ValueError):
        run_suite("convnet")


def test_result_line_format():
    results = run_suite("tensor")
    line = results[0].line()
    assert line.startswith("[pass] tensor/")
    assert "rel_err=" in line and "tol=" in line


def test_check_is_deterministic():
    a = run_suite("tensor")
    b = run_suite("tensor")
    assert [r.rel_err for r in a] == [r.rel_err for r in b]


def sabotaged_tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        return (1.5 * (1.0 - out * out) * g,)  # wrong by a factor 1.5

    return _finish(out, (x,), bwd)


def test_harness_catches_wrong_gradient():
    from ddt.tensor import tsum

    def build(rng):
        x = Tensor(rng.uniform(-1, 1, size=(3, 3)), requires_grad=True)
        return (lambda: tsum(sabotaged_tanh(x))), [x]

    result = fd_check("sabotage", "bad_tanh", build, tol=1e-4)
    assert not result.passed
    assert result.rel_err > 0.1


def test_harness_accepts_correct_gradient():
    from ddt.tensor import tanh, tsum

    def build(rng):
        x = Tensor(rng.uniform(-1, 1, size=(3, 3)), requires_grad=True)
        return (lambda: tsum(tanh(x))), [x]

    result = fd_check("sane", "tanh", build, tol=1e-6)
    assert result.passed
