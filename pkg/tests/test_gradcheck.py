"""The checker must accept correct gradients and flag wrong or broken ones."""

import numpy as np
import pytest

from videodms.gradcheck import NonFiniteError, grad_check
from videodms.tensor import Tensor, _make, log, tsum


def test_accepts_correct_gradient(rng):
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    assert grad_check(lambda t: tsum(t * t * 0.5), [x]) < 1e-9


def test_flags_wrong_gradient(rng):
    x = Tensor(rng.uniform(1.0, 2.0, 5), requires_grad=True)

    def bad_square(t):
        out = t.data ** 2
        # deliberately wrong: reports 3t instead of 2t
        return _make(out, (t,), lambda g: ((t, g * 3.0 * t.data),))

    assert grad_check(lambda t: tsum(bad_square(t)), [x]) > 1e-2


def test_rejects_float32(rng):
    x = Tensor(rng.standard_normal(3).astype(np.float32), requires_grad=True)
    with pytest.raises(ValueError, match="float64"):
        grad_check(lambda t: tsum(t), [x])


def test_rejects_no_grad_inputs(rng):
    x = Tensor(rng.standard_normal(3))
    with pytest.raises(ValueError, match="require grad"):
        grad_check(lambda t: tsum(t), [x])


def test_non_finite_forward_raises(rng):
    x = Tensor(np.array([1e-9, 2.0]), requires_grad=True)
    # perturbing element 0 by -h drives the log argument negative
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteError):
        grad_check(lambda t: tsum(log(t)), [x])
