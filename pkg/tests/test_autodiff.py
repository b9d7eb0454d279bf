"""Tensor engine: gradients against central differences, basic contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from silentspeech.autodiff import (
    DimensionError,
    GradientTape,
    NonScalarOutputError,
    Tensor,
    concat,
    cosine_similarity,
    finite_difference_gradient,
    gelu,
    grad,
    log_softmax,
    logsumexp,
    stack,
)


def rel_err(a, b, floor=1e-8):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), floor))


class TestPrimitiveGradients:
    def test_quadratic(self):
        g = grad(lambda x: (x * x).sum(), Tensor([1.0, 2.0]))
        np.testing.assert_allclose(g.data, [2.0, 4.0])

    def test_sum_of_squares_matches_fd(self):
        x0 = np.array([3.0])
        gn = finite_difference_gradient(lambda x: (x * x).sum(), x0, h=1e-5)
        np.testing.assert_allclose(gn.data, [6.0], atol=1e-8)

    def test_exp_fd_at_zero(self):
        gn = finite_difference_gradient(lambda x: x.exp().sum(), np.array([0.0]), h=1e-5)
        np.testing.assert_allclose(gn.data, [1.0], atol=1e-8)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_composition_vs_fd(self, seed):
        rng = np.random.default_rng(seed)
        W1 = rng.normal(size=(3, 4))
        W2 = rng.normal(size=(2, 3))

        def f(x):
            h = gelu(Tensor(W1) @ x)
            h = (Tensor(W2) @ h).tanh()
            return ((h * h).sum() + 1.0).log()

        x0 = rng.uniform(-2, 2, size=(4, 3))
        ga = grad(f, Tensor(x0)).data
        gn = finite_difference_gradient(f, x0, h=1e-5).data
        assert rel_err(ga, gn) <= 1e-4

    def test_every_primitive_against_fd(self):
        rng = np.random.default_rng(0)
        x0 = rng.uniform(0.5, 2.0, size=(3, 2))  # positive: log/sqrt domains
        cases = [
            lambda x: (x + 2.0 * x).sum(),
            lambda x: (x - x * 0.5).sum(),
            lambda x: (x * x / (x + 1.0)).sum(),
            lambda x: (-x).exp().sum(),
            lambda x: x.log().sum(),
            lambda x: x.sqrt().tanh().sum(),
            lambda x: (x**3.0).mean(),
            lambda x: (x.T @ x).sum(),
            lambda x: x.reshape(6).sum(axis=0),
            lambda x: x[1:, :].sum() + x[0, 1] * 3.0,
            lambda x: concat([x, x * 2.0], axis=1).sum(),
            lambda x: stack([x, x * x], axis=0).sum(),
            lambda x: logsumexp(x, axis=0).sum(),
            lambda x: log_softmax(x, axis=1).sum(),
            lambda x: gelu(x).sum(),
            lambda x: x.sum(axis=1, keepdims=True).sum(),
            lambda x: x.mean(axis=0).sum(),
        ]
        for i, f in enumerate(cases):
            ga = grad(f, Tensor(x0)).data
            gn = finite_difference_gradient(f, x0, h=1e-5).data
            assert rel_err(ga, gn) <= 1e-4, f"case {i} failed"

    def test_broadcasting_gradients(self):
        rng = np.random.default_rng(1)
        a0 = rng.normal(size=(3, 1))
        b0 = rng.normal(size=(1, 4))

        def f(a, b):
            return ((a + b) * (a * b + 2.0)).sum()

        ga, gb = grad(f, [Tensor(a0), Tensor(b0)])
        gna = finite_difference_gradient(lambda a: f(a, Tensor(b0)), a0).data
        gnb = finite_difference_gradient(lambda b: f(Tensor(a0), b), b0).data
        assert rel_err(ga.data, gna) <= 1e-6
        assert rel_err(gb.data, gnb) <= 1e-6


class TestGelu:
    def test_zero(self):
        assert gelu(Tensor(0.0)).item() == 0.0

    def test_large_positive_is_identity(self):
        assert abs(gelu(Tensor(10.0)).item() - 10.0) < 1e-6

    def test_large_negative_is_suppressed(self):
        assert abs(gelu(Tensor(-10.0)).item()) < 1e-6


class TestCosineSimilarity:
    def test_identical_unit_vectors(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([1.0, 0.0])).item() == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-12)

    def test_colinear_scale_invariant(self):
        value = cosine_similarity(Tensor([1.0, 2.0]), Tensor([2.0, 4.0])).item()
        assert abs(value - 1.0) < 1e-7

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity(Tensor([1.0]), Tensor([1.0, 2.0]))

    def test_gradient_zero_at_maximum(self):
        c = Tensor([0.4, -1.2, 0.7])
        g = grad(lambda x: cosine_similarity(x, c), Tensor(c.data))
        assert np.abs(g.data).max() < 1e-8

    @given(
        st.lists(st.floats(-2, 2).filter(lambda v: abs(v) > 1e-3), min_size=2, max_size=6),
        st.floats(0.01, 100.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_positive_rescaling_invariance(self, values, scale):
        a = Tensor(values)
        b = Tensor([v * scale for v in values])
        assert abs(cosine_similarity(a, b).item() - 1.0) < 1e-9


class TestGradContract:
    def test_non_scalar_output_rejected(self):
        with pytest.raises(NonScalarOutputError):
            grad(lambda x: x * 2.0, Tensor([1.0, 2.0]))

    def test_multi_input(self):
        ga, gb = grad(lambda a, b: (a * b).sum(), [Tensor([1.0, 2.0]), Tensor([3.0, 4.0])])
        np.testing.assert_allclose(ga.data, [3.0, 4.0])
        np.testing.assert_allclose(gb.data, [1.0, 2.0])

    def test_fd_requires_positive_step(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda x: x.sum(), np.array([1.0]), h=0.0)

    def test_backward_deterministic(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(5, 3))

        def f(x):
            return logsumexp(gelu(x @ Tensor(rng.normal(size=(3, 3)))), axis=None)

        W = rng.normal(size=(3, 3))

        def g(x):
            return logsumexp(gelu(x @ Tensor(W)), axis=None)

        g1 = grad(g, Tensor(x0)).data
        g2 = grad(g, Tensor(x0)).data
        assert (g1 == g2).all()

    def test_tape_visits_shared_nodes_once(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = x * 2.0
        z = (y + y).sum()  # y consumed twice
        tape = GradientTape(z)
        assert len([n for n in tape.nodes if n is y]) == 1
        tape.backward()
        np.testing.assert_allclose(tape.gradient(x), [4.0, 4.0])

    def test_tensors_are_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0
