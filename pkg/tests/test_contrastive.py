import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from rml.autodiff import ShapeError, Tensor, grad_check
from rml.contrastive import ContrastiveConfig, DegenerateInputError, cosine_sim, rml_loss


def loop_oracle(zn, zm, tau):
    """Scalar-by-scalar evaluation of the two-direction loss."""
    n = zn.shape[0]

    def sim(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

    total = 0.0
    for anchor, other in ((zn, zm), (zm, zn)):
        for i in range(n):
            pos = math.exp(sim(anchor[i], other[i]) / tau)
            neg = sum(math.exp(sim(anchor[i], z[j]) / tau)
                      for j in range(n) if j != i for z in (anchor, other))
            total -= math.log(pos / (pos + neg)) / n
    return total


class TestCosine:
    def test_orthogonal(self):
        assert cosine_sim([1, 0], [0, 1]) == 0.0

    @given(hnp.arrays(np.float64, 4, elements=st.floats(-100, 100)).filter(
        lambda v: np.linalg.norm(v) > 1e-3))
    def test_self_similarity(self, v):
        assert abs(cosine_sim(v, v) - 1.0) <= 1e-12

    def test_antiparallel(self):
        assert abs(cosine_sim([1, 2, 3], [-1, -2, -3]) + 1.0) <= 1e-12

    def test_zero_norm(self):
        with pytest.raises(DegenerateInputError):
            cosine_sim([0, 0], [1, 0])


class TestLoss:
    def test_orthogonal_pair_value(self):
        z = np.eye(2)
        expected = 2 * -math.log(math.exp(2) / (math.exp(2) + 2))
        value = rml_loss(z, z, ContrastiveConfig(0.5)).item()
        assert abs(value - 0.479088) <= 1e-5
        assert abs(value - expected) <= 1e-12

    def test_single_sample_zero(self, rng):
        assert rml_loss(rng.normal(size=(1, 5)), rng.normal(size=(1, 5))).item() == 0.0

    @pytest.mark.parametrize("tau", [0.1, 0.5, 2.0])
    def test_matches_loop_oracle(self, rng, tau):
        zn, zm = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        assert abs(rml_loss(zn, zm, ContrastiveConfig(tau)).item()
                   - loop_oracle(zn, zm, tau)) <= 1e-10

    def test_symmetric_exactly(self, rng):
        zn, zm = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        assert rml_loss(zn, zm).item() == rml_loss(zm, zn).item()

    def test_row_scale_invariance(self, rng):
        zn, zm = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
        base = rml_loss(zn, zm).item()
        scaled = zn.copy()
        scaled[2] *= 37.5
        assert abs(rml_loss(scaled, zm).item() - base) <= 1e-10

    @given(st.integers(2, 6), st.integers(0, 2**31))
    def test_positive_for_nondegenerate(self, n, seed):
        g = np.random.default_rng(seed)
        assert rml_loss(g.normal(size=(n, 3)), g.normal(size=(n, 3))).item() > 0

    def test_temperature_monotonic_on_orthogonal(self):
        z = np.eye(2)
        values = [rml_loss(z, z, ContrastiveConfig(t)).item() for t in (1.0, 0.5, 0.25)]
        assert values[0] > values[1] > values[2]

    def test_zero_row_rejected(self, rng):
        zn = rng.normal(size=(3, 4))
        zn[1] = 0
        with pytest.raises(DegenerateInputError, match=r"\[1\]"):
            rml_loss(zn, rng.normal(size=(3, 4)))

    def test_epsilon_option_tolerates_zero_row(self, rng):
        zn = rng.normal(size=(3, 4))
        zn[1] = 0
        assert np.isfinite(rml_loss(zn, rng.normal(size=(3, 4)),
                                    ContrastiveConfig(0.5, norm_eps=1e-12)).item())

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            rml_loss(rng.normal(size=(3, 4)), rng.normal(size=(4, 4)))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rml_loss(np.zeros((0, 3)), np.zeros((0, 3)))

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            ContrastiveConfig(tau=0.0)

    def test_gradcheck(self, rng):
        zn = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        zm = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
        assert grad_check(lambda: rml_loss(zn, zm), [zn, zm], tol=1e-4).passed
