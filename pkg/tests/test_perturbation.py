import numpy as np
import pytest
from hypothesis import given, strategies as st

from rml.autodiff import RngStream, Tensor
from rml.perturbation import (PerturbationConfig, PerturbationError, draw_unusable,
                              noise_perturb, resample, unusable_perturb)


def batch_of(n, dims, seed=0):
    g = np.random.default_rng(seed)
    return [g.normal(size=(n, d)) for d in dims]


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"p": 1.5}, {"p": -0.1}, {"r": 2.0}, {"sigma": -1.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(PerturbationError, match=r"\[0, ?1\]|sigma"):
            PerturbationConfig(**kwargs)


class TestNoise:
    def test_p_zero_identity(self):
        batch = batch_of(10, [3, 4])
        out, _ = noise_perturb(batch, PerturbationConfig(p=0.0), RngStream(0))
        for a, b in zip(out, batch):
            assert np.array_equal(a, b)

    def test_p_one_gaussian_moments(self):
        out, _ = noise_perturb([np.zeros((10000, 1))], PerturbationConfig(p=1.0, sigma=0.4),
                               RngStream(0))
        assert abs(out[0].mean()) <= 0.02
        assert abs(out[0].std() - 0.4) <= 0.02

    def test_cell_rate(self):
        batch = [np.zeros((10000, 2)) for _ in range(4)]
        _, draw = noise_perturb(batch, PerturbationConfig(p=0.25), RngStream(1))
        assert 0.24 <= draw.noisy_cells.mean() <= 0.26

    def test_noise_is_per_cell(self):
        batch = [np.zeros((500, 3)), np.zeros((500, 2))]
        out, draw = noise_perturb(batch, PerturbationConfig(p=0.5), RngStream(2))
        for m, x in enumerate(out):
            changed = np.any(x != 0, axis=1)
            assert np.array_equal(changed, draw.noisy_cells[:, m])

    def test_input_not_mutated(self):
        batch = batch_of(20, [3])
        copy = batch[0].copy()
        noise_perturb(batch, PerturbationConfig(p=1.0), RngStream(0))
        assert np.array_equal(batch[0], copy)


class TestUnusable:
    def test_r_zero_identity(self):
        batch = batch_of(10, [3, 4])
        out, draw = unusable_perturb(batch, PerturbationConfig(r=0.0), RngStream(0))
        assert np.all(draw.mask == 1)
        for a, b in zip(out, batch):
            assert np.array_equal(a, b)

    def test_two_views_r_one(self):
        draw = draw_unusable(PerturbationConfig(r=1.0), RngStream(0), 100, 2)
        assert np.all(draw.mask.sum(axis=1) == 1)

    @pytest.mark.parametrize("n,r", [(1, 0.5), (3, 0.5), (7, 0.25), (100, 0.33), (101, 0.75)])
    def test_exact_count(self, n, r):
        draw = draw_unusable(PerturbationConfig(r=r), RngStream(n), n, 3)
        assert int((draw.mask.min(axis=1) == 0).sum()) == round(r * n)

    def test_single_view_rejected(self):
        with pytest.raises(PerturbationError):
            draw_unusable(PerturbationConfig(r=0.5), RngStream(0), 10, 1)

    @given(st.integers(1, 40), st.integers(2, 6), st.floats(0, 1), st.integers(0, 2**32))
    def test_never_all_zero(self, n, v, r, seed):
        draw = draw_unusable(PerturbationConfig(r=r), RngStream(seed), n, v)
        assert np.all(draw.mask.sum(axis=1) >= 1)

    def test_masked_rows_zeroed(self):
        batch = batch_of(30, [3, 2, 4])
        out, draw = unusable_perturb(batch, PerturbationConfig(r=0.5), RngStream(5))
        for m, x in enumerate(out):
            dropped = draw.mask[:, m] == 0
            assert not np.any(x[dropped])
            assert np.array_equal(x[~dropped], batch[m][~dropped])

    def test_tensor_input(self):
        batch = [Tensor(x) for x in batch_of(10, [3, 2])]
        out, draw = unusable_perturb(batch, PerturbationConfig(r=0.5), RngStream(5))
        assert isinstance(out[0], Tensor)


class TestResample:
    def test_same_state_same_draw(self):
        a = resample(PerturbationConfig(), RngStream(4), (50, [3, 2]))
        b = resample(PerturbationConfig(), RngStream(4), (50, [3, 2]))
        assert np.array_equal(a.delta, b.delta) and np.array_equal(a.mask, b.mask)

    def test_advanced_state_differs(self):
        rng = RngStream(4)
        a = resample(PerturbationConfig(), rng, (50, [3, 2]))
        b = resample(PerturbationConfig(), rng, (50, [3, 2]))
        assert not np.array_equal(a.delta, b.delta)

    def test_zero_rates_no_change(self):
        draw = resample(PerturbationConfig(p=0.0, r=0.0), RngStream(9), (20, [3, 2]))
        assert not draw.noisy_cells.any() and np.all(draw.mask == 1)
