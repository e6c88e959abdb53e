"""Pairwise pre-training: preference probabilities, fidelity and hinge losses."""

import math

import numpy as np
import pytest
from conftest import naive_fidelity, naive_pair_probability

from bvqa import autodiff as ad
from bvqa.errors import DataError, NumericError
from bvqa.featureio import write_tensor
from bvqa.gradcheck import max_relative_error, numeric_gradient
from bvqa.pretrain import (
    PairSample,
    PairwiseQualityModel,
    fidelity_loss,
    load_pair_list,
    pair_probability,
    pretrain_batch_loss,
    sample_pairs,
    save_pair_list,
    std_hinge_loss,
)


class TestPairProbability:
    def test_matches_erf_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            mx, my = rng.normal(size=2) * 3
            sx, sy = rng.uniform(0.1, 2.0, size=2)
            assert abs(pair_probability(mx, my, sx, sy)
                       - naive_pair_probability(mx, my, sx, sy)) < 1e-14

    def test_worked_value_unit_gap_unit_variance(self):
        # mu gap 1, sigma_x = sigma_y = sqrt(1/2): argument is exactly 1
        p = pair_probability(1.0, 0.0, math.sqrt(0.5), math.sqrt(0.5))
        assert abs(p - 0.8413447460685429) < 1e-15
        assert abs(p - 0.841345) < 5e-6

    def test_complement_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            mx, my = rng.normal(size=2)
            sx, sy = rng.uniform(0.05, 3.0, size=2)
            total = pair_probability(mx, my, sx, sy) + pair_probability(my, mx, sy, sx)
            assert abs(total - 1.0) < 1e-12

    def test_equal_means_give_half(self):
        assert abs(pair_probability(2.0, 2.0, 0.3, 0.9) - 0.5) < 1e-15

    def test_scaling_ambiguity(self):
        # scaling mu and sigma jointly by rho > 0 leaves p unchanged
        rng = np.random.default_rng(2)
        for _ in range(100):
            mx, my = rng.normal(size=2)
            sx, sy = rng.uniform(0.05, 2.0, size=2)
            rho = rng.uniform(0.01, 100.0)
            p0 = pair_probability(mx, my, sx, sy)
            p1 = pair_probability(rho * mx, rho * my, rho * sx, rho * sy)
            assert abs(p0 - p1) < 1e-10

    def test_both_sigmas_zero_rejected(self):
        with pytest.raises(NumericError):
            pair_probability(1.0, 0.0, 0.0, 0.0)

    def test_tensor_path_matches_float_path(self):
        args = (0.7, -0.2, 0.4, 1.1)
        t = pair_probability(*[ad.constant(a) for a in args])
        assert abs(float(t.data) - pair_probability(*args)) < 1e-15


class TestFidelityLoss:
    def test_frozen_worked_example(self):
        p = pair_probability(1.0, 0.0, math.sqrt(0.5), math.sqrt(0.5))
        val = fidelity_loss(p, 0.5)
        assert abs(val - 0.06975578489824613) < 1e-14
        # the value quoted alongside the worked example used a 4-digit input
        assert abs(val - 0.06973) < 5e-5

    def test_grid_nonnegative_zero_only_on_diagonal(self):
        grid = [i / 20.0 for i in range(21)]
        for p in grid:
            for q in grid:
                val = fidelity_loss(p, q)
                assert val >= -1e-12
                if p == q:
                    assert abs(val) < 1e-12
                else:
                    assert val > 1e-12

    def test_matches_naive_formula(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            p, q = rng.uniform(0, 1, size=2)
            assert abs(fidelity_loss(p, q) - naive_fidelity(p, q)) < 1e-14

    def test_complement_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            p, q = rng.uniform(0, 1, size=2)
            assert abs(fidelity_loss(p, q) - fidelity_loss(1 - p, 1 - q)) < 1e-12

    def test_symmetric_in_arguments(self):
        assert abs(fidelity_loss(0.2, 0.9) - fidelity_loss(0.9, 0.2)) < 1e-15

    def test_endpoints_finite_forward_and_backward(self):
        # p in {0, 1} puts a radicand at 0; backward must stay finite
        q = ad.parameter(np.array([0.3, 0.8]))
        loss = ad.tensor_sum(fidelity_loss(ad.constant([0.0, 1.0]), q))
        ad.backward(loss)
        assert np.all(np.isfinite(q.grad))

    def test_out_of_range_rejected(self):
        with pytest.raises(NumericError):
            fidelity_loss(1.1, 0.5)
        with pytest.raises(NumericError):
            fidelity_loss(0.5, -0.1)
        # a hair of rounding slack is tolerated
        assert fidelity_loss(1.0 + 1e-12, 1.0) < 1e-6


class TestStdHinge:
    def test_zero_when_margin_satisfied(self):
        # true sigma_x > sigma_y, predicted gap comfortably above eta
        loss = std_hinge_loss(0.9, 0.4, ad.constant(1.0), ad.constant(0.5))
        assert float(loss.data) == 0.0

    def test_linear_when_violated(self):
        # g = +1, predicted gap -0.1 -> eta + 0.1
        loss = std_hinge_loss(0.9, 0.4, ad.constant(0.4), ad.constant(0.5))
        assert abs(float(loss.data) - (0.025 + 0.1)) < 1e-15

    def test_sign_flips_with_true_order(self):
        a = std_hinge_loss(0.4, 0.9, ad.constant(0.5), ad.constant(0.4))
        # g = -1, gap +0.1 -> eta + 0.1
        assert abs(float(a.data) - 0.125) < 1e-15

    def test_equal_true_sigmas_rejected(self):
        with pytest.raises(DataError, match="filtered"):
            std_hinge_loss(0.5, 0.5, ad.constant(1.0), ad.constant(0.5))

    def test_gradient_only_through_predictions(self):
        sx = ad.parameter(np.array(0.4))
        sy = ad.parameter(np.array(0.5))
        ad.backward(std_hinge_loss(0.9, 0.4, sx, sy))
        assert float(sx.grad) == -1.0 and float(sy.grad) == 1.0


class TestModelAndBatchLoss:
    def _toy_batch(self, rng, n=5, dim=6):
        batch = []
        for i in range(n):
            batch.append(
                PairSample.from_truth(
                    rng.normal(size=dim),
                    rng.normal(size=dim),
                    rng.normal(),
                    rng.normal(),
                    rng.uniform(0.2, 1.0),
                    rng.uniform(1.1, 2.0),
                    id_x=f"x{i}",
                    id_y=f"y{i}",
                )
            )
        return batch

    def test_sigma_strictly_positive_even_for_extreme_inputs(self):
        model = PairwiseQualityModel.init(4, hidden_dims=(3,), seed=0)
        feats = np.array([[1e3, -1e3, 1e3, -1e3], [0.0, 0.0, 0.0, 0.0]])
        _, sigma = model.forward(feats)
        assert np.all(sigma.data > 0.0)

    def test_batch_loss_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        model = PairwiseQualityModel.init(6, hidden_dims=(4, 3), seed=1)
        batch = self._toy_batch(rng)
        params = model.parameters()
        names = sorted(params)

        loss, _ = pretrain_batch_loss(batch, model)
        ad.backward(loss)
        ad_grads = [params[n].grad.copy() for n in names]

        arrays = [params[n].data.copy() for n in names]

        def scalar_fn(*arrs):
            for n, a in zip(names, arrs):
                params[n].data = a
            with ad.no_record():
                val, _ = pretrain_batch_loss(batch, model)
            return float(val.data)

        fd_grads = numeric_gradient(scalar_fn, arrays)
        worst = max(
            max_relative_error(a, f) for a, f in zip(ad_grads, fd_grads)
        )
        assert worst < 1e-4

    def test_nu_zero_removes_hinge_gradient(self):
        rng = np.random.default_rng(6)
        model = PairwiseQualityModel.init(6, hidden_dims=(4,), seed=2)
        batch = self._toy_batch(rng)
        params = model.parameters()

        loss_nu0, parts = pretrain_batch_loss(batch, model, nu=0.0)
        assert float(loss_nu0.data) == parts["fidelity"]
        ad.backward(loss_nu0)
        g_nu0 = {n: p.grad.copy() for n, p in params.items()}
        for p in params.values():
            p.grad = None

        # fidelity-only loss, built explicitly
        feats_x = np.stack([s.feat_x for s in batch])
        feats_y = np.stack([s.feat_y for s in batch])
        mu_x, sig_x = model.forward(feats_x)
        mu_y, sig_y = model.forward(feats_y)
        p_w = pair_probability(mu_x, mu_y, sig_x, sig_y)
        fid = ad.tensor_mean(
            fidelity_loss(ad.constant(np.array([s.p for s in batch])), p_w)
        )
        ad.backward(fid)
        for n, p in params.items():
            assert np.array_equal(g_nu0[n], p.grad), n

    def test_loss_components_consistent(self):
        rng = np.random.default_rng(7)
        model = PairwiseQualityModel.init(6, hidden_dims=(4,), seed=3)
        batch = self._toy_batch(rng)
        loss, parts = pretrain_batch_loss(batch, model, nu=1.0)
        assert abs(float(loss.data) - (parts["fidelity"] + parts["hinge"])) < 1e-12

    def test_pair_sample_derives_p_and_g(self):
        s = PairSample.from_truth(
            np.zeros(3), np.zeros(3), 1.0, 0.0, math.sqrt(0.5), math.sqrt(0.5) * 2
        )
        assert s.g == -1.0
        assert abs(s.p - naive_pair_probability(1.0, 0.0, s.sigma_x, s.sigma_y)) < 1e-14

    def test_equal_sigma_pair_rejected_at_construction(self):
        with pytest.raises(DataError):
            PairSample.from_truth(np.zeros(3), np.zeros(3), 1.0, 0.0, 0.5, 0.5)


class TestPairListIO:
    def test_round_trip_recomputes_probability(self, tmp_path):
        rng = np.random.default_rng(8)
        meta = []
        for i in range(3):
            fx, fy = rng.normal(size=4), rng.normal(size=4)
            write_tensor(tmp_path / f"x{i}.bvqf", fx.astype(np.float32))
            write_tensor(tmp_path / f"y{i}.bvqf", fy.astype(np.float32))
            meta.append(
                {
                    "id_x": f"x{i}",
                    "id_y": f"y{i}",
                    "mu_x": float(rng.normal()),
                    "mu_y": float(rng.normal()),
                    "sigma_x": float(rng.uniform(0.2, 1.0)),
                    "sigma_y": float(rng.uniform(1.1, 2.0)),
                    "feat_x_path": f"x{i}.bvqf",
                    "feat_y_path": f"y{i}.bvqf",
                }
            )
        path = tmp_path / "pairs.json"
        save_pair_list(meta, path)
        pairs = load_pair_list(path)
        assert len(pairs) == 3
        for rec, pair in zip(meta, pairs):
            expected = naive_pair_probability(
                rec["mu_x"], rec["mu_y"], rec["sigma_x"], rec["sigma_y"]
            )
            assert abs(pair.p - expected) < 1e-12
            # float32 feature round trip
            assert pair.feat_x.dtype == np.float64

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "pairs.json"
        path.write_text('[{"id_x": "a"}]')
        with pytest.raises(DataError, match="missing field"):
            load_pair_list(path)


class TestPairSampler:
    def _items(self):
        rng = np.random.default_rng(9)
        items = []
        for i in range(30):
            items.append(
                {
                    "id": f"v{i}",
                    "mu": float(rng.normal()),
                    "sigma": float(rng.uniform(0.1, 1.0)),
                    "database_id": "a" if i < 15 else "b",
                }
            )
        return items

    def test_within_database_default(self):
        items = self._items()
        pairs = sample_pairs(items, 100, seed=0)
        for i, j in pairs:
            assert items[i]["database_id"] == items[j]["database_id"]
            assert items[i]["sigma"] != items[j]["sigma"]

    def test_cross_database_when_disabled(self):
        items = self._items()
        pairs = sample_pairs(items, 200, seed=0, within_database=False)
        assert any(
            items[i]["database_id"] != items[j]["database_id"] for i, j in pairs
        )

    def test_deterministic(self):
        items = self._items()
        assert sample_pairs(items, 50, seed=4) == sample_pairs(items, 50, seed=4)
