"""Pooling parity against the training package's float64 reference."""

import numpy as np
import torch
import pytest

from bvqa.featureio import gap_gsp_pool

from vqfeat.errors import DataError
from vqfeat.pooling import gap_gsp


class TestParity:
    def test_float32_within_1e5(self):
        rng = np.random.default_rng(17)
        shapes = [(4, 3, 5, 7), (2, 2, 2, 2048), (6, 1, 1, 64), (1, 9, 4, 16)]
        for t, h, w, c in shapes:
            act = rng.normal(scale=3.0, size=(t, h, w, c)).astype(np.float32)
            ours = gap_gsp(torch.from_numpy(act).permute(0, 3, 1, 2)).numpy()
            reference = gap_gsp_pool(act)
            assert ours.shape == (t, 2 * c)
            assert np.max(np.abs(ours - reference)) < 1e-5

    def test_float64_matches_tightly(self):
        rng = np.random.default_rng(18)
        act = rng.normal(size=(3, 4, 5, 6))
        ours = gap_gsp(torch.from_numpy(act).permute(0, 3, 1, 2)).numpy()
        assert np.max(np.abs(ours - gap_gsp_pool(act))) < 1e-12

    def test_single_position_std_is_zero(self):
        act = torch.randn(5, 7, 1, 1)
        pooled = gap_gsp(act)
        assert torch.all(pooled[:, 7:] == 0.0)
        assert torch.equal(pooled[:, :7], act[:, :, 0, 0])

    def test_constant_map_std_is_zero(self):
        act = torch.full((2, 3, 4, 4), 1.25)
        pooled = gap_gsp(act)
        assert torch.all(pooled[:, 3:] == 0.0)
        assert torch.all(pooled[:, :3] == 1.25)


class TestValidation:
    def test_wrong_rank_rejected(self):
        with pytest.raises(DataError, match="expected"):
            gap_gsp(torch.zeros(3, 4, 5))

    def test_empty_extent_rejected(self):
        with pytest.raises(DataError, match="empty"):
            gap_gsp(torch.zeros(0, 3, 4, 4))
