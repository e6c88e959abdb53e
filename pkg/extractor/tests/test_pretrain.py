"""Pair-list parsing and the backbone pre-training loop."""

import itertools
import json

import numpy as np
import cv2
import pytest
import torch

from vqfeat.errors import ConfigError, DataError
from vqfeat.pretrain import PairwiseImageModel, load_pair_list, pretrain_backbone


def _write_images(root, count, size=48, seed=0):
    """PNG set with a brightness gradient; returns names and a mos map."""
    rng = np.random.default_rng(seed)
    names, mos = [], {}
    for i in range(count):
        level = 40 + (180 * i) // max(count - 1, 1)
        img = np.clip(rng.normal(level, 25, (size, size, 3)), 0, 255)
        name = f"img_{i:02d}.png"
        cv2.imwrite(str(root / name), img.astype(np.uint8))
        names.append(name)
        mos[name] = 1.0 + 4.0 * i / max(count - 1, 1)
    return names, mos


def _pair(a, b, mos, sd_x=0.4, sd_y=0.8):
    return {"image_x": a, "image_y": b, "mos_x": mos[a], "mos_y": mos[b],
            "sd_x": sd_x, "sd_y": sd_y}


def _write_pairs(root, pairs):
    path = root / "pairs.json"
    path.write_text(json.dumps(pairs))
    return path


class TestPairList:
    def test_missing_images_within_budget_are_dropped(self, tmp_path):
        # 100 referenced images, 1 missing: exactly at the 1% budget
        for i in range(99):
            (tmp_path / f"im_{i:03d}.png").write_bytes(b"stub")
        mos = {f"im_{i:03d}.png": float(i % 5 + 1) for i in range(100)}
        pairs = [_pair(f"im_{2 * k:03d}.png", f"im_{2 * k + 1:03d}.png", mos)
                 for k in range(50)]
        path = _write_pairs(tmp_path, pairs)

        kept, dropped = load_pair_list(path)
        assert dropped == 1
        assert len(kept) == 49
        assert all(0.0 < p.p < 1.0 for p in kept)
        assert all(p.g == -1.0 for p in kept)

    def test_missing_images_over_budget_abort(self, tmp_path):
        names, mos = _write_images(tmp_path, 4)
        mos["gone_a.png"] = 2.0
        mos["gone_b.png"] = 3.0
        pairs = [_pair(names[0], names[1], mos),
                 _pair("gone_a.png", "gone_b.png", mos),
                 _pair(names[2], names[3], mos)]
        with pytest.raises(DataError, match="budget"):
            load_pair_list(_write_pairs(tmp_path, pairs))

    def test_equal_sigmas_rejected(self, tmp_path):
        names, mos = _write_images(tmp_path, 2)
        pairs = [_pair(names[0], names[1], mos, sd_x=0.5, sd_y=0.5)]
        with pytest.raises(DataError, match="equal sigmas"):
            load_pair_list(_write_pairs(tmp_path, pairs))

    def test_malformed_entry_names_its_index(self, tmp_path):
        names, mos = _write_images(tmp_path, 2)
        good = _pair(names[0], names[1], mos)
        bad = {k: v for k, v in good.items() if k != "mos_y"}
        with pytest.raises(DataError, match="pair 1"):
            load_pair_list(_write_pairs(tmp_path, [good, bad]))

    def test_unreadable_or_empty_list_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_pair_list(tmp_path / "absent.json")
        with pytest.raises(DataError, match="non-empty"):
            load_pair_list(_write_pairs(tmp_path, []))


class TestPretrain:
    def test_one_epoch_reduces_loss_and_saves_weights(self, tmp_path):
        names, mos = _write_images(tmp_path, 12)
        pairs = [_pair(a, b, mos, sd_x=0.4 + 0.005 * i, sd_y=0.8)
                 for i, (a, b) in enumerate(itertools.combinations(names, 2))]
        pairs = pairs[:60]
        path = _write_pairs(tmp_path, pairs)

        lines = []
        out = tmp_path / "weights.pt"
        summary = pretrain_backbone(path, out, epochs=1, batch_size=10,
                                    lr=1e-4, resolution=48, seed=0,
                                    log=lines.append)

        assert summary["loss_after"] < summary["loss_before"]
        assert summary["pairs"] == 60
        assert summary["dropped_pairs"] == 0
        assert summary["eta"] == 0.025
        assert summary["nu"] == 1.0
        assert summary["resolution"] == 48
        assert "eta 0.025 nu 1.0 resolution 48" in lines[0]

        assert out.is_file()
        state = torch.load(out, weights_only=True)
        model = PairwiseImageModel(seed=3)
        model.load_state_dict(state)

    def test_knob_validation(self, tmp_path):
        path = tmp_path / "pairs.json"
        for kwargs in ({"epochs": 0}, {"batch_size": 0}, {"lr": 0.0},
                       {"resolution": 16}):
            with pytest.raises(ConfigError):
                pretrain_backbone(path, tmp_path / "w.pt", **kwargs)
