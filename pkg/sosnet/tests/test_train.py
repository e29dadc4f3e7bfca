"""Optimization behavior: overfit sanity, determinism, transfer freezing."""

import time

import numpy as np
import pytest
import torch

from sosnet.container import load_manifest, read_record
from sosnet.errors import DatasetError
from sosnet.model import ArchConfig, SosNet, TransferHead, TransferModel
from sosnet.train import (TrainConfig, load_weights, model_from_doc,
                          param_blob_hash, save_weights, train,
                          transfer_train)

from conftest import write_toy_dataset

DESK_ARCH = ArchConfig(in_shape=(64, 512))


def _normalized_mse(model, paths, cfg):
    model.eval()
    se, n = 0.0, 0
    with torch.no_grad():
        for p in paths:
            rec = read_record(p)
            x = torch.from_numpy(rec.rf).reshape(1, 1, *rec.rf.shape)
            t = (rec.sos - cfg.target_center) / cfg.target_scale
            d = (model(x)[0, 0].double()
                 - torch.from_numpy(t).double()) ** 2
            se += float(d.sum())
            n += int(d.numel())
    return se / n


def test_overfit_eight_records_within_budget(tmp_path):
    t0 = time.time()
    root = write_toy_dataset(tmp_path / "ds", 8, n_train=8, seed=1)
    cfg = TrainConfig(batch_size=1, learning_rate=1e-3, momentum=0.9,
                      epochs=200, stop_at_train_mse=0.01)
    doc, history = train(root, cfg)
    elapsed = time.time() - t0
    assert len(history) <= 200
    first = history[0]["train_mse"]
    assert first > 0.1
    assert history[-1]["train_mse"] <= 0.1 * first
    assert elapsed < 600.0
    assert doc["head_state"] is None
    model = model_from_doc(doc)
    assert isinstance(model, SosNet)


def test_history_has_one_entry_per_epoch(tmp_path):
    root = write_toy_dataset(tmp_path / "ds", 6, in_shape=(64, 512), seed=2)
    cfg = TrainConfig(epochs=3, learning_rate=1e-4)
    _, history = train(root, cfg, arch=DESK_ARCH)
    assert len(history) == 3
    for i, row in enumerate(history):
        assert row["epoch"] == i
        assert np.isfinite(row["train_mse"])
        assert np.isfinite(row["valid_mse"])


def test_zero_learning_rate_freezes_mse(tmp_path):
    root = write_toy_dataset(tmp_path / "ds", 6, in_shape=(64, 512), seed=3)
    cfg = TrainConfig(epochs=4, learning_rate=0.0)
    _, history = train(root, cfg, arch=DESK_ARCH)
    train_mses = [row["train_mse"] for row in history]
    valid_mses = [row["valid_mse"] for row in history]
    assert max(train_mses) - min(train_mses) <= 1e-7
    assert max(valid_mses) - min(valid_mses) <= 1e-7


def test_checkpoint_is_best_valid_epoch(tmp_path):
    root = write_toy_dataset(tmp_path / "ds", 8, in_shape=(64, 512), seed=4)
    cfg = TrainConfig(epochs=5, batch_size=2, learning_rate=1e-3,
                      momentum=0.9)
    doc, history = train(root, cfg, arch=DESK_ARCH)
    _, valid_paths, _ = load_manifest(root)
    best = min(row["valid_mse"] for row in history)
    got = _normalized_mse(model_from_doc(doc), valid_paths, cfg)
    assert got == pytest.approx(best, abs=1e-9)


def test_transfer_keeps_base_parameters_bitwise(tmp_path):
    base_ds = write_toy_dataset(tmp_path / "base", 8, in_shape=(64, 512),
                                seed=5)
    base_doc, _ = train(base_ds, TrainConfig(epochs=2, batch_size=4,
                                             learning_rate=1e-3),
                        arch=DESK_ARCH,
                        out_path=tmp_path / "base.pt")
    small_ds = write_toy_dataset(tmp_path / "small", 48, in_shape=(64, 512),
                                 seed=6)
    train_paths, valid_paths, _ = load_manifest(small_ds)
    assert (len(train_paths), len(valid_paths)) == (43, 5)

    cfg = TrainConfig(transfer_epochs=20, batch_size=10, learning_rate=1e-3,
                      momentum=0.9)
    doc, history = transfer_train(tmp_path / "base.pt", small_ds, cfg,
                                  out_path=tmp_path / "transfer.pt")
    assert len(history) == 20
    for name, tensor in base_doc["state"].items():
        assert torch.equal(tensor, doc["state"][name]), name
    base_a = model_from_doc({**base_doc, "head_state": None})
    base_b = model_from_doc({**doc, "head_state": None})
    assert param_blob_hash(base_a) == param_blob_hash(base_b)
    head_norm = sum(float(t.abs().sum()) for t in doc["head_state"].values())
    assert head_norm > 0.0


def test_zero_head_transfer_matches_base_exactly(tmp_path):
    base_ds = write_toy_dataset(tmp_path / "base", 6, in_shape=(64, 512),
                                seed=7)
    base_doc, _ = train(base_ds, TrainConfig(epochs=1, batch_size=5,
                                             learning_rate=1e-3),
                        arch=DESK_ARCH)
    base = model_from_doc(base_doc)
    tm = TransferModel(base, TransferHead())
    tm.eval()
    base.eval()
    x = torch.randn(2, 1, 64, 512)
    with torch.no_grad():
        assert torch.equal(tm(x), base(x))


def test_weights_round_trip_and_mismatch(tmp_path):
    ds = write_toy_dataset(tmp_path / "ds", 6, in_shape=(64, 512), seed=8)
    doc, _ = train(ds, TrainConfig(epochs=1, batch_size=5,
                                   learning_rate=1e-4),
                   arch=DESK_ARCH, out_path=tmp_path / "w.pt")
    again = load_weights(tmp_path / "w.pt")
    x = torch.randn(1, 1, 64, 512)
    a, b = model_from_doc(doc), model_from_doc(again)
    a.eval()
    b.eval()
    with torch.no_grad():
        assert torch.equal(a(x), b(x))

    from sosnet.errors import WeightMismatch
    (tmp_path / "junk.pt").write_bytes(b"not a weights file")
    with pytest.raises(WeightMismatch):
        load_weights(tmp_path / "junk.pt")
    import dataclasses
    narrow = ArchConfig(widths=(16, 16, 16, 32, 32, 64, 64))
    wrong = {**again, "arch": dataclasses.asdict(narrow)}
    with pytest.raises(WeightMismatch):
        model_from_doc(wrong)


def test_train_rejects_bad_records(tmp_path):
    root = write_toy_dataset(tmp_path / "ds", 6, in_shape=(64, 512), seed=9)
    with pytest.raises(DatasetError):
        train(root, TrainConfig(epochs=1))  # default arch wants 128x1024
    with pytest.raises(DatasetError):
        train(tmp_path / "nowhere", TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="mae")
    with pytest.raises(ValueError):
        TrainConfig(optimizer="adam")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
