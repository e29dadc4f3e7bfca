"""Training, transfer training, and inference over container datasets.

Targets are normalized to (sos - target_center) / target_scale before the
loss, so reported MSE values are in normalized units; inference inverts
the normalization and the factors travel inside the weights file. Sample
order is drawn from a generator seeded per epoch, so a fixed config
reproduces the same run exactly.
"""

import copy
import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .container import read_record, load_manifest, write_sos
from .errors import DatasetError, ShapeError, WeightMismatch
from .model import ArchConfig, SosNet, TransferHead, TransferModel

WEIGHTS_FORMAT = 1


@dataclass(frozen=True)
class TrainConfig:
    """Optimization protocol; all fields overridable."""

    loss: str = "mse"
    optimizer: str = "sgd"
    batch_size: int = 10
    learning_rate: float = 1e-4
    momentum: float = 0.0
    epochs: int = 100
    transfer_epochs: int = 20
    split: float = 0.9
    seed: int = 0
    target_center: float = 1500.0
    target_scale: float = 100.0
    stop_at_train_mse: Optional[float] = None

    def __post_init__(self):
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.optimizer != "sgd":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.transfer_epochs < 1:
            raise ValueError("batch_size and epoch counts must be positive")
        if self.target_scale == 0.0:
            raise ValueError("target_scale must be nonzero")


def _load_pairs(paths: Sequence[Path], arch: ArchConfig,
                cfg: TrainConfig) -> Tuple[torch.Tensor, torch.Tensor]:
    xs, ts = [], []
    for p in paths:
        rec = read_record(p)
        rf, sos = rec.rf, rec.sos
        if sos is None:
            raise DatasetError(f"record {p} has no sos tensor")
        if tuple(rf.shape) != arch.in_shape:
            raise DatasetError(
                f"record {p}: rf shape {tuple(rf.shape)} != model input "
                f"{arch.in_shape}")
        if tuple(sos.shape) != arch.out_shape:
            raise DatasetError(
                f"record {p}: sos shape {tuple(sos.shape)} != model output "
                f"{arch.out_shape}")
        xs.append(rf)
        ts.append((sos - cfg.target_center) / cfg.target_scale)
    x = torch.from_numpy(np.stack(xs).astype(np.float32)).unsqueeze(1)
    t = torch.from_numpy(np.stack(ts).astype(np.float32)).unsqueeze(1)
    return x, t


def _mse(model: nn.Module, x: torch.Tensor, t: torch.Tensor,
         batch: int) -> float:
    model.eval()
    se, n = 0.0, 0
    with torch.no_grad():
        for s in range(0, x.shape[0], batch):
            out = model(x[s:s + batch])
            d = (out.double() - t[s:s + batch].double()) ** 2
            se += float(d.sum())
            n += int(d.numel())
    return se / n


def _fit(model: nn.Module, trainable, x_tr, t_tr, x_va, t_va,
         cfg: TrainConfig, epochs: int) -> Tuple[dict, List[dict]]:
    opt = torch.optim.SGD(list(trainable), lr=cfg.learning_rate,
                          momentum=cfg.momentum)
    n = x_tr.shape[0]
    history: List[dict] = []
    best_key = float("inf")
    best_state = copy.deepcopy(model.state_dict())
    for epoch in range(epochs):
        g = torch.Generator().manual_seed(cfg.seed + epoch + 1)
        order = torch.randperm(n, generator=g)
        model.train()
        se, count = 0.0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            out = model(x_tr[idx])
            loss = torch.mean((out - t_tr[idx]) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            d = (out.detach().double() - t_tr[idx].double()) ** 2
            se += float(d.sum())
            count += int(d.numel())
        train_mse = se / count
        valid_mse = (_mse(model, x_va, t_va, cfg.batch_size)
                     if x_va is not None else None)
        history.append({"epoch": epoch, "train_mse": train_mse,
                        "valid_mse": valid_mse})
        key = valid_mse if valid_mse is not None else train_mse
        if key < best_key:
            best_key = key
            best_state = copy.deepcopy(model.state_dict())
        if (cfg.stop_at_train_mse is not None
                and train_mse <= cfg.stop_at_train_mse):
            break
    return best_state, history


def _weights_doc(arch: ArchConfig, cfg: TrainConfig, state: dict,
                 head_state: Optional[dict], history: List[dict]) -> dict:
    return {
        "format": WEIGHTS_FORMAT,
        "arch": asdict(arch),
        "norm": {"center": cfg.target_center, "scale": cfg.target_scale},
        "state": state,
        "head_state": head_state,
        "history": history,
    }


def save_weights(doc: dict, path) -> Path:
    out = Path(path)
    torch.save(doc, out)
    return out


def load_weights(path) -> dict:
    try:
        doc = torch.load(Path(path), map_location="cpu")
    except Exception as e:
        raise WeightMismatch(f"cannot load weights {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != WEIGHTS_FORMAT:
        raise WeightMismatch(f"{path} is not a recognized weights file")
    return doc


def model_from_doc(doc: dict) -> nn.Module:
    """Rebuild the stored model: bare network, or frozen base plus head."""
    arch = ArchConfig(**{k: tuple(v) if isinstance(v, list) else v
                         for k, v in doc["arch"].items()})
    base = SosNet(arch)
    try:
        base.load_state_dict(doc["state"])
    except (RuntimeError, KeyError) as e:
        raise WeightMismatch(f"weights do not fit the architecture: {e}") from e
    if doc.get("head_state") is None:
        return base
    head = TransferHead()
    try:
        head.load_state_dict(doc["head_state"])
    except (RuntimeError, KeyError) as e:
        raise WeightMismatch(f"head weights do not fit: {e}") from e
    return TransferModel(base, head)


def param_blob_hash(module: nn.Module) -> str:
    """Order-stable digest of every parameter tensor's exact bytes."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def train(dataset_dir, cfg: TrainConfig = TrainConfig(),
          arch: Optional[ArchConfig] = None,
          out_path=None) -> Tuple[dict, List[dict]]:
    """Fit a fresh network on the dataset's manifest split; the returned
    weights are the checkpoint with the best validation MSE (training
    MSE stands in when the manifest has no validation records)."""
    arch = arch or ArchConfig()
    train_paths, valid_paths, _ = load_manifest(dataset_dir)
    if not train_paths:
        raise DatasetError(f"manifest under {dataset_dir} assigns no "
                           "records to the train split")
    x_tr, t_tr = _load_pairs(train_paths, arch, cfg)
    x_va, t_va = (None, None)
    if valid_paths:
        x_va, t_va = _load_pairs(valid_paths, arch, cfg)
    torch.manual_seed(cfg.seed)
    model = SosNet(arch)
    state, history = _fit(model, model.parameters(), x_tr, t_tr, x_va, t_va,
                          cfg, cfg.epochs)
    doc = _weights_doc(arch, cfg, state, None, history)
    if out_path is not None:
        save_weights(doc, out_path)
    return doc, history


def transfer_train(base_weights, dataset_dir,
                   cfg: TrainConfig = TrainConfig(),
                   out_path=None) -> Tuple[dict, List[dict]]:
    """Train only the residual head on a small dataset; base parameters
    stay bitwise identical."""
    base_doc = load_weights(base_weights) if not isinstance(base_weights, dict) \
        else base_weights
    base = model_from_doc({**base_doc, "head_state": None})
    arch = base.cfg
    train_paths, valid_paths, _ = load_manifest(dataset_dir)
    if not train_paths:
        raise DatasetError(f"manifest under {dataset_dir} assigns no "
                           "records to the train split")
    x_tr, t_tr = _load_pairs(train_paths, arch, cfg)
    x_va, t_va = (None, None)
    if valid_paths:
        x_va, t_va = _load_pairs(valid_paths, arch, cfg)
    torch.manual_seed(cfg.seed)
    head = TransferHead()
    model = TransferModel(base, head)
    before = param_blob_hash(model.base)
    state, history = _fit(model, head.parameters(), x_tr, t_tr, x_va, t_va,
                          cfg, cfg.transfer_epochs)
    model.load_state_dict(state)
    after = param_blob_hash(model.base)
    if after != before:
        raise WeightMismatch("base parameters changed during transfer")
    doc = _weights_doc(arch, cfg, model.base.state_dict(),
                       model.head.state_dict(), history)
    if out_path is not None:
        save_weights(doc, out_path)
    return doc, history


def infer(record_paths: Sequence, weights, out_dir) -> List[Path]:
    """Predict one map file per input record, same stem, order-stable."""
    doc = load_weights(weights) if not isinstance(weights, dict) else weights
    model = model_from_doc(doc)
    arch = model.cfg if isinstance(model, SosNet) else model.base.cfg
    center = float(doc["norm"]["center"])
    scale = float(doc["norm"]["scale"])
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    model.eval()
    written: List[Path] = []
    for path in [Path(p) for p in record_paths]:
        rec = read_record(path)
        rf = rec.rf
        if tuple(rf.shape) != arch.in_shape:
            raise ShapeError(
                f"{path}: rf shape {tuple(rf.shape)} != model input "
                f"{arch.in_shape}")
        x = torch.from_numpy(rf.astype(np.float32)).reshape(1, 1, *rf.shape)
        with torch.no_grad():
            y = model(x)
        values = y[0, 0].numpy() * scale + center
        res, origin = rec.sos_geometry()
        out = out_root / path.name
        if out.resolve() == path.resolve():
            raise DatasetError(f"output {out} would overwrite its input")
        write_sos(values, out, res, origin,
                  meta={"source": path.name, "estimator": "sosnet"})
        written.append(out)
    return written
