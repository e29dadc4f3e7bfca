"""Sound-speed map estimation from raw ultrasound channel data."""

from .errors import (SosnetError, ShapeIncompatible, ShapeError,
                     DatasetError, WeightMismatch)
from .model import (ArchConfig, StageInfo, stage_census, SosNet,
                    TransferHead, TransferModel, build_model)
from .train import (TrainConfig, train, transfer_train, infer,
                    save_weights, load_weights, model_from_doc,
                    param_blob_hash)
from .container import read_record, write_record, write_sos, load_manifest

__all__ = [
    "SosnetError", "ShapeIncompatible", "ShapeError", "DatasetError",
    "WeightMismatch", "ArchConfig", "StageInfo", "stage_census", "SosNet",
    "TransferHead", "TransferModel", "build_model", "TrainConfig", "train",
    "transfer_train", "infer", "save_weights", "load_weights",
    "model_from_doc", "param_blob_hash", "read_record", "write_record",
    "write_sos", "load_manifest",
]

__version__ = "0.1.0"
