"""Python interface to the tmclass core.

Configuration arguments take plain dicts; they use the same keys as the
experiment JSON files.
"""

import json

from . import _tmclass
from ._tmclass import (
    UNLABELED,
    Codebook,
    ConfigError,
    Dataset,
    DegenerateInput,
    DegenerateSample,
    DimensionTooSmall,
    FormatError,
    InvalidArgument,
    Model,
    NumericError,
    OutOfDomain,
    classify,
    encode_class,
    load_model,
    read_dataset,
    schedule,
    split,
)

__all__ = [
    "UNLABELED",
    "Codebook",
    "ConfigError",
    "Dataset",
    "DegenerateInput",
    "DegenerateSample",
    "DimensionTooSmall",
    "FormatError",
    "InvalidArgument",
    "Model",
    "NumericError",
    "OutOfDomain",
    "classify",
    "encode_class",
    "evaluate",
    "generate_synthetic",
    "infer",
    "load_model",
    "read_dataset",
    "schedule",
    "split",
    "train",
]


def _dump(d):
    return json.dumps(d) if d else ""


def generate_synthetic(**spec):
    return _tmclass.generate_synthetic(_dump(spec))


def train(dataset, estimator=None, train=None):
    """Returns (model, losses)."""
    return _tmclass.train(dataset, _dump(estimator), _dump(train))


def infer(model, dataset, codebook, num_steps=20, schedule=None):
    return model.infer(dataset, codebook, num_steps, _dump(schedule))


def evaluate(model, dataset, codebook, num_steps=20, schedule=None):
    return json.loads(model.evaluate(dataset, codebook, num_steps, _dump(schedule)))
