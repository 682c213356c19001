"""Model file persistence: one JSON document per fitted model."""
from __future__ import annotations

from . import serialize
from .dnn import DnnModel, forward
from .regression import (LogisticModel, PolynomialModel, SvrModel,
                         predict_logistic, predict_mpr, predict_svr)

_KINDS = {
    "mpr": PolynomialModel,
    "logistic": LogisticModel,
    "svr": SvrModel,
    "dnn": DnnModel,
}


class ModelFileError(Exception):
    pass


def save_model(model, path) -> None:
    serialize.dump_file(model.to_dict(), path)


def load_model(path):
    doc = serialize.load_file(path)
    kind = doc.get("kind")
    if kind not in _KINDS:
        raise ModelFileError(f"unknown model kind {kind!r}")
    return _KINDS[kind].from_dict(doc)


def predict(model, x):
    """Glucose estimate(s) in mg/dl from any fitted model."""
    if isinstance(model, PolynomialModel):
        return predict_mpr(model, x)
    if isinstance(model, LogisticModel):
        return predict_logistic(model, x)
    if isinstance(model, SvrModel):
        return predict_svr(model, x)
    if isinstance(model, DnnModel):
        return forward(model, x)
    raise ModelFileError(f"cannot predict with {type(model)!r}")


def model_channels(model):
    return model.channels
