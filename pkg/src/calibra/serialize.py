"""Versioned JSON envelope for models, calibrators and base learners."""

from __future__ import annotations

import json

import numpy as np

from .calibrators import IsotonicCalibrator, PlattCalibrator
from .caltree import PCTCalibrator
from .data import Attribute, Imputer
from .logitboost import AdditiveLogisticModel

FORMAT_VERSION = 1
METHODS = ("pct", "platt", "isotonic")


class FormatError(ValueError):
    pass


def make_calibrator(method: str, attributes, score_kind: str, seed: int = 0):
    if method == "pct":
        return PCTCalibrator(attributes, score_kind, seed)
    if method == "platt":
        return PlattCalibrator(score_kind)
    if method == "isotonic":
        return IsotonicCalibrator(score_kind)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def calibrator_from_dict(d: dict):
    kind = d.get("method")
    if kind == "pct":
        return PCTCalibrator.from_dict(d)
    if kind == "platt":
        return PlattCalibrator.from_dict(d)
    if kind == "isotonic":
        return IsotonicCalibrator.from_dict(d)
    raise FormatError(f"unknown calibrator method {kind!r}")


def learner_to_dict(model) -> dict:
    from .learners import BoostedModel, NaiveBayesModel

    if isinstance(model, NaiveBayesModel):
        return {
            "kind": "nb",
            "attributes": [a.to_dict() for a in model.attributes],
            "log_prior": model.log_prior.tolist(),
            "means": np.where(np.isnan(model.means), 0.0, model.means).tolist(),
            "variances": np.where(np.isnan(model.variances), 1.0, model.variances).tolist(),
            "log_tables": [None if t is None else t.tolist() for t in model.log_tables],
        }
    if isinstance(model, BoostedModel):
        return {"kind": "boosted", "attributes": [a.to_dict() for a in model.attributes],
                "model": model.model.to_dict()}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def learner_from_dict(d: dict):
    from .learners import BoostedModel, NaiveBayesModel

    attrs = tuple(Attribute.from_dict(a) for a in d["attributes"])
    if d["kind"] == "nb":
        return NaiveBayesModel(attrs, np.array(d["log_prior"]), np.array(d["means"]),
                               np.array(d["variances"]),
                               tuple(None if t is None else np.array(t) for t in d["log_tables"]))
    if d["kind"] == "boosted":
        return BoostedModel(attrs, AdditiveLogisticModel.from_dict(d["model"]))
    raise FormatError(f"unknown base learner kind {d['kind']!r}")


def envelope(kind: str, payload: dict) -> dict:
    return {"format_version": FORMAT_VERSION, "kind": kind, **payload}


def dumps(obj: dict) -> str:
    # repr-exact floats and sorted keys keep output byte-deterministic
    return json.dumps(obj, sort_keys=True, indent=1, allow_nan=True)


def save(obj: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def load(path) -> dict:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON ({e})") from None
    check_version(d)
    return d


def check_version(d: dict) -> None:
    v = d.get("format_version") if isinstance(d, dict) else None
    if v is None:
        raise FormatError("missing format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"unsupported format_version {v} (expected {FORMAT_VERSION})")


def pipeline_to_dict(class_names, attributes, imputer: Imputer | None, base, calibrator,
                     score_kind: str) -> dict:
    """Everything ``calibrate`` needs: schema, imputation, base learner and calibrator."""
    return envelope("pipeline", {
        "class_names": list(class_names),
        "attributes": [a.to_dict() for a in attributes],
        "imputer": None if imputer is None else imputer.to_dict(),
        "base": None if base is None else learner_to_dict(base),
        "score_kind": score_kind,
        "calibrator": calibrator.to_dict(),
    })


def model_to_dict(model: AdditiveLogisticModel) -> dict:
    return envelope("additive_model", {"model": model.to_dict()})


def model_from_dict(d: dict) -> AdditiveLogisticModel:
    check_version(d)
    return AdditiveLogisticModel.from_dict(d["model"])
