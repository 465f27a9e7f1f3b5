"""Run configuration: one JSON document with model, grid, mc and experiment blocks."""
from __future__ import annotations

import json
from dataclasses import dataclass

from jsonschema import Draft202012Validator

CAMPAIGNS = ("strong", "weak", "clt", "density", "variance", "leading", "second")

_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["model", "grid", "mc"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["kind", "params"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["GBM", "OU", "LinearSDE", "ConstDiff"]},
                "params": {"type": "array", "items": {"type": "number"}},
            },
        },
        "grid": {
            "type": "object",
            "required": ["n_list"],
            "additionalProperties": False,
            "properties": {
                "n_list": {"type": "array", "items": _POS_INT, "minItems": 1},
                "m": _POS_INT,
                "T_points": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
            },
        },
        "mc": {
            "type": "object",
            "required": ["M", "seed"],
            "additionalProperties": False,
            "properties": {
                "M": _POS_INT,
                "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
                "pred_M": _POS_INT,
                "pred_n": _POS_INT,
                "pred_m": _POS_INT,
                "workers": _POS_INT,
            },
        },
        "experiment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "campaigns": {"type": "array", "items": {"enum": list(CAMPAIGNS)}},
                "test_functions": {"type": "array",
                                   "items": {"type": "string",
                                             "pattern": r"^(poly:[0-9]+|indicator:-?[0-9.eE+-]+)$"}},
                "p": {"type": "number", "minimum": 1},
                "variant": {"enum": ["corrected", "literal"]},
                "outdir": {"type": "string", "minLength": 1},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` holds (path, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{p or '<root>'}: {m}" for p, m in self.errors))


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass(frozen=True)
class RunConfig:
    kind: str
    params: tuple
    n_list: tuple
    m: int
    T_points: tuple
    M: int
    seed: int
    pred_M: int
    pred_n: int | None
    pred_m: int
    workers: int
    campaigns: tuple
    test_functions: tuple
    p: float
    variant: str
    outdir: str
    raw: dict

    @property
    def model_spec(self) -> tuple:
        return self.kind, self.params


def validate(doc) -> list:
    """itemized (path, message) list; empty when valid"""
    errs = []
    for e in sorted(Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        parts = list(e.absolute_path)
        if e.validator == "required":
            missing = e.message.split("'")[1]
            parts.append(missing)
        errs.append((_path(parts), e.message))
    if not errs:
        from .model import ModelError, builtin_model
        try:
            builtin_model(doc["model"]["kind"], doc["model"]["params"])
        except ModelError as exc:
            errs.append(("model.params", str(exc)))
    return errs


def from_dict(doc: dict) -> RunConfig:
    errs = validate(doc)
    if errs:
        raise ConfigError(errs)
    g, mc, ex = doc["grid"], doc["mc"], doc.get("experiment", {})
    return RunConfig(
        kind=doc["model"]["kind"], params=tuple(float(x) for x in doc["model"]["params"]),
        n_list=tuple(g["n_list"]), m=g.get("m", 16), T_points=tuple(g.get("T_points", [1.0])),
        M=mc["M"], seed=mc["seed"], pred_M=mc.get("pred_M", 4000), pred_n=mc.get("pred_n"),
        pred_m=mc.get("pred_m", 4), workers=mc.get("workers", 1),
        campaigns=tuple(ex.get("campaigns", ["strong", "weak"])),
        test_functions=tuple(ex.get("test_functions", ["poly:2"])), p=float(ex.get("p", 2)),
        variant=ex.get("variant", "corrected"), outdir=ex.get("outdir", "results"), raw=doc)


def parse_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"invalid JSON: {exc}")]) from None
    return from_dict(doc)
