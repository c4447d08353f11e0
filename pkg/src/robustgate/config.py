"""Experiment configuration and run records for the command-line front end."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .convexstep import ConstraintSet
from .dynamics import GATES
from .errors import ValidationError
from .scp import ScpConfig
from .uncertainty import TRADEOFF_BOXES, BoxUncertainty

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "gate": "identity",
    "T": 2.0,
    "N": 10,
    "omega_bar": [1.0, 2.0],
    "half_widths": [0.01, 0.20],
    "boxes": None,
    "batch": None,
    "constraints": {},
    "scp": {"max_iter": 20000},
    "stage_scp": {},
    "train_counts": [5, 5],
    "eval_counts": [21, 21],
    "heatmap_resolution": [21, 21],
    "nominal_target": 0.999,
    "nominal_max_iter": 5000,
    "noise": {},
    "seed": 0,
    "output_dir": "runs/latest",
}

NOISE_DEFAULTS = {
    "sigmas": [0.001, 0.02],
    "tau_over_T": [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4],
    "mc_paths": 2000,
    "base_M": 80,
    "max_M": 1024,
}


def _pair(v, name, kind=float):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ValidationError(f"{name} must be a pair, got {v!r}")
    try:
        return tuple(kind(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: {exc}") from None


def _number(v, name, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{name} must be a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ValidationError(f"{name} must be an integer, got {v!r}")
    return kind(v)


def _scp_config(d: dict, name: str) -> ScpConfig:
    known = {f.name for f in fields(ScpConfig)}
    extra = set(d) - known
    if extra:
        raise ValidationError(f"unknown {name} keys {sorted(extra)}")
    return ScpConfig(**d)


def _constraints(d: dict) -> ConstraintSet:
    known = {"box", "slew", "area", "linear", "fluence", "balls"}
    extra = set(d) - known
    if extra:
        raise ValidationError(f"unknown constraint keys {sorted(extra)}")
    kw = dict(d)
    if kw.get("box") is not None:
        kw["box"] = _pair(kw["box"], "constraints.box")
    if kw.get("linear") is not None:
        kw["linear"] = tuple(kw["linear"])
    kw["balls"] = tuple(tuple(b) for b in kw.get("balls", ()))
    return ConstraintSet(**kw)


@dataclass
class NoiseSpec:
    sigmas: tuple
    tau_over_T: tuple
    mc_paths: int
    base_M: int
    max_M: int


@dataclass
class ExperimentConfig:
    """Validated experiment settings; ``raw`` keeps the JSON document it came from."""

    gate: str
    T: float
    N: int
    omega_bar: tuple
    half_widths: tuple
    boxes: dict
    batch: list
    constraints: ConstraintSet
    scp: ScpConfig
    stage_scp: ScpConfig
    train_counts: tuple
    eval_counts: tuple
    heatmap_resolution: tuple
    nominal_target: float
    nominal_max_iter: int
    noise: NoiseSpec
    seed: int
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def box(self) -> BoxUncertainty:
        return BoxUncertainty(self.omega_bar, self.half_widths)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {version!r}")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        d = copy.deepcopy(DEFAULTS)
        d.update(copy.deepcopy(doc))
        d["schema_version"] = SCHEMA_VERSION

        gate = d["gate"]
        if gate not in GATES:
            raise ValidationError(f"unknown gate {gate!r}; choose from {sorted(GATES)}")
        T = _number(d["T"], "T")
        N = _number(d["N"], "N", int)
        if not (T > 0 and math.isfinite(T)):
            raise ValidationError(f"T must be finite and > 0, got {T}")
        if N < 1:
            raise ValidationError(f"N must be >= 1, got {N}")
        omega_bar = _pair(d["omega_bar"], "omega_bar")
        half_widths = _pair(d["half_widths"], "half_widths")
        BoxUncertainty(omega_bar, half_widths)

        boxes = d["boxes"]
        if boxes is not None:
            if isinstance(boxes, list):
                bad = [b for b in boxes if b not in TRADEOFF_BOXES]
                if bad:
                    raise ValidationError(f"unknown box labels {bad}; choose from {sorted(TRADEOFF_BOXES)}")
                boxes = {b: TRADEOFF_BOXES[b].half_widths for b in boxes}
            if not isinstance(boxes, dict) or not boxes:
                raise ValidationError("boxes must be a non-empty list of labels or label -> half_widths mapping")
            boxes = {str(k): _pair(v, f"boxes.{k}") for k, v in boxes.items()}
            for v in boxes.values():
                BoxUncertainty(omega_bar, v)

        batch = d["batch"]
        if batch is not None:
            if not isinstance(batch, list) or not batch:
                raise ValidationError("batch must be a non-empty list")
            rows = []
            for i, b in enumerate(batch):
                if not isinstance(b, dict) or set(b) - {"gate", "N", "T"}:
                    raise ValidationError(f"batch[{i}] must hold only gate, N and T")
                g = b.get("gate", gate)
                if g not in GATES:
                    raise ValidationError(f"batch[{i}]: unknown gate {g!r}")
                n = _number(b.get("N", N), f"batch[{i}].N", int)
                t = _number(b.get("T", T), f"batch[{i}].T")
                if n < 1 or not t > 0:
                    raise ValidationError(f"batch[{i}]: need N >= 1 and T > 0")
                rows.append((g, n, t))
            batch = rows

        counts = {}
        for key, lowest in (("train_counts", 1), ("eval_counts", 2), ("heatmap_resolution", 2)):
            c = _pair(d[key], key, int)
            if min(c) < lowest:
                raise ValidationError(f"{key} must be >= {lowest} per axis, got {list(c)}")
            counts[key] = c

        target = _number(d["nominal_target"], "nominal_target")
        if not 0 < target < 1:
            raise ValidationError("nominal_target must lie in (0, 1)")
        nmax = _number(d["nominal_max_iter"], "nominal_max_iter", int)
        if nmax < 1:
            raise ValidationError("nominal_max_iter must be >= 1")

        nd = dict(NOISE_DEFAULTS)
        if not isinstance(d["noise"], dict) or set(d["noise"]) - set(NOISE_DEFAULTS):
            raise ValidationError(f"noise must be an object with keys from {sorted(NOISE_DEFAULTS)}")
        nd.update(d["noise"])
        sigmas = tuple(_number(s, "noise.sigmas") for s in nd["sigmas"])
        ratios = tuple(_number(r, "noise.tau_over_T") for r in nd["tau_over_T"])
        if not sigmas or min(sigmas) < 0:
            raise ValidationError("noise.sigmas must be a non-empty list of values >= 0")
        if not ratios or min(ratios) <= 0:
            raise ValidationError("noise.tau_over_T must be a non-empty list of positive values")
        noise = NoiseSpec(sigmas, ratios, _number(nd["mc_paths"], "noise.mc_paths", int),
                          _number(nd["base_M"], "noise.base_M", int), _number(nd["max_M"], "noise.max_M", int))
        if noise.mc_paths < 2:
            raise ValidationError("noise.mc_paths must be >= 2")
        if noise.base_M < 1 or noise.max_M < N:
            raise ValidationError("noise.base_M must be >= 1 and noise.max_M >= N")

        seed = _number(d["seed"], "seed", int)
        if seed < 0:
            raise ValidationError("seed must be >= 0")
        for key in ("constraints", "scp", "stage_scp"):
            if not isinstance(d[key], dict):
                raise ValidationError(f"{key} must be an object")
        cfg = cls(gate, T, N, omega_bar, half_widths, boxes or {}, batch or [], _constraints(d["constraints"]),
                  _scp_config(d["scp"], "scp"), _scp_config(d["stage_scp"], "stage_scp"),
                  counts["train_counts"], counts["eval_counts"], counts["heatmap_resolution"],
                  target, nmax, noise, seed, str(d["output_dir"]), d)
        # constraint/trust settings are checked against a zero field up front
        cfg.scp.radii(np.zeros(N))
        cfg.stage_scp.radii(np.zeros(N))
        return cfg


def set_path(doc: dict, key: str, value) -> None:
    """Set ``a.b.c`` in nested dicts, creating intermediate objects."""
    parts = key.split(".")
    if not all(parts):
        raise ValidationError(f"bad override key {key!r}")
    node = doc
    for p in parts[:-1]:
        nxt = node.get(p)
        if nxt is None:
            nxt = node[p] = {}
        if not isinstance(nxt, dict):
            raise ValidationError(f"override {key!r}: {p!r} is not an object")
        node = nxt
    node[parts[-1]] = value


def parse_override(text: str):
    """``key=value`` with ``value`` read as JSON when possible, else as a string."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValidationError(f"override must look like key=value, got {text!r}")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def load_config(path, overrides=(), seed=None, out=None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    for item in overrides:
        set_path(doc, *parse_override(item))
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["output_dir"] = str(out)
    return ExperimentConfig.from_dict(doc)


@dataclass
class RunRecord:
    """Everything a run produced; non-finite numbers are stored as ``None``."""

    command: str
    config: dict
    history: list = field(default_factory=list)
    report: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))
