"""Hyperparameter grid for feed-forward architectures and gene <-> config conversion.

A gene is a fixed-length tuple of grid indices laid out as::

    [n_layers, neurons_1 .. neurons_M, dr_method, dr_ratio, quant_bin]

where ``M`` is the maximum hidden-layer count of the space. Neuron slots beyond
the decoded layer count are carried along but ignored by ``decode``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from netsynth.dimreduce import DR_METHOD_IDS, DrConfig, QuantSpec

GRID_TOL = 1e-9

QUANT_BITS = (4, 8, 16, 32)

LAYERS = "layers"
NEURONS = "neurons"
DR_METHOD = "dr_method"
DR_RATIO = "dr_ratio"
QUANT = "quant"
_REQUIRED = (LAYERS, NEURONS, DR_METHOD, DR_RATIO, QUANT)


class GridError(ValueError):
    """Raised for off-grid values, out-of-range indices and invalid bounds."""


@dataclass(frozen=True)
class HyperParam:
    name: str
    lower: float
    upper: float
    step: float
    kind: str = "integer"

    def __post_init__(self):
        if self.kind not in ("integer", "real", "categorical"):
            raise GridError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.step > 0:
            raise GridError(f"{self.name}: step must be positive")
        if self.upper < self.lower:
            raise GridError(f"{self.name}: upper {self.upper} < lower {self.lower}")

    @property
    def size(self) -> int:
        return int(math.floor((self.upper - self.lower) / self.step + GRID_TOL)) + 1

    def value(self, index: int):
        if not 0 <= index < self.size:
            raise GridError(f"{self.name}: index {index} outside [0, {self.size})")
        v = self.lower + index * self.step
        if self.kind == "real":
            return round(v, 10)
        return int(round(v))

    def index(self, value: float) -> int:
        pos = (value - self.lower) / self.step
        idx = int(round(pos))
        if abs(pos - idx) > GRID_TOL * max(1.0, abs(pos)) or not 0 <= idx < self.size:
            raise GridError(f"{self.name}: value {value} is not on the grid "
                            f"[{self.lower}:{self.upper}:{self.step}]")
        return idx

    def to_dict(self) -> dict:
        # floats so that 1 and 1.0 hash the same
        return {"name": self.name, "lower": float(self.lower), "upper": float(self.upper),
                "step": float(self.step), "kind": self.kind}


@dataclass(frozen=True)
class CandidateConfig:
    hidden_layers: int
    neurons: tuple
    dr: DrConfig
    quant: QuantSpec
    connectivity: str = "dense_adjacent"
    # values held by the unused neuron slots; kept so genes roundtrip exactly
    spare_neurons: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if len(self.neurons) != self.hidden_layers:
            raise GridError("len(neurons) must equal hidden_layers")


@dataclass(frozen=True)
class SearchSpace:
    """Per-hyperparameter bounds; immutable once built."""

    params: Mapping[str, HyperParam] = field(default_factory=dict)

    def __post_init__(self):
        missing = [n for n in _REQUIRED if n not in self.params]
        if missing:
            raise GridError(f"search space missing hyperparameters: {missing}")
        # dict copy so later mutation of the caller's mapping cannot leak in
        object.__setattr__(self, "params", dict(self.params))

    @property
    def max_layers(self) -> int:
        return int(round(self.params[LAYERS].upper))

    @property
    def gene_length(self) -> int:
        return 4 + self.max_layers

    def slot_params(self) -> list[HyperParam]:
        """One HyperParam per gene coordinate."""
        p = self.params
        return [p[LAYERS], *([p[NEURONS]] * self.max_layers), p[DR_METHOD], p[DR_RATIO], p[QUANT]]

    @property
    def grid_sizes(self) -> tuple:
        return tuple(h.size for h in self.slot_params())

    @property
    def total_size(self) -> int:
        return math.prod(self.grid_sizes)

    def validate(self, gene: Sequence[int]) -> tuple:
        gene = tuple(int(g) for g in gene)
        if len(gene) != self.gene_length:
            raise GridError(f"gene length {len(gene)} != {self.gene_length}")
        for g, size in zip(gene, self.grid_sizes):
            if not 0 <= g < size:
                raise GridError(f"gene index {g} outside [0, {size})")
        return gene

    def to_dict(self) -> dict:
        return {"hyperparameters": [self.params[n].to_dict() for n in _REQUIRED]}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def general_space() -> SearchSpace:
    """The general FFNN space: 1-6 layers, 50-600 neurons, 11 DR methods, ratio 1-20, 4 bins."""
    return SearchSpace({
        LAYERS: HyperParam(LAYERS, 1, 6, 1, "integer"),
        NEURONS: HyperParam(NEURONS, 50, 600, 25, "integer"),
        DR_METHOD: HyperParam(DR_METHOD, 1, 11, 1, "categorical"),
        DR_RATIO: HyperParam(DR_RATIO, 1.0, 20.0, 0.1, "real"),
        QUANT: HyperParam(QUANT, 1, 4, 1, "categorical"),
    })


def space_from_dict(data: Mapping) -> SearchSpace:
    entries = data.get("hyperparameters", data)
    if isinstance(entries, Mapping):
        entries = [dict(v, name=k) for k, v in entries.items()]
    params = {}
    for e in entries:
        hp = HyperParam(e["name"], float(e["lower"]), float(e["upper"]), float(e["step"]),
                        e.get("kind", "integer"))
        params[hp.name] = hp
    return SearchSpace(params)


def load_space(path) -> SearchSpace:
    """Read a space definition from ``.json`` or ``.toml``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    return space_from_dict(data)


def decode(space: SearchSpace, gene: Sequence[int], dr_seed: int = 0) -> CandidateConfig:
    gene = space.validate(gene)
    p = space.params
    n_layers = p[LAYERS].value(gene[0])
    neurons = tuple(p[NEURONS].value(i) for i in gene[1:1 + n_layers])
    spare = tuple(p[NEURONS].value(i) for i in gene[1 + n_layers:1 + space.max_layers])
    method_id = p[DR_METHOD].value(gene[-3])
    ratio = float(p[DR_RATIO].value(gene[-2]))
    bin_ = p[QUANT].value(gene[-1])
    if not 1 <= bin_ <= len(QUANT_BITS):
        raise GridError(f"quantization bin {bin_} outside 1..{len(QUANT_BITS)}")
    if method_id not in DR_METHOD_IDS:
        raise GridError(f"DR method id {method_id} outside 1..{max(DR_METHOD_IDS)}")
    dr = DrConfig(DR_METHOD_IDS[method_id], ratio, dr_seed, alias=method_id)
    return CandidateConfig(n_layers, neurons, dr, QuantSpec(QUANT_BITS[bin_ - 1]),
                           spare_neurons=spare)


def encode(space: SearchSpace, config: CandidateConfig, fill: int = 0) -> tuple:
    """Inverse of ``decode``.

    Inert neuron slots take ``config.spare_neurons`` when it has the right
    length, otherwise index ``fill``.
    """
    p = space.params
    if config.hidden_layers > space.max_layers:
        raise GridError(f"{config.hidden_layers} hidden layers exceeds max {space.max_layers}")
    slots = [p[NEURONS].index(n) for n in config.neurons]
    n_spare = space.max_layers - len(slots)
    if len(config.spare_neurons) == n_spare:
        slots += [p[NEURONS].index(n) for n in config.spare_neurons]
    else:
        slots += [fill] * n_spare
    method_id = config.dr.alias if config.dr.alias is not None else _method_id(config.dr.method)
    gene = (p[LAYERS].index(config.hidden_layers), *slots, p[DR_METHOD].index(method_id),
            p[DR_RATIO].index(config.dr.ratio), p[QUANT].index(QUANT_BITS.index(config.quant.bits) + 1))
    return space.validate(gene)


def _method_id(method: str) -> int:
    for k, v in DR_METHOD_IDS.items():
        if v == method:
            return k
    raise GridError(f"DR method {method!r} has no grid id")


def restrict(space: SearchSpace, overrides: Mapping[str, Mapping] | None = None) -> SearchSpace:
    """Narrow bounds (and optionally coarsen steps) of selected hyperparameters.

    The new grid must be a subset of the old one: ``lower`` on the old grid,
    ``step`` a multiple of the old step, and bounds never widened.
    """
    if not overrides:
        return space
    params = dict(space.params)
    for name, ov in overrides.items():
        if name not in params:
            raise GridError(f"unknown hyperparameter {name!r}")
        old = params[name]
        new = replace(old, **{k: float(v) for k, v in ov.items() if k in ("lower", "upper", "step")})
        if new.lower < old.lower - GRID_TOL or new.upper > old.upper + GRID_TOL:
            raise GridError(f"{name}: override widens bounds")
        old.index(new.lower)
        ratio = new.step / old.step
        if abs(ratio - round(ratio)) > GRID_TOL:
            raise GridError(f"{name}: step {new.step} is not a multiple of {old.step}")
        # snap upper onto the new grid so sizes are well defined
        params[name] = replace(new, upper=round(new.lower + (new.size - 1) * new.step, 10))
    return SearchSpace(params)
