"""Hyper-parameter domains: discrete sets, integer ranges, log-uniform float ranges."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Discrete:
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("discrete domain must be non-empty")

    def contains(self, v) -> bool:
        return not isinstance(v, bool) and v in self.values

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]

    def default(self):
        return self.values[0]

    def grid(self) -> tuple:
        return self.values

    def to_dict(self) -> dict:
        return {"kind": "discrete", "values": list(self.values)}


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int

    def __post_init__(self):
        if self.hi < self.lo:
            raise ValueError(f"empty integer range [{self.lo}, {self.hi}]")

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and self.lo <= v <= self.hi

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.lo, self.hi + 1))

    def default(self) -> int:
        return (self.lo + self.hi) // 2

    def grid(self) -> tuple:
        return tuple(range(self.lo, self.hi + 1))

    def to_dict(self) -> dict:
        return {"kind": "int", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo <= self.hi:
            raise ValueError(f"log range needs 0 < lo <= hi, got [{self.lo}, {self.hi}]")

    def contains(self, v) -> bool:
        return isinstance(v, (int, float)) and not isinstance(v, bool) and self.lo <= v <= self.hi

    def sample(self, rng: np.random.Generator) -> float:
        return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))

    def default(self) -> float:
        # midpoint in log space
        return math.sqrt(self.lo * self.hi)

    def grid(self) -> tuple:
        if self.lo == self.hi:
            return (self.lo,)
        return (self.lo, self.default(), self.hi)

    def to_dict(self) -> dict:
        return {"kind": "log", "lo": self.lo, "hi": self.hi}


def domain_from_dict(d: dict):
    if d["kind"] == "discrete":
        return Discrete(tuple(d["values"]))
    if d["kind"] == "int":
        return IntRange(d["lo"], d["hi"])
    return LogUniform(d["lo"], d["hi"])


def default_assignment(domain: dict) -> dict:
    return {name: dom.default() for name, dom in domain.items()}


def sample_assignment(domain: dict, rng: np.random.Generator) -> dict:
    return {name: dom.sample(rng) for name, dom in domain.items()}


def grid_size(domain: dict) -> int:
    size = 1
    for dom in domain.values():
        size *= len(dom.grid())
    return size


def check_assignment(domain: dict, params: dict) -> None:
    missing = [n for n in domain if n not in params]
    extra = [n for n in params if n not in domain]
    if missing or extra:
        raise ValueError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for name, dom in domain.items():
        if not dom.contains(params[name]):
            raise ValueError(f"parameter {name}={params[name]!r} outside its domain {dom}")
