"""
Phase-space point types
Coordinates are (x, tau, y1, y2); tangent components are in the chart basis
"""

from dataclasses import dataclass
from typing import Iterator, List, Sequence

import numpy as np


def reduce_periodic(q: np.ndarray, tau_period: float, torus_sides: Sequence[float]) -> np.ndarray:
    """Copy of (..., 4) chart positions with tau, y1, y2 taken modulo their periods"""
    out = np.array(q, dtype=float)
    out[..., 1] = np.mod(out[..., 1], tau_period)
    out[..., 2] = np.mod(out[..., 2], torus_sides[0])
    out[..., 3] = np.mod(out[..., 3], torus_sides[1])
    return out


@dataclass(frozen=True)
class ManifoldPoint:
    x: float
    tau: float = 0.0
    y1: float = 0.0
    y2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.tau, self.y1, self.y2], dtype=float)

    @classmethod
    def from_array(cls, q: Sequence[float]) -> "ManifoldPoint":
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]))


@dataclass(frozen=True)
class TangentVector:
    vx: float
    vtau: float = 0.0
    vy1: float = 0.0
    vy2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vtau, self.vy1, self.vy2], dtype=float)

    @classmethod
    def from_array(cls, v: Sequence[float]) -> "TangentVector":
        return cls(float(v[0]), float(v[1]), float(v[2]), float(v[3]))

    def __neg__(self) -> "TangentVector":
        return TangentVector(-self.vx, -self.vtau, -self.vy1, -self.vy2)

    def scaled(self, c: float) -> "TangentVector":
        return TangentVector(c * self.vx, c * self.vtau, c * self.vy1, c * self.vy2)


@dataclass(frozen=True)
class PhasePoint:
    point: ManifoldPoint
    velocity: TangentVector

    @classmethod
    def from_arrays(cls, q: Sequence[float], v: Sequence[float]) -> "PhasePoint":
        return cls(ManifoldPoint.from_array(q), TangentVector.from_array(v))

    def arrays(self):
        return self.point.as_array(), self.velocity.as_array()

    def reversed(self) -> "PhasePoint":
        """Same footprint, opposite direction"""
        return PhasePoint(self.point, -self.velocity)


@dataclass
class PhaseEnsemble:
    """Many phase points stored as (N, 4) arrays"""
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        if self.q.shape != self.v.shape or self.q.shape[1] != 4:
            raise ValueError(f"Expected matching (N, 4) arrays, got {self.q.shape} and {self.v.shape}")

    def __len__(self) -> int:
        return self.q.shape[0]

    def __getitem__(self, i: int) -> PhasePoint:
        return PhasePoint.from_arrays(self.q[i], self.v[i])

    def __iter__(self) -> Iterator[PhasePoint]:
        for i in range(len(self)):
            yield self[i]

    def points(self) -> List[PhasePoint]:
        return list(self)

    def reversed(self) -> "PhaseEnsemble":
        return PhaseEnsemble(self.q.copy(), -self.v)

    @classmethod
    def from_points(cls, points: Sequence[PhasePoint]) -> "PhaseEnsemble":
        if not points:
            return cls(np.empty((0, 4)), np.empty((0, 4)))
        q = np.array([p.point.as_array() for p in points])
        v = np.array([p.velocity.as_array() for p in points])
        return cls(q, v)

    @classmethod
    def concatenate(cls, parts: Sequence["PhaseEnsemble"]) -> "PhaseEnsemble":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.empty((0, 4)), np.empty((0, 4)))
        return cls(np.concatenate([p.q for p in parts]), np.concatenate([p.v for p in parts]))
