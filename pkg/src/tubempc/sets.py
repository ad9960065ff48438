"""Axis-aligned boxes and Euclidean balls with the set operations used for
constraint tightening.

Only two shapes are supported. The Pontryagin difference of a box and an
origin-centred ball has a closed form (shrink every face by the radius), and
the Minkowski sum of a box and a ball is only ever queried for membership, so
it is exposed as a predicate rather than materialised.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class BoxSet:
    """Closed axis-aligned box ``{x : lower <= x <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError(f"box bounds differ in dimension: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError(f"inverted box bounds: lower={lo}, upper={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_width, dim: int) -> "BoxSet":
        h = float(half_width)
        return cls(-h * np.ones(dim), h * np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        return box_membership(self, x, tol)

    def distance(self, x) -> float:
        """Euclidean distance from ``x`` to the box (0 inside)."""
        x = np.asarray(x, dtype=float)
        gap = np.maximum(self.lower - x, 0.0) + np.maximum(x - self.upper, 0.0)
        return float(np.linalg.norm(gap))

    def project(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoxSet):
            return NotImplemented
        return bool(np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper))

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self) -> str:
        return f"BoxSet(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


@dataclass(frozen=True)
class BallSet:
    """Closed Euclidean ball ``{x : ||x - center|| <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        r = float(self.radius)
        if not r >= 0.0:
            raise ValueError(f"ball radius must be nonnegative, got {self.radius}")
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @classmethod
    def origin(cls, radius: float, dim: int) -> "BallSet":
        return cls(np.zeros(dim), radius)

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        return ball_membership(self, x, tol)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BallSet):
            return NotImplemented
        return bool(np.array_equal(self.center, other.center) and self.radius == other.radius)

    def __hash__(self):
        return hash((self.center.tobytes(), self.radius))


@dataclass(frozen=True)
class EmptySet:
    """Outcome of a Pontryagin difference whose result has no points.

    ``axes`` lists the coordinates whose interval inverted, so callers can say
    which constraint the tube swallowed.
    """

    dim: int
    axes: tuple = ()

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        return False

    def __bool__(self) -> bool:
        return False


def pontryagin_diff_box_ball(box: BoxSet, radius: float) -> BoxSet | EmptySet:
    """Erode ``box`` by the origin-centred ball of the given radius.

    For an axis-aligned box the erosion by a Euclidean ball is the box with
    every face moved inward by ``radius``.
    """
    r = float(radius)
    if r < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    lo = box.lower + r
    hi = box.upper - r
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        return EmptySet(box.dim, tuple(int(a) for a in bad))
    return BoxSet(lo, hi)


def minkowski_add_box_ball(box: BoxSet, radius: float, tol: float = DEFAULT_TOL) -> Callable[[np.ndarray], bool]:
    """Membership predicate for ``box ⊕ ball(0, radius)``."""
    r = float(radius)
    if r < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")

    def member(x) -> bool:
        return box.distance(x) <= r + tol

    return member


def scale_ball(scalar: float, ball: BallSet) -> BallSet:
    """Image of ``ball`` under the linear map ``x -> scalar * x``."""
    s = float(scalar)
    return BallSet(s * ball.center, abs(s) * ball.radius)


def translate_box(box: BoxSet, offset) -> BoxSet:
    off = np.asarray(offset, dtype=float).reshape(-1)
    if off.size != box.dim:
        raise ValueError(f"offset has dimension {off.size}, box has {box.dim}")
    return BoxSet(box.lower + off, box.upper + off)


def box_membership(box: BoxSet, x, tol: float = DEFAULT_TOL) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != box.dim:
        raise ValueError(f"point has dimension {x.size}, box has {box.dim}")
    return bool(np.all(x >= box.lower - tol) and np.all(x <= box.upper + tol))


def ball_membership(ball: BallSet, x, tol: float = DEFAULT_TOL) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != ball.dim:
        raise ValueError(f"point has dimension {x.size}, ball has {ball.dim}")
    return bool(np.linalg.norm(x - ball.center) <= ball.radius + tol)


def tighten_input_box(input_box: BoxSet, gain: float, tube_radius: float) -> BoxSet | EmptySet:
    """``U ⊖ ((-gain) ∘ ball(0, tube_radius))``: room left for the nominal input."""
    spread = scale_ball(-gain, BallSet.origin(tube_radius, input_box.dim))
    return pontryagin_diff_box_ball(input_box, spread.radius)
