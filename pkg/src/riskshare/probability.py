"""Finite probability spaces, claims, type grids and mean-variance utility."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from riskshare.validation import as_vector

WEIGHT_TOL = 1e-12


class DimensionError(ValueError):
    """A claim, space or grid has inconsistent dimensions."""


@dataclass(frozen=True, eq=False)
class ProbSpace:
    """Finite sample space given by strictly positive atom weights."""

    atom_weights: np.ndarray

    def __post_init__(self):
        w = as_vector(self.atom_weights, "atom_weights")
        if w.size < 2:
            raise DimensionError("a probability space needs at least 2 atoms")
        if np.any(w <= 0):
            raise ValueError("atom weights must be strictly positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"atom weights sum to {w.sum()!r}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "atom_weights", w)

    @classmethod
    def uniform(cls, d: int) -> ProbSpace:
        return cls(np.full(d, 1.0 / d))

    @property
    def atom_count(self) -> int:
        return self.atom_weights.size

    @property
    def is_uniform(self) -> bool:
        w = self.atom_weights
        return bool(np.allclose(w, w[0], rtol=0, atol=WEIGHT_TOL))

    def claim(self, payoffs) -> Claim:
        return Claim(payoffs, self)

    def __eq__(self, other):
        if not isinstance(other, ProbSpace):
            return NotImplemented
        return np.array_equal(self.atom_weights, other.atom_weights)

    def __hash__(self):
        return hash(self.atom_weights.tobytes())


@dataclass(frozen=True, eq=False)
class Claim:
    """Payoff vector over the atoms of a :class:`ProbSpace`."""

    payoffs: np.ndarray
    space: ProbSpace

    def __post_init__(self):
        x = as_vector(self.payoffs, "payoffs")
        if x.size != self.space.atom_count:
            raise DimensionError(
                f"claim has {x.size} payoffs but the space has {self.space.atom_count} atoms"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("claim payoffs must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "payoffs", x)

    def __len__(self):
        return self.payoffs.size

    def __add__(self, other):
        if isinstance(other, Claim):
            _check_same_space(self, other)
            return Claim(self.payoffs + other.payoffs, self.space)
        return Claim(self.payoffs + float(other), self.space)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Claim):
            _check_same_space(self, other)
            return Claim(self.payoffs - other.payoffs, self.space)
        return Claim(self.payoffs - float(other), self.space)

    def __mul__(self, scalar):
        return Claim(self.payoffs * float(scalar), self.space)

    __rmul__ = __mul__

    def __neg__(self):
        return Claim(-self.payoffs, self.space)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.space.atom_weights @ self.payoffs**2))


def _check_same_space(x: Claim, y: Claim):
    if x.space.atom_count != y.space.atom_count:
        raise DimensionError("claims live on spaces of different dimension")


@dataclass(frozen=True, eq=False)
class TypeGrid:
    """Uniform partition of the type interval ``[a, 1]`` into ``n`` cells.

    ``cell_weights`` holds the mu-mass of each cell; by default mu is
    Lebesgue measure, so each cell carries its width ``(1 - a) / n``.
    """

    a: float = 0.05
    n: int = 6
    cell_weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError(f"type lower bound a must lie in (0, 1), got {self.a!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"cell count n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if self.cell_weights is None:
            cw = np.full(self.n, self.width)
        else:
            cw = as_vector(self.cell_weights, "cell_weights")
            if cw.size != self.n:
                raise DimensionError(f"{cw.size} cell weights for {self.n} cells")
            if np.any(cw <= 0):
                raise ValueError("cell weights must be strictly positive")
        cw.setflags(write=False)
        object.__setattr__(self, "cell_weights", cw)

    @property
    def width(self) -> float:
        return (1.0 - self.a) / self.n

    @property
    def edges(self) -> np.ndarray:
        return self.a + self.width * np.arange(self.n + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.a + self.width * (np.arange(self.n) + 0.5)

    @property
    def total_mass(self) -> float:
        return float(self.cell_weights.sum())

    def cell_of(self, theta: float) -> int:
        """Index of the cell containing ``theta`` (right edge belongs to the last cell)."""
        check_type(theta, self)
        k = int((theta - self.a) // self.width)
        return min(k, self.n - 1)

    def __eq__(self, other):
        if not isinstance(other, TypeGrid):
            return NotImplemented
        return (
            self.a == other.a
            and self.n == other.n
            and np.array_equal(self.cell_weights, other.cell_weights)
        )

    def __hash__(self):
        return hash((self.a, self.n, self.cell_weights.tobytes()))


def check_type(theta: float, grid: TypeGrid | None = None) -> float:
    lo = grid.a if grid is not None else 0.0
    theta = float(theta)
    if not (lo <= theta <= 1.0) or (grid is None and theta == 0.0):
        raise ValueError(f"type {theta!r} outside the type interval [{lo}, 1]")
    return theta


def mean(claim: Claim) -> float:
    return float(claim.space.atom_weights @ claim.payoffs)


def variance(claim: Claim) -> float:
    """E[X^2] - E[X]^2, computed on centred payoffs and clipped at zero."""
    w = claim.space.atom_weights
    centred = claim.payoffs - w @ claim.payoffs
    return float(max(w @ centred**2, 0.0))


def mv_utility(theta: float, claim: Claim, grid: TypeGrid | None = None) -> float:
    """Mean-variance utility ``E[X] - theta Var[X]`` of an agent of type ``theta``."""
    theta = check_type(theta, grid)
    return mean(claim) - theta * variance(claim)
