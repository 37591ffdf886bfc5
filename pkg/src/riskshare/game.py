"""Profit-maximizing catalogue game on finite product and price grids.

Each firm picks a catalogue: a finite menu of ``(product, price)``
contracts that always contains the null contract ``(0, 0)``.  Products are
convex combinations of the firm's basic products on a simplex grid; product
index 0 is reserved for the null claim.  Agents of type ``theta`` pick the
contract maximizing ``E[X] - theta Var[X] - p`` across both catalogues.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from riskshare.market import TieBreakRule
from riskshare.probability import Claim, DimensionError, TypeGrid
from riskshare.validation import as_vector, check_scalar

log = logging.getLogger(__name__)

TBR_MODES = ("efficient", "worst_case", "fixed")
TIE_TOL = 1e-12


class EnumerationCapExceeded(ValueError):
    """The enumerated catalogue family is larger than the allowed cap."""


def simplex_weights(m: int, resolution: float) -> np.ndarray:
    """All weight vectors on the ``m``-simplex whose entries are multiples of ``resolution``."""
    steps = int(round(1.0 / resolution))
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise ValueError(f"hull_resolution must be 1/k for a positive integer k, got {resolution!r}")
    rows = [c for c in itertools.product(range(steps + 1), repeat=m) if sum(c) == steps]
    return np.array(sorted(rows, reverse=True), dtype=float) / steps


@dataclass(frozen=True, eq=False)
class CatalogueGrid:
    """Finite contract grid of the two firms.

    Parameters
    ----------
    basic_products : pair of sequences of Claim
        The basic products of each firm; grid products are their convex
        combinations with weights on a ``hull_resolution`` simplex grid.
    price_grid : array-like
        Admissible prices, all within ``[-price_bound**2, price_bound]``.
    cost_rates : pair of array-like
        Linear cost of each basic product per firm; the cost of a grid
        product is ``weights @ cost_rates + variance_loading * Var[X]``.
    type_grid : TypeGrid
        Agent types and their masses.
    """

    basic_products: tuple
    price_grid: np.ndarray
    cost_rates: tuple
    type_grid: TypeGrid = field(default_factory=TypeGrid)
    hull_resolution: float = 1.0
    price_bound: float = 10.0
    variance_loading: tuple = (0.0, 0.0)

    def __post_init__(self):
        basics = tuple(tuple(b) for b in self.basic_products)
        if len(basics) != 2 or not all(basics):
            raise ValueError("basic_products needs a nonempty list of claims for each of two firms")
        space = basics[0][0].space
        for claims in basics:
            for c in claims:
                if not isinstance(c, Claim):
                    raise TypeError("basic products must be Claim instances")
                if c.space != space:
                    raise DimensionError("basic products live on different probability spaces")
        bound = check_scalar(self.price_bound, "price_bound", lo=0, lo_inclusive=False)
        prices = np.unique(as_vector(self.price_grid, "price_grid"))
        if np.any(prices > bound) or np.any(prices < -bound**2):
            raise ValueError(f"prices must lie within [{-bound**2}, {bound}]")
        rates = tuple(as_vector(r, f"cost_rates[{i}]") for i, r in enumerate(self.cost_rates))
        if len(rates) != 2 or any(r.size != len(b) for r, b in zip(rates, basics)):
            raise DimensionError("cost_rates must give one rate per basic product of each firm")
        loading = tuple(float(v) for v in self.variance_loading)
        if len(loading) != 2:
            raise ValueError("variance_loading needs one value per firm")
        object.__setattr__(self, "basic_products", basics)
        object.__setattr__(self, "price_grid", prices)
        object.__setattr__(self, "cost_rates", rates)
        object.__setattr__(self, "variance_loading", loading)
        object.__setattr__(self, "space", space)
        products = []
        for i in range(2):
            weights = simplex_weights(len(basics[i]), self.hull_resolution)
            payoffs = weights @ np.stack([c.payoffs for c in basics[i]])
            mean = payoffs @ space.atom_weights
            var = ((payoffs - mean[:, None]) ** 2) @ space.atom_weights
            cost = weights @ rates[i] + loading[i] * var
            # index 0 is the null claim with zero cost
            products.append({
                "weights": np.vstack([np.zeros(len(basics[i])), weights]),
                "payoffs": np.vstack([np.zeros(space.atom_count), payoffs]),
                "mean": np.concatenate([[0.0], mean]),
                "variance": np.concatenate([[0.0], var]),
                "cost": np.concatenate([[0.0], cost]),
            })
        object.__setattr__(self, "_products", tuple(products))

    def product_count(self, firm: int) -> int:
        return self._products[firm]["mean"].size

    def product(self, firm: int, index: int) -> Claim:
        return Claim(self._products[firm]["payoffs"][index], self.space)

    def product_mean(self, firm: int) -> np.ndarray:
        return self._products[firm]["mean"]

    def product_variance(self, firm: int) -> np.ndarray:
        return self._products[firm]["variance"]

    def cost(self, firm: int, index=None):
        """Cost ``K_firm`` of one grid product, or of all of them."""
        c = self._products[firm]["cost"]
        return c if index is None else float(c[index])

    @property
    def max_profit_bound(self) -> float:
        """``max price - min cost``, an upper bound on any per-type profit."""
        top = max(float(self.price_grid.max()), 0.0)
        low = min(min(float(self.cost(i).min()) for i in range(2)), 0.0)
        return top - low


@dataclass(frozen=True, eq=False)
class Catalogue:
    """A firm's menu of ``(product index, price)`` contracts, null contract included."""

    firm: int
    contracts: tuple

    def __post_init__(self):
        if self.firm not in (0, 1):
            raise ValueError("firm must be 0 or 1")
        pairs = {(int(j), float(p)) for j, p in self.contracts}
        pairs.add((0, 0.0))
        object.__setattr__(self, "contracts", tuple(sorted(pairs)))

    @classmethod
    def null(cls, firm: int) -> Catalogue:
        return cls(firm, ())

    @property
    def products(self) -> np.ndarray:
        return np.array([j for j, _ in self.contracts], dtype=int)

    @property
    def prices(self) -> np.ndarray:
        return np.array([p for _, p in self.contracts], dtype=float)

    def __len__(self):
        return len(self.contracts)

    def __eq__(self, other):
        if not isinstance(other, Catalogue):
            return NotImplemented
        return self.firm == other.firm and self.contracts == other.contracts

    def __hash__(self):
        return hash((self.firm, self.contracts))

    def __repr__(self):
        return f"Catalogue(firm={self.firm}, contracts={list(self.contracts)})"


@dataclass(frozen=True, eq=False)
class MixedProfile:
    """Probability vectors over each firm's enumerated catalogues."""

    probs: tuple

    def __post_init__(self):
        probs = []
        for p in self.probs:
            p = as_vector(p, "mixed strategy")
            if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("a mixed strategy must be nonnegative and sum to 1")
            p = np.clip(p, 0.0, None)
            probs.append(p / p.sum())
        if len(probs) != 2:
            raise ValueError("a profile holds one mixed strategy per firm")
        object.__setattr__(self, "probs", tuple(probs))

    def support(self, tol: float = 1e-9) -> tuple:
        return tuple(np.flatnonzero(p > tol) for p in self.probs)


def _check_pair(cat1: Catalogue, cat2: Catalogue, grid: CatalogueGrid):
    if cat1.firm != 0 or cat2.firm != 1:
        raise ValueError("expected firm 0's catalogue first and firm 1's second")
    for cat in (cat1, cat2):
        if cat.products.max() >= grid.product_count(cat.firm):
            raise IndexError(f"catalogue of firm {cat.firm} references an unknown product")


def _best_offer(theta: np.ndarray, cat: Catalogue, grid: CatalogueGrid):
    """Per type: best utility and the largest profit among contracts attaining it."""
    j, p = cat.products, cat.prices
    util = grid.product_mean(cat.firm)[j][None, :] - theta[:, None] * grid.product_variance(cat.firm)[j][None, :]
    util = util - p[None, :]
    profit = p - grid.cost(cat.firm)[j]
    v = util.max(axis=1)
    tol = TIE_TOL * (1.0 + np.abs(v))
    best = np.where(util >= v[:, None] - tol[:, None], profit[None, :], -np.inf).max(axis=1)
    # an agent indifferent to the outside option takes it
    best = np.where(v > tol, best, 0.0)
    return v, best


def per_type_profit(theta, cat1: Catalogue, cat2: Catalogue, grid: CatalogueGrid):
    """Profits ``(pi_1, pi_2)`` per type and the indirect utilities ``(v_1, v_2)``.

    ``pi_i`` is the best profit firm ``i`` makes among its contracts giving
    the type its best utility ``v_i``, and zero where ``v_i < v_{-i}``.
    """
    _check_pair(cat1, cat2, grid)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    v1, b1 = _best_offer(theta, cat1, grid)
    v2, b2 = _best_offer(theta, cat2, grid)
    tol = TIE_TOL * (1.0 + np.maximum(np.abs(v1), np.abs(v2)))
    pi1 = np.where(v1 >= v2 - tol, b1, 0.0)
    pi2 = np.where(v2 >= v1 - tol, b2, 0.0)
    return (pi1, pi2), (v1, v2)


def tie_shares(pi, v, tbr_mode="efficient", tbr=None):
    """Firm 1's share of each type under a tie-breaking mode.

    Returns ``(f_1, f_2)``; for ``worst_case`` the two shares are each
    evaluated against their own firm, so they need not sum to one.
    """
    if tbr_mode not in TBR_MODES:
        raise ValueError(f"tbr_mode must be one of {TBR_MODES}, got {tbr_mode!r}")
    (pi1, pi2), (v1, v2) = pi, v
    tol = TIE_TOL * (1.0 + np.maximum(np.abs(v1), np.abs(v2)))
    win1, win2 = v1 > v2 + tol, v2 > v1 + tol
    tie = ~(win1 | win2)
    if tbr_mode == "efficient":
        f1 = np.where(pi1 > pi2, 1.0, np.where(pi1 < pi2, 0.0, 0.5))
        f1 = np.where(tie, f1, win1.astype(float))
        return f1, 1.0 - f1
    if tbr_mode == "worst_case":
        return win1.astype(float), win2.astype(float)
    if tbr is None:
        raise ValueError("fixed mode needs a TieBreakRule")
    weights = tbr.weights if isinstance(tbr, TieBreakRule) else np.asarray(tbr, dtype=float)
    if weights.size != v1.size:
        raise DimensionError(f"tie-break rule has {weights.size} cells for {v1.size} types")
    f1 = np.where(tie, weights, win1.astype(float))
    return f1, 1.0 - f1


def payoff(cat1: Catalogue, cat2: Catalogue, grid: CatalogueGrid, tbr_mode="efficient", tbr=None):
    """Integrated profits ``(Pi_1, Pi_2)`` over the type grid."""
    types = grid.type_grid
    pi, v = per_type_profit(types.midpoints, cat1, cat2, grid)
    f1, f2 = tie_shares(pi, v, tbr_mode, tbr)
    mu = types.cell_weights
    return float(np.sum(pi[0] * f1 * mu)), float(np.sum(pi[1] * f2 * mu))


def efficient_aggregate(cat1: Catalogue, cat2: Catalogue, grid: CatalogueGrid) -> float:
    """``sum_k max_i pi_i(theta_k) mu_k``, the largest attainable total profit.

    This equals the efficient-TBR total whenever no contract sells below
    cost, which holds for catalogues built from :func:`admissible_contracts`.
    """
    types = grid.type_grid
    (pi1, pi2), _ = per_type_profit(types.midpoints, cat1, cat2, grid)
    return float(np.sum(np.maximum(pi1, pi2) * types.cell_weights))


def epsilon_shift(cat: Catalogue, eps: float, grid: CatalogueGrid) -> Catalogue:
    """Lower every price by ``eps``, dropping contracts that would sell below cost."""
    eps = check_scalar(eps, "eps", lo=0, lo_inclusive=False)
    cost = grid.cost(cat.firm)
    kept = [(j, p - eps) for j, p in cat.contracts if (j, p) != (0, 0.0) and p - eps >= cost[j]]
    return Catalogue(cat.firm, kept)


def admissible_contracts(grid: CatalogueGrid, firm: int) -> list:
    """Every non-null ``(product, price)`` pair priced at or above its cost."""
    cost = grid.cost(firm)
    return [(j, float(p)) for j in range(1, grid.product_count(firm)) for p in grid.price_grid if p >= cost[j]]


def enumerate_catalogues(grid: CatalogueGrid, firm: int, *, menu_size: int = 1, cap: int = 500) -> list:
    """Null catalogue plus every menu of up to ``menu_size`` admissible contracts.

    Raises
    ------
    EnumerationCapExceeded
        When the family would exceed ``cap`` catalogues.
    """
    if menu_size < 1:
        raise ValueError("menu_size must be at least 1")
    contracts = admissible_contracts(grid, firm)
    total = 1 + sum(comb(len(contracts), k) for k in range(1, menu_size + 1))
    if total > cap:
        raise EnumerationCapExceeded(f"firm {firm} has {total} catalogues, above the cap of {cap}")
    out = [Catalogue.null(firm)]
    for k in range(1, menu_size + 1):
        out.extend(Catalogue(firm, menu) for menu in itertools.combinations(contracts, k))
    return out


def payoff_tables(grid: CatalogueGrid, strategies, tbr_mode="efficient"):
    """Bimatrix ``(A, B)`` with ``A[r, c], B[r, c] = Pi(strategies[0][r], strategies[1][c])``."""
    rows, cols = strategies
    a = np.empty((len(rows), len(cols)))
    b = np.empty_like(a)
    for r, c1 in enumerate(rows):
        for c, c2 in enumerate(cols):
            a[r, c], b[r, c] = payoff(c1, c2, grid, tbr_mode)
    return a, b


def nash_gap(a: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """Largest gain either player gets from a pure deviation against ``(x, y)``."""
    gain1 = float(np.max(a @ y) - x @ a @ y)
    gain2 = float(np.max(x @ b) - x @ b @ y)
    return max(gain1, gain2, 0.0)


def pure_equilibria(a: np.ndarray, b: np.ndarray, tol: float = 1e-12) -> list:
    """All pure profiles ``(r, c)`` where neither player can gain by deviating."""
    best_r = a >= a.max(axis=0, keepdims=True) - tol
    best_c = b >= b.max(axis=1, keepdims=True) - tol
    return [tuple(map(int, rc)) for rc in np.argwhere(best_r & best_c)]


def _support_solution(a, b, rows, cols):
    """Mixed profile making each player indifferent over the given supports, or None."""
    def solve(m, support_self, support_other):
        # find q on support_other equalizing m[support_self] @ q
        k = len(support_other)
        lhs = np.zeros((len(support_self) + 1, k + 1))
        lhs[:-1, :k] = m[np.ix_(support_self, support_other)]
        lhs[:-1, k] = -1.0
        lhs[-1, :k] = 1.0
        rhs = np.zeros(len(support_self) + 1)
        rhs[-1] = 1.0
        sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        if not np.allclose(lhs @ sol, rhs, atol=1e-9) or np.any(sol[:k] < -1e-12):
            return None
        q = np.zeros(m.shape[1])
        q[support_other] = np.clip(sol[:k], 0.0, None)
        return q / q.sum()

    y = solve(a, rows, cols)
    x = solve(b.T, cols, rows)
    if x is None or y is None:
        return None
    return x, y


@dataclass
class NashResult:
    profile: MixedProfile
    eps: float
    certified: bool
    iterations: int
    method: str
    strategies: tuple
    tables: tuple
    trace: list = field(default_factory=list)


class MixedNashSolver(BaseEstimator):
    """Approximate mixed equilibrium of the enumerated catalogue game.

    Pure equilibria are read off the payoff tables first.  Otherwise
    fictitious play runs for ``max_iter`` rounds, keeping the empirical
    profile with the smallest deviation gain; that profile is finally
    polished by solving the indifference conditions on its support.

    Parameters
    ----------
    enumeration_cap : int
        Maximum number of catalogues per firm.
    menu_size : int
        Largest number of non-null contracts in an enumerated catalogue.
    max_iter : int
    threshold : float
        Deviation gain below which the profile is certified.
    tbr_mode : str
    seed : int
        Seeds the random tie-breaking among best responses.
    """

    def __init__(self, enumeration_cap=500, menu_size=1, max_iter=100_000, threshold=0.01,
                 tbr_mode="efficient", seed=0):
        self.enumeration_cap = enumeration_cap
        self.menu_size = menu_size
        self.max_iter = max_iter
        self.threshold = threshold
        self.tbr_mode = tbr_mode
        self.seed = seed

    def fit(self, grid: CatalogueGrid, y=None):
        strategies = tuple(
            enumerate_catalogues(grid, i, menu_size=self.menu_size, cap=self.enumeration_cap) for i in range(2)
        )
        a, b = payoff_tables(grid, strategies, self.tbr_mode)
        self.result_ = self.solve_tables(a, b)
        self.result_.strategies = strategies
        self.profile_ = self.result_.profile
        self.eps_ = self.result_.eps
        return self

    def solve_tables(self, a: np.ndarray, b: np.ndarray) -> NashResult:
        """Equilibrium search on an explicit bimatrix."""
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        if a.shape != b.shape or a.ndim != 2:
            raise DimensionError("payoff tables must be two matrices of the same shape")
        pure = pure_equilibria(a, b)
        if pure:
            r, c = max(pure, key=lambda rc: (a[rc] + b[rc], -rc[0], -rc[1]))
            x, y = np.eye(a.shape[0])[r], np.eye(a.shape[1])[c]
            eps = nash_gap(a, b, x, y)
            return NashResult(MixedProfile((x, y)), eps, eps <= self.threshold, 0, "pure-scan", (), (a, b))

        rng = np.random.default_rng(self.seed)
        counts_x, counts_y = np.zeros(a.shape[0]), np.zeros(a.shape[1])
        counts_x[0] += 1
        counts_y[0] += 1
        best = (np.inf, None, None)
        trace = []
        it = 0
        for it in range(1, self.max_iter + 1):
            x, y = counts_x / counts_x.sum(), counts_y / counts_y.sum()
            if it % 64 == 1 or it == self.max_iter:
                eps = nash_gap(a, b, x, y)
                trace.append(eps)
                if eps < best[0]:
                    best = (eps, x.copy(), y.copy())
                if eps <= 0.1 * self.threshold:
                    break
            counts_x[_argmax(a @ y, rng)] += 1
            counts_y[_argmax(x @ b, rng)] += 1
        eps, x, y = best
        method = "fictitious-play"
        polished = _support_solution(a, b, np.flatnonzero(x > 1e-3), np.flatnonzero(y > 1e-3))
        if polished is not None:
            px, py = polished
            peps = nash_gap(a, b, px, py)
            if peps < eps:
                eps, x, y, method = peps, px, py, "fictitious-play+support-polish"
        if eps > self.threshold:
            log.warning("no certified equilibrium after %d rounds; best gain %.3g", it, eps)
        return NashResult(MixedProfile((x, y)), eps, eps <= self.threshold, it, method, (), (a, b), trace)


def _argmax(values, rng):
    top = np.flatnonzero(values >= values.max() - 1e-12)
    return int(top[0]) if top.size == 1 else int(rng.choice(top))


def mixed_nash(grid: CatalogueGrid, enumeration_cap: int = 500, **config) -> tuple:
    """Return ``(profile, eps)`` for the enumerated catalogue game; see :class:`MixedNashSolver`."""
    solver = MixedNashSolver(enumeration_cap=enumeration_cap, **config).fit(grid)
    check_is_fitted(solver, "result_")
    return solver.profile_, solver.eps_
