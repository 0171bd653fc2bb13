"""Smooth compactly supported single-site disorder laws.

The family is the symmetric polynomial bump rho_p(x) = c_p x^p (1-x)^p on
(0, 1), normalized to integrate to one.  Extended by zero it is C^{p-1} on
the whole line and its (p-1)-th derivative is Lipschitz, so the Hoelder
exponent of the top continuous derivative is 1.  All derivative bookkeeping
(sup norms, L1 norms, moments) runs on polynomial coefficients; nothing here
is fitted or sampled except the two rejection samplers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

log = logging.getLogger(__name__)

# Total proposal budget for one rejection-sampling call.  Acceptance rates for
# this family stay above 1/sup(rho_p) ~ 1/(2 sqrt(p)), so the cap only trips
# on a broken density.
_MAX_PROPOSALS = 10**6


class SamplingError(RuntimeError):
    """Rejection sampling exhausted its proposal budget."""


class SingleSiteDensity:
    """Polynomial bump density c_p x^p (1-x)^p on (0, 1).

    p >= 1 is the vanishing order at both endpoints.  continuity_order
    (= p - 1) is the number of globally continuous derivatives of the
    zero-extension; derivatives up to order p exist inside the support.
    """

    def __init__(self, p: int):
        if int(p) != p or p < 1:
            raise ValueError(f"bump exponent must be a positive integer, got {p!r}")
        self.p = int(p)
        self.continuity_order = self.p - 1
        self.hoelder_exponent = 1.0
        # 1/B(p+1, p+1) without special functions: C(2p, p) * (2p + 1)
        self.normalization = float(math.comb(2 * self.p, self.p) * (2 * self.p + 1))
        base = npoly.polypow(np.array([0.0, 1.0, -1.0]), self.p)  # (x - x^2)^p
        self._derivs = [self.normalization * np.asarray(base, dtype=float)]
        for _ in range(self.p):
            self._derivs.append(npoly.polyder(self._derivs[-1]))
        self._sup_cache: dict[int, float] = {}
        self._l1_cache: dict[int, float] = {}

    @classmethod
    def from_continuity_order(cls, m: int) -> "SingleSiteDensity":
        """Least bump exponent giving m globally continuous derivatives."""
        return cls(m + 1)

    def __repr__(self):
        return f"SingleSiteDensity(p={self.p})"

    # -- pointwise evaluation -------------------------------------------------

    def eval(self, x, order: int = 0):
        """order-th derivative at x, zero outside [0, 1].

        At the endpoints the one-sided value from inside the support is
        returned; for order <= continuity_order the two limits agree (both
        are zero).
        """
        if not 0 <= order <= self.p:
            raise ValueError(f"derivative order {order} outside [0, {self.p}]")
        xa = np.asarray(x, dtype=float)
        scalar = xa.ndim == 0
        xv = np.atleast_1d(xa)
        out = np.zeros_like(xv)
        inside = (xv >= 0.0) & (xv <= 1.0)
        if inside.any():
            xi = xv[inside]
            if order == 0:
                # factored form: the expanded polynomial cancels to small
                # negative values near the endpoints
                out[inside] = self.normalization * (xi * (1.0 - xi)) ** self.p
            else:
                out[inside] = npoly.polyval(xi, self._derivs[order])
        return float(out[0]) if scalar else out

    def cdf(self, x):
        """Exact distribution function, clamped to [0, 1] outside the support."""
        anti = npoly.polyint(self._derivs[0])  # vanishes at 0 by construction
        xa = np.asarray(x, dtype=float)
        return npoly.polyval(np.clip(xa, 0.0, 1.0), anti)

    def mean(self) -> float:
        return 0.5

    def variance(self) -> float:
        # Var of a symmetric Beta(p+1, p+1) law
        return 1.0 / (4.0 * (2.0 * self.p + 3.0))

    # -- score pieces (used by the derivative estimators) ---------------------

    def log_derivative(self, x):
        """(log rho)'(x) = p/x - p/(1-x); caller keeps x strictly inside (0, 1)."""
        xa = np.asarray(x, dtype=float)
        return self.p / xa - self.p / (1.0 - xa)

    def log_curvature(self, x):
        """(log rho)''(x) = rho''/rho - (rho'/rho)^2, again for interior x."""
        xa = np.asarray(x, dtype=float)
        return -self.p / xa**2 - self.p / (1.0 - xa) ** 2

    # -- derivative norms ------------------------------------------------------

    def derivative_coefficients(self, order: int) -> np.ndarray:
        """Ascending polynomial coefficients of rho^(order) on [0, 1]."""
        if not 0 <= order <= self.p:
            raise ValueError(f"derivative order {order} outside [0, {self.p}]")
        return self._derivs[order].copy()

    def sup_derivative(self, order: int) -> float:
        """sup over [0, 1] of |rho^(order)|, located through critical points."""
        if not 0 <= order <= self.p:
            raise ValueError(f"derivative order {order} outside [0, {self.p}]")
        if order not in self._sup_cache:
            crit = _real_roots_in_unit_interval(npoly.polyder(self._derivs[order]))
            cand = np.concatenate([crit, [0.0, 1.0]])
            self._sup_cache[order] = float(
                np.max(np.abs(npoly.polyval(cand, self._derivs[order])))
            )
        return self._sup_cache[order]

    def derivative_sup_bound(self) -> float:
        """max over orders j <= continuity_order of sup |rho^(j)|."""
        return max(self.sup_derivative(j) for j in range(self.continuity_order + 1))

    def l1_norm(self, order: int) -> float:
        """Exact L1 norm of rho^(order): split at sign changes, difference the
        antiderivative between them.  Falls back to adaptive quadrature if the
        root finder fails."""
        if not 0 <= order <= self.p:
            raise ValueError(f"derivative order {order} outside [0, {self.p}]")
        if order == 0:
            return 1.0
        if order not in self._l1_cache:
            try:
                roots = _real_roots_in_unit_interval(self._derivs[order])
                pts = np.concatenate([[0.0], np.sort(roots), [1.0]])
                anti = npoly.polyval(pts, self._derivs[order - 1])
                self._l1_cache[order] = float(np.sum(np.abs(np.diff(anti))))
            except Exception:  # pragma: no cover - degenerate coefficients only
                log.warning(
                    "root finding failed for derivative order %d; "
                    "falling back to adaptive quadrature",
                    order,
                )
                from scipy.integrate import quad

                val, _ = quad(lambda t: abs(self.eval(t, order)), 0.0, 1.0, limit=200)
                self._l1_cache[order] = float(val)
        return self._l1_cache[order]

    # -- sampling ---------------------------------------------------------------

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw from rho by rejection from the uniform envelope on (0, 1)."""
        n = 1 if size is None else int(size)
        bound = self.sup_derivative(0)
        out = _rejection(
            lambda x: npoly.polyval(x, self._derivs[0]), bound, rng, n
        )
        return float(out[0]) if size is None else out

    def tilted(self, order: int) -> "TiltedSampler":
        """Sampler for |rho^(order)| / ||rho^(order)||_1 with sign carried along."""
        if not 1 <= order <= self.continuity_order:
            raise ValueError(
                f"tilt order {order} outside [1, {self.continuity_order}]"
            )
        return TiltedSampler(self, order, self.l1_norm(order))


@dataclass(frozen=True)
class TiltedSampler:
    """Normalized-derivative-magnitude sampler.

    Draws x ~ |rho^(order)| / weight where weight = ||rho^(order)||_1, and
    reports sign(rho^(order)(x)) so that weight * sign * f(x) is an unbiased
    estimate of the integral of f against rho^(order).
    """

    base: SingleSiteDensity
    order: int
    weight: float

    def density(self, x):
        return np.abs(self.base.eval(x, self.order)) / self.weight

    def sign(self, x):
        return np.sign(self.base.eval(x, self.order))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Returns (value, sign) for one draw, or arrays when size is given."""
        n = 1 if size is None else int(size)
        bound = self.base.sup_derivative(self.order)
        vals = _rejection(
            lambda x: np.abs(self.base.eval(x, self.order)), bound, rng, n
        )
        signs = self.sign(vals)
        if size is None:
            return float(vals[0]), float(signs[0])
        return vals, signs


def _real_roots_in_unit_interval(coeffs) -> np.ndarray:
    if len(np.atleast_1d(coeffs)) < 2:
        return np.empty(0)
    roots = npoly.polyroots(coeffs)
    real = roots[np.abs(roots.imag) < 1e-9].real
    return real[(real > 0.0) & (real < 1.0)]


def _rejection(target, bound: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """Vectorized uniform-envelope rejection; deterministic for a given rng state."""
    out = np.empty(n)
    filled = 0
    proposals = 0
    budget = max(_MAX_PROPOSALS, 100 * n)
    while filled < n:
        if proposals >= budget:
            raise SamplingError(
                f"rejection sampler used {proposals} proposals for {n} draws"
            )
        m = int(1.3 * (n - filled) * bound) + 16
        m = min(m, budget - proposals)
        proposals += m
        x = rng.random(m)
        u = rng.random(m)
        acc = x[u * bound <= target(x)]
        take = min(n - filled, acc.size)
        out[filled : filled + take] = acc[:take]
        filled += take
    return out


# -- flat operation aliases ----------------------------------------------------


def density_eval(rho: SingleSiteDensity, j: int, x):
    """j-th derivative of the density at x (zero outside the support)."""
    return rho.eval(x, j)


def sample(rho: SingleSiteDensity, rng: np.random.Generator, size: int | None = None):
    return rho.sample(rng, size)


def sample_tilted(
    rho: SingleSiteDensity, j: int, rng: np.random.Generator, size: int | None = None
):
    """Draw from the order-j tilted law; returns (value, sign, weight)."""
    sampler = rho.tilted(j)
    value, sign = sampler.sample(rng, size)
    return value, sign, sampler.weight


def l1_norm_of_derivative(rho: SingleSiteDensity, j: int) -> float:
    return rho.l1_norm(j)
