"""Monte Carlo estimators over i.i.d. block disorder.

Determinism contract: sample i of a run draws its own generator seeded by
(master_seed, i) and always draws the full-length disorder vector of the
model, so the couplings seen by sample i do not depend on the volume under
study, the worker count, or any other estimator sharing the seed.  Values are
stored per sample and reduced in index order, which makes every estimate
bit-reproducible and lets coupled quantities (telescoping differences,
cross-volume comparisons) share their randomness exactly.

Energy derivatives of E[tr(P_0 (h - E - i eps)^{-1})] come in three routes:
the score route reweights samples by the logarithmic derivatives of the
single-site law, the resolvent route evaluates l! tr(P_0 G^{l+1}) exactly per
sample, and a tilted route (small volumes only) replaces coordinates by draws
from normalized derivative magnitudes.  Routes agree in expectation; tests
hold them against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .lattice import ModelSpec

_SCORE_MAX_ORDER = 2
_TILTED_MAX_BLOCKS = 6


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with a standard error and its provenance."""

    mean: complex | float
    stderr: float
    n_samples: int
    seed: int

    @classmethod
    def from_samples(cls, values: np.ndarray, seed: int) -> "Estimate":
        values = np.asarray(values)
        n = values.shape[0]
        mean = values.mean()
        if n > 1:
            if np.iscomplexobj(values):
                var = values.real.var(ddof=1) + values.imag.var(ddof=1)
            else:
                var = values.var(ddof=1)
            stderr = float(np.sqrt(var / n))
        else:
            stderr = 0.0
        if not np.iscomplexobj(values):
            mean = float(mean)
        else:
            mean = complex(mean)
        return cls(mean, stderr, n, seed)

    def agrees_with(self, other: "Estimate", n_sigma: float = 4.0) -> bool:
        """Two-sample comparison at n_sigma combined standard errors."""
        gap = abs(complex(self.mean) - complex(other.mean))
        return gap <= n_sigma * math.hypot(self.stderr, other.stderr)


@dataclass(frozen=True)
class McConfig:
    """Sampling plan shared by the estimators.

    The telescope preset additionally pins the fractional exponent below 1/2,
    which is what the two-resolvent bound behind the telescoping argument
    needs.
    """

    n_samples: int
    master_seed: int
    energies: tuple[float, ...] = ()
    eps_values: tuple[float, ...] = (0.5, 0.2, 0.1, 0.05)
    s: float = 1.0 / 3.0
    ell: int = 0
    workers: int = 1
    preset: str = ""

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("need at least one sample")
        if self.workers < 1:
            raise ValueError("need at least one worker")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"fractional exponent s={self.s} outside (0, 1)")
        if self.ell < 0:
            raise ValueError("derivative order must be non-negative")
        if any(e <= 0.0 for e in self.eps_values):
            raise ValueError("imaginary shifts must be positive")
        if self.preset == "telescope" and not self.s < 0.5:
            raise ValueError(
                f"telescope preset needs s < 1/2, got s={self.s}"
            )


@dataclass(frozen=True)
class DecayFit:
    """Exponential decay fit: log(mean) = log_prefactor - rate * distance."""

    rate: float
    log_prefactor: float
    r_squared: float
    window: tuple[float, float]
    n_points: int


@dataclass(frozen=True)
class TelescopeReport:
    """Per-volume boundary terms of a telescoped finite-volume expectation."""

    k_values: tuple[int, ...]
    terms: tuple[Estimate, ...]
    base: Estimate
    direct: Estimate
    partial_sums: np.ndarray
    fit: DecayFit | None
    summability_supported: bool
    ell: int
    energy: float
    eps: float


# -- sampling plumbing ---------------------------------------------------------


def _sample_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((int(master_seed), int(index)))


def draw_disorder(model: ModelSpec, master_seed: int, index: int) -> np.ndarray:
    """Full-length block disorder for one sample index.

    Always the full model, never a prefix: volume restrictions slice this
    vector, so a block's coupling is the same in every volume that contains it.
    """
    rng = _sample_rng(master_seed, index)
    shared = model.uniform_density()
    if shared is not None:
        return shared.sample(rng, size=model.n_blocks)
    return np.array(
        [model.block_density(b).sample(rng) for b in range(model.n_blocks)]
    )


def _run_samples(n_samples, workers, width, fn, dtype=np.complex128) -> np.ndarray:
    """Fill a (n_samples, width) array with fn(i) rows, in index order.

    Workers split the index range into contiguous chunks; the result array is
    identical for any worker count, so reductions over it are bit-stable.
    """
    values = np.empty((n_samples, width), dtype=dtype)
    if workers <= 1 or n_samples < 2 * workers:
        for i in range(n_samples):
            values[i] = fn(i)
        return values
    from concurrent.futures import ThreadPoolExecutor

    bounds = np.linspace(0, n_samples, workers + 1).astype(int)

    def chunk(lo: int, hi: int):
        for i in range(lo, hi):
            values[i] = fn(i)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(chunk, lo, hi)
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for fut in futures:
            fut.result()
    return values


class _Volume:
    """Cached assembly pieces for one prefix volume of a model."""

    def __init__(self, model: ModelSpec, n_prefix_sites: int):
        self.model = model
        self.n_sites = int(n_prefix_sites)
        self.n_blocks = model.projections.blocks_for_prefix(self.n_sites)
        self.h0 = model.free.matrix(self.n_sites)
        self.sizes = model.projections.block_sizes()[: self.n_blocks]
        self.block0 = model.projections.sites_of_block(0)
        self._diag = np.arange(self.n_sites)

    def hamiltonian(self, om_prefix: np.ndarray) -> np.ndarray:
        h = self.h0.copy()
        h[self._diag, self._diag] += self.model.coupling * np.repeat(
            om_prefix, self.sizes
        )
        return h

    def eigen_weights(self, om_prefix: np.ndarray):
        evals, evecs = np.linalg.eigh(self.hamiltonian(om_prefix))
        w = np.sum(np.abs(evecs[self.block0, :]) ** 2, axis=0)
        return evals, w


def _weighted_resolvent_power(evals, weights, zs, power: int):
    """sum_j w_j / (lambda_j - z)^power for each z."""
    return np.sum(
        weights[:, None] / (evals[:, None] - zs[None, :]) ** power, axis=0
    )


def _score_sum(model: ModelSpec, om_full: np.ndarray, n_blocks: int, ell: int):
    """Sum over the first n_blocks coordinates of the log-density weights."""
    if ell == 0:
        return 1.0
    x = om_full[:n_blocks]
    shared = model.uniform_density()
    if shared is not None:
        ld = shared.log_derivative(x)
        if ell == 1:
            return float(ld.sum())
        s1 = float(ld.sum())
        return s1 * s1 + float(shared.log_curvature(x).sum())
    ld = np.array(
        [model.block_density(b).log_derivative(x[b]) for b in range(n_blocks)]
    )
    if ell == 1:
        return float(ld.sum())
    s1 = float(ld.sum())
    lc = sum(model.block_density(b).log_curvature(x[b]) for b in range(n_blocks))
    return s1 * s1 + float(lc)


def _check_score_preconditions(model: ModelSpec, ell: int, n_blocks: int):
    if ell == 0:
        return
    if ell > _SCORE_MAX_ORDER:
        raise ValueError(
            f"score route supports derivative orders up to {_SCORE_MAX_ORDER}, got {ell}"
        )
    for b in range(n_blocks):
        dens = model.block_density(b)
        if ell > dens.continuity_order:
            raise ValueError(
                f"derivative order {ell} exceeds the continuity order "
                f"{dens.continuity_order} of the block-{b} density"
            )
        if dens.p < 2:
            raise ValueError(
                "score weights have infinite variance for p < 2; "
                f"block {b} has p={dens.p}"
            )


# -- density of states ----------------------------------------------------------


def smoothed_dos_curve(
    model: ModelSpec,
    n_prefix_sites: int,
    energies: Sequence[float],
    eps: float,
    mc: McConfig,
) -> list[Estimate]:
    """(1/pi) E[Im tr(P_0 (h - E - i eps)^{-1})] on an energy grid."""
    if not eps > 0.0:
        raise ValueError("imaginary shift must be positive")
    vol = _Volume(model, n_prefix_sites)
    zs = np.asarray(energies, dtype=float) + 1j * eps

    def one(i: int):
        om = draw_disorder(model, mc.master_seed, i)
        evals, w = vol.eigen_weights(om[: vol.n_blocks])
        return np.imag(_weighted_resolvent_power(evals, w, zs, 1)) / np.pi

    values = _run_samples(mc.n_samples, mc.workers, zs.size, one, dtype=np.float64)
    return [Estimate.from_samples(values[:, k], mc.master_seed) for k in range(zs.size)]


def estimate_smoothed_dos(
    model: ModelSpec, n_prefix_sites: int, energy: float, eps: float, mc: McConfig
) -> Estimate:
    return smoothed_dos_curve(model, n_prefix_sites, [energy], eps, mc)[0]


def ids_curve(
    model: ModelSpec,
    n_prefix_sites: int,
    energies: Sequence[float],
    mc: McConfig,
    normalized: bool = False,
) -> list[Estimate]:
    """E[tr(P_0 E_h((-inf, E]))] on an energy grid; ties at E are counted.

    normalized divides by tr(P_0), turning the value into an occupation
    fraction of the probe block.
    """
    vol = _Volume(model, n_prefix_sites)
    es = np.asarray(energies, dtype=float)
    scale = 1.0 / len(vol.block0) if normalized else 1.0

    def one(i: int):
        om = draw_disorder(model, mc.master_seed, i)
        evals, w = vol.eigen_weights(om[: vol.n_blocks])
        return scale * np.sum(
            w[:, None] * (evals[:, None] <= es[None, :]), axis=0
        )

    values = _run_samples(mc.n_samples, mc.workers, es.size, one, dtype=np.float64)
    return [Estimate.from_samples(values[:, k], mc.master_seed) for k in range(es.size)]


def estimate_ids(
    model: ModelSpec,
    n_prefix_sites: int,
    energy: float,
    mc: McConfig,
    normalized: bool = False,
) -> Estimate:
    return ids_curve(model, n_prefix_sites, [energy], mc, normalized)[0]


def dos_derivative_curve(
    model: ModelSpec,
    n_prefix_sites: int,
    energies: Sequence[float],
    eps: float,
    ell: int,
    mc: McConfig,
    method: str = "score",
    score_blocks: int | None = None,
) -> list[Estimate]:
    """d^ell/dE^ell E[tr(P_0 (h - E - i eps)^{-1})] on an energy grid.

    method "score" multiplies the trace by the sampled log-density weights
    (antithetic in omega -> 1 - omega, which cancels the odd part of the
    weight); method "resolvent" evaluates ell! tr(P_0 G^{ell+1}) per sample,
    which is the same derivative without reweighting.  score_blocks may
    extend the weight sum over extra blocks beyond the volume; the extra
    coordinates integrate out, so the mean is unchanged.
    """
    if not eps > 0.0:
        raise ValueError("imaginary shift must be positive")
    if ell < 0:
        raise ValueError("derivative order must be non-negative")
    vol = _Volume(model, n_prefix_sites)
    zs = np.asarray(energies, dtype=float) + 1j * eps
    lam_pow = model.coupling ** (-ell)

    if method == "score":
        _check_score_preconditions(model, ell, vol.n_blocks)
        n_score = vol.n_blocks if score_blocks is None else int(score_blocks)
        if not vol.n_blocks <= n_score <= model.n_blocks:
            raise ValueError(
                f"score_blocks must lie in [{vol.n_blocks}, {model.n_blocks}]"
            )

        def one(i: int):
            om = draw_disorder(model, mc.master_seed, i)
            evals, w = vol.eigen_weights(om[: vol.n_blocks])
            tr = _weighted_resolvent_power(evals, w, zs, 1)
            if ell == 0:
                return tr
            row = tr * (_score_sum(model, om, n_score, ell) * lam_pow)
            om_m = 1.0 - om  # the bump laws are symmetric about 1/2
            evals_m, w_m = vol.eigen_weights(om_m[: vol.n_blocks])
            tr_m = _weighted_resolvent_power(evals_m, w_m, zs, 1)
            row_m = tr_m * (_score_sum(model, om_m, n_score, ell) * lam_pow)
            return 0.5 * (row + row_m)

    elif method == "resolvent":
        if ell > 6:
            raise ValueError(f"resolvent powers above 7 are not supported (ell={ell})")
        fac = float(math.factorial(ell))

        def one(i: int):
            om = draw_disorder(model, mc.master_seed, i)
            evals, w = vol.eigen_weights(om[: vol.n_blocks])
            return fac * _weighted_resolvent_power(evals, w, zs, ell + 1)

    else:
        raise ValueError(f"unknown method {method!r}")

    values = _run_samples(mc.n_samples, mc.workers, zs.size, one)
    return [Estimate.from_samples(values[:, k], mc.master_seed) for k in range(zs.size)]


def estimate_dos_derivative(
    model: ModelSpec,
    n_prefix_sites: int,
    energy: float,
    eps: float,
    ell: int,
    mc: McConfig,
    method: str = "score",
    score_blocks: int | None = None,
) -> Estimate:
    return dos_derivative_curve(
        model, n_prefix_sites, [energy], eps, ell, mc, method, score_blocks
    )[0]


def estimate_dos_derivative_tilted(
    model: ModelSpec,
    n_prefix_sites: int,
    energy: float,
    eps: float,
    ell: int,
    mc: McConfig,
    experimental_high_order: bool = False,
) -> Estimate:
    """Derivative estimate through per-coordinate tilted sampling.

    Expands the ell-th derivative over multi-indices (k_0, ..., k_{B-1}) with
    |k| = ell, draws coordinate b from |rho^(k_b)| / ||rho^(k_b)||_1 and
    reweights by sign and L1 norm.  Exponentially many terms in ell, so this
    is a cross-check for tiny volumes, not a production path.  Orders above 2
    are untested territory and need experimental_high_order=True.
    """
    from itertools import product as _product

    if not eps > 0.0:
        raise ValueError("imaginary shift must be positive")
    vol = _Volume(model, n_prefix_sites)
    if vol.n_blocks > _TILTED_MAX_BLOCKS:
        raise ValueError(
            f"tilted route is limited to {_TILTED_MAX_BLOCKS} blocks, "
            f"volume has {vol.n_blocks}"
        )
    if ell < 1:
        raise ValueError("tilted route needs a derivative order of at least 1")
    if ell > 2 and not experimental_high_order:
        raise ValueError(
            "orders above 2 in the tilted route need experimental_high_order=True"
        )
    for b in range(vol.n_blocks):
        if ell > model.block_density(b).continuity_order:
            raise ValueError(
                f"derivative order {ell} exceeds the continuity order of block {b}"
            )
    z = complex(energy, eps)
    multis = [
        k
        for k in _product(range(ell + 1), repeat=vol.n_blocks)
        if sum(k) == ell
    ]
    coeffs = [
        math.factorial(ell) / math.prod(math.factorial(kb) for kb in k)
        for k in multis
    ]
    samplers = {
        (b, o): model.block_density(b).tilted(o)
        for b in range(vol.n_blocks)
        for o in range(1, ell + 1)
        if o <= model.block_density(b).continuity_order
    }
    lam_pow = model.coupling ** (-ell)

    def one(i: int):
        rng = _sample_rng(mc.master_seed, i)
        total = 0.0 + 0.0j
        for k, coeff in zip(multis, coeffs):
            om = np.empty(vol.n_blocks)
            factor = 1.0
            for b, order in enumerate(k):
                if order == 0:
                    om[b] = model.block_density(b).sample(rng)
                else:
                    smp = samplers[(b, order)]
                    x, sgn = smp.sample(rng)
                    om[b] = x
                    factor *= sgn * smp.weight
            evals, w = vol.eigen_weights(om)
            tr = _weighted_resolvent_power(evals, w, np.array([z]), 1)[0]
            total += coeff * factor * tr
        return np.array([total * lam_pow])

    values = _run_samples(mc.n_samples, mc.workers, 1, one)
    return Estimate.from_samples(values[:, 0], mc.master_seed)


# -- fractional moments ----------------------------------------------------------


def fractional_moment_profile(
    model: ModelSpec,
    n_prefix_sites: int,
    z,
    source_block: int,
    target_blocks: Sequence[int],
    s: float,
    mc: McConfig,
) -> list[Estimate]:
    """E[ ||P_t (h - z)^{-1} P_src||^s ] for each target block t.

    One factorization per sample serves every target, so the per-distance
    estimates share their disorder realizations.
    """
    from .spectral import _as_z

    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional exponent s={s} outside (0, 1)")
    zc = _as_z(z)
    vol = _Volume(model, n_prefix_sites)
    targets = [int(t) for t in target_blocks]
    for t in [source_block, *targets]:
        if not 0 <= t < vol.n_blocks:
            raise ValueError(f"block {t} outside the prefix volume")
    src_sites = model.projections.sites_of_block(source_block)
    tgt_sites = [model.projections.sites_of_block(t) for t in targets]
    n = vol.n_sites
    rhs = np.zeros((n, len(src_sites)), dtype=np.complex128)
    rhs[src_sites, np.arange(len(src_sites))] = 1.0

    def one(i: int):
        om = draw_disorder(model, mc.master_seed, i)
        h = vol.hamiltonian(om[: vol.n_blocks]).astype(np.complex128)
        h[np.arange(n), np.arange(n)] -= zc
        lu, piv = sla.lu_factor(h, check_finite=False)
        cols = sla.lu_solve((lu, piv), rhs, check_finite=False)
        out = np.empty(len(targets))
        for j, idx in enumerate(tgt_sites):
            block = cols[idx, :]
            if block.shape == (1, 1):
                out[j] = abs(block[0, 0])
            else:
                out[j] = np.linalg.norm(block, 2)
        return out**s

    values = _run_samples(
        mc.n_samples, mc.workers, len(targets), one, dtype=np.float64
    )
    return [
        Estimate.from_samples(values[:, k], mc.master_seed)
        for k in range(len(targets))
    ]


def estimate_fractional_moment(
    model: ModelSpec,
    n_prefix_sites: int,
    z,
    source_block: int,
    target_block: int,
    s: float,
    mc: McConfig,
) -> Estimate:
    """E[ ||P_target (h - z)^{-1} P_source||^s ] on one prefix volume."""
    return fractional_moment_profile(
        model, n_prefix_sites, z, source_block, [target_block], s, mc
    )[0]


def fit_decay(
    pairs: Sequence[tuple[float, Estimate]],
    window: tuple[float, float] | None = None,
) -> DecayFit:
    """Least-squares exponential decay fit through (distance, estimate) pairs.

    Only strictly positive means are usable on the log scale; points whose
    mean is within two standard errors of zero are dropped as noise floor.
    At least three points must survive.
    """
    pts = []
    any_positive = False
    for dist, est in pairs:
        m = est.mean.real if isinstance(est.mean, complex) else float(est.mean)
        if m > 0.0:
            any_positive = True
        if window is not None and not window[0] <= dist <= window[1]:
            continue
        if m <= 0.0 or m <= 2.0 * est.stderr:
            continue
        pts.append((float(dist), math.log(m)))
    if not any_positive:
        raise ValueError("all means are zero: inputs look exactly decoupled")
    if len(pts) < 3:
        raise ValueError(f"need at least 3 usable points, have {len(pts)}")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-30:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    win = window if window is not None else (float(x.min()), float(x.max()))
    return DecayFit(
        rate=float(-slope),
        log_prefactor=float(intercept),
        r_squared=float(r2),
        window=(float(win[0]), float(win[1])),
        n_points=len(pts),
    )


# -- telescoping over growing volumes ---------------------------------------------


def telescoping_term(
    model: ModelSpec,
    k_blocks: int,
    ell: int,
    energy: float,
    eps: float,
    mc: McConfig,
) -> Estimate:
    """d^ell/dE^ell E[tr(P_0 G_{K+1}) - tr(P_0 G_K)] with coupled disorder.

    K counts blocks of the smaller volume; both volumes see the same
    couplings on shared blocks, so at ell = 0 consecutive terms telescope
    exactly sample by sample.
    """
    report = telescope_series_diagnostic(
        model, range(k_blocks, k_blocks + 1), ell, energy, eps, mc
    )
    return report.terms[0]


def telescope_series_diagnostic(
    model: ModelSpec,
    k_range,
    ell: int,
    energy: float,
    eps: float,
    mc: McConfig,
) -> TelescopeReport:
    """Boundary terms T_K for K in k_range, their decay fit, and partial sums.

    All terms, the base-volume estimate, and the direct estimate on the
    largest volume come from one pass over shared samples.
    """
    ks = [int(k) for k in k_range]
    if not ks or ks != list(range(ks[0], ks[-1] + 1)):
        raise ValueError("k_range must be a non-empty contiguous ascending range")
    if ks[0] < 1 or ks[-1] + 1 > model.n_blocks:
        raise ValueError(
            f"k_range {ks[0]}..{ks[-1]} needs volumes of {ks[-1] + 1} blocks, "
            f"model has {model.n_blocks}"
        )
    if ell > 0:
        _check_score_preconditions(model, ell, ks[-1] + 1)
    z = np.array([complex(energy, eps)])
    vols = {
        k: _Volume(model, model.projections.prefix_sites(k))
        for k in range(ks[0], ks[-1] + 2)
    }
    lam_pow = model.coupling ** (-ell)
    n_terms = len(ks)

    def traces(om):
        return {
            k: _weighted_resolvent_power(*vols[k].eigen_weights(om[:k]), z, 1)[0]
            for k in vols
        }

    def weighted_row(om):
        tr = traces(om)
        row = np.empty(n_terms + 2, dtype=np.complex128)
        for j, k in enumerate(ks):
            diff = tr[k + 1] - tr[k]
            row[j] = diff * (_score_sum(model, om, k + 1, ell) * lam_pow)
        row[n_terms] = tr[ks[0]] * (_score_sum(model, om, ks[0], ell) * lam_pow)
        row[n_terms + 1] = tr[ks[-1] + 1] * (
            _score_sum(model, om, ks[-1] + 1, ell) * lam_pow
        )
        return row

    def one(i: int):
        om = draw_disorder(model, mc.master_seed, i)
        row = weighted_row(om)
        if ell == 0:
            return row
        return 0.5 * (row + weighted_row(1.0 - om))

    values = _run_samples(mc.n_samples, mc.workers, n_terms + 2, one)
    terms = tuple(
        Estimate.from_samples(values[:, j], mc.master_seed) for j in range(n_terms)
    )
    base = Estimate.from_samples(values[:, n_terms], mc.master_seed)
    direct = Estimate.from_samples(values[:, n_terms + 1], mc.master_seed)
    partial = complex(base.mean) + np.cumsum([complex(t.mean) for t in terms])
    abs_pairs = [
        (float(k), Estimate(abs(complex(t.mean)), t.stderr, t.n_samples, t.seed))
        for k, t in zip(ks, terms)
    ]
    try:
        fit = fit_decay(abs_pairs)
    except ValueError:
        fit = None
    supported = fit is not None and fit.rate > 0.0 and fit.r_squared >= 0.9
    return TelescopeReport(
        k_values=tuple(ks),
        terms=terms,
        base=base,
        direct=direct,
        partial_sums=partial,
        fit=fit,
        summability_supported=supported,
        ell=ell,
        energy=energy,
        eps=eps,
    )
