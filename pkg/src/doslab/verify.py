"""Randomized numerical certification of the operator identities behind the
estimators.

Each ``verify_*`` function checks one analytic statement on a deterministic
random corpus and returns a :class:`CheckReport`: an explicit pass/fail with
the tolerances used, summary statistics, and a serialized witness for the
worst instance.  Inequality checks always carry an additive slack (1e-10
unless stated) so that honest floating-point noise cannot flip a true
statement to "failed".

The checks:

* :func:`verify_finite_smooth` - the smoothed trace of the resolvent equals
  its disorder-space integration-by-parts form, derivative order by order.
* :func:`verify_resolvent_average_bound` - a two-sided bound: the norm of a
  disorder-averaged resolvent difference is controlled by the average of a
  fractional power of the same difference over a shifted window.
* :func:`verify_semigroup_hoelder` - Hoelder continuity of the contraction
  semigroup map ``X -> exp(itX)`` in the generator.
* :func:`verify_resolvent_semigroup_identity` - the averaged resolvent of a
  strictly dissipative matrix equals a truncated oscillatory time integral.
* :func:`verify_spectral_averaging` - rank-respecting spectral averaging
  produces a measure with bounded density.
* :func:`verify_boundary_derivatives` - boundary values of the smoothed
  density and its derivatives stay uniformly bounded as the smoothing width
  shrinks, and converge at first order.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .disorder import SingleSiteDensity
from .quadrature import panel_rule

DEFAULT_SLACK = 1e-10

# eig-reconstruction of exp(itX) is accurate while the eigenvector basis is
# well conditioned; past this we pay for scipy's scaling-and-squaring instead
_EIG_COND_LIMIT = 1e4

_STRUCTURE_TOL = 1e-12


# ---------------------------------------------------------------------------
# reports


def _sanitize(obj):
    """Make a value JSON-serializable: arrays to lists, complex to re/im."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return repr(obj)


@dataclass
class CheckReport:
    """Outcome of one verification check.

    statistics holds the summary numbers the pass/fail decision was based
    on; witness serializes the worst offending instance (or the extremal
    one when the check passed) so a failure is reproducible by eye.
    """

    name: str
    passed: bool
    slack: float
    statistics: dict = field(default_factory=dict)
    witness: dict | None = None

    def to_json(self, indent: int | None = None) -> str:
        payload = {
            "name": self.name,
            "passed": bool(self.passed),
            "slack": float(self.slack),
            "statistics": _sanitize(self.statistics),
            "witness": _sanitize(self.witness),
        }
        return json.dumps(payload, indent=indent)


# ---------------------------------------------------------------------------
# corpora


@dataclass(frozen=True)
class Corpus:
    """Deterministic family of random test matrices.

    Every instance is generated from ``default_rng((seed, index))`` so the
    corpus is reproducible bit for bit and instances can be materialized in
    any order.  ``delta > 0`` switches pair draws from independent pairs to
    perturbative ones, ``B = A + delta * C`` with ``C`` Hermitian of unit
    spectral norm.
    """

    n_instances: int
    dim_min: int = 2
    dim_max: int = 6
    seed: int = 0
    dissipative: bool = False
    min_imag: float = 0.5
    delta: float = 0.0

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("corpus needs at least one instance")
        if not 1 <= self.dim_min <= self.dim_max:
            raise ValueError(
                f"bad dimension range [{self.dim_min}, {self.dim_max}]"
            )
        if self.dissipative and self.min_imag < 0:
            raise ValueError("dissipative corpus needs min_imag >= 0")
        if self.delta < 0:
            raise ValueError(f"perturbation scale must be >= 0, got {self.delta}")

    def rng(self, index: int) -> np.random.Generator:
        return np.random.default_rng((self.seed, index))

    def dim(self, index: int) -> int:
        if self.dim_min == self.dim_max:
            return self.dim_min
        return int(self.rng(index).integers(self.dim_min, self.dim_max + 1))

    def _hermitian(self, rng, d: int) -> np.ndarray:
        g = rng.standard_normal((d, d))
        return (g + g.T) / 2.0

    def _psd(self, rng, d: int) -> np.ndarray:
        m = rng.standard_normal((d, d))
        return m @ m.T / d

    def _check_structure(self, a: np.ndarray) -> None:
        herm = np.max(np.abs(a - a.conj().T))
        if herm > _STRUCTURE_TOL:
            raise AssertionError(f"generated matrix not Hermitian: defect {herm}")

    def matrix(self, index: int) -> np.ndarray:
        """One matrix: Hermitian, or strictly dissipative (Im part >= min_imag)."""
        rng = self.rng(index)
        d = self.dim_min if self.dim_min == self.dim_max else int(
            rng.integers(self.dim_min, self.dim_max + 1)
        )
        h = self._hermitian(rng, d)
        self._check_structure(h)
        if not self.dissipative:
            return h
        q = self.min_imag * np.eye(d) + self._psd(rng, d)
        self._check_structure(q)
        lo = float(np.linalg.eigvalsh((q + q.T) / 2.0)[0])
        if lo < self.min_imag - _STRUCTURE_TOL:
            raise AssertionError(f"dissipative part below floor: {lo}")
        return h + 1j * q

    def pair(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Two matrices of equal shape and structure (independent, or A and
        a delta-perturbation of A when delta > 0)."""
        rng = self.rng(index)
        d = self.dim_min if self.dim_min == self.dim_max else int(
            rng.integers(self.dim_min, self.dim_max + 1)
        )
        ha = self._hermitian(rng, d)
        hb = self._hermitian(rng, d)
        if self.dissipative:
            qa = self._psd(rng, d)
            qb = self._psd(rng, d)
            a = ha + 1j * qa
            b = hb + 1j * qb
        else:
            a, b = ha, hb
        if self.delta > 0:
            c = self._hermitian(rng, d)
            if self.dissipative:
                c = c + 1j * self._psd(rng, d)
            c = c / np.linalg.norm(c, 2)
            b = a + self.delta * c
        for m in (a, b):
            self._check_structure(m.real + 0.0)
            if self.dissipative:
                im = (m - m.conj().T) / 2j
                lo = float(np.linalg.eigvalsh(im)[0])
                if lo < -_STRUCTURE_TOL:
                    raise AssertionError(f"dissipative part not PSD: {lo}")
        return a, b

    def bound_instance(self, index: int):
        """(A, B, F1, F2, z) for the averaged-resolvent bound: Hermitian pair,
        two PSD weights, and a spectral parameter in the upper half plane."""
        rng = self.rng(index)
        d = self.dim_min if self.dim_min == self.dim_max else int(
            rng.integers(self.dim_min, self.dim_max + 1)
        )
        a = self._hermitian(rng, d)
        b = self._hermitian(rng, d)
        if self.delta > 0:
            c = self._hermitian(rng, d)
            c = c / np.linalg.norm(c, 2)
            b = a + self.delta * c
        f1 = self._psd(rng, d)
        f2 = self._psd(rng, d)
        energy = float(rng.uniform(-2.0, 2.0))
        eta = float(rng.uniform(0.1, 1.0))
        return a, b, f1, f2, complex(energy, eta)


# ---------------------------------------------------------------------------
# smooth cutoffs and scaled densities


def smoothstep(t):
    """C-infinity step: exactly 0 for t <= 0, exactly 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    rising = np.zeros_like(t)
    falling = np.zeros_like(t)
    up = t > 0.0
    down = t < 1.0
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        rising[up] = np.exp(-1.0 / t[up])
        falling[down] = np.exp(-1.0 / (1.0 - t[down]))
    out = np.where(up, rising / np.where(up, rising + falling, 1.0), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BumpPair:
    """Two compactly supported densities on (0, R) plus the shifted smooth
    cutoff used on the other side of the two-sided bound.

    ``cutoff(x)`` equals ``indicator(x + 5R/2 + 1)`` where ``indicator`` is a
    smooth version of the indicator of (0, 2R+1) with transition width
    ``transition``: exactly one on the core, exactly zero outside.
    """

    r: float = 1.0
    rho1: SingleSiteDensity = field(default_factory=lambda: SingleSiteDensity(3))
    rho2: SingleSiteDensity = field(default_factory=lambda: SingleSiteDensity(3))
    tau: float = 1.0
    transition: float = 0.1

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError(f"support radius must be positive, got {self.r}")
        if not 0 < self.transition < (2 * self.r + 1) / 2:
            raise ValueError(f"transition width {self.transition} too large")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def density1(self, x):
        return self.rho1.eval(np.asarray(x, dtype=float) / self.r) / self.r

    def density2(self, x):
        return self.rho2.eval(np.asarray(x, dtype=float) / self.r) / self.r

    def smooth_indicator(self, y):
        """Smooth indicator of (0, 2R+1): one on [w, 2R+1-w], zero outside."""
        y = np.asarray(y, dtype=float)
        top = 2.0 * self.r + 1.0
        return smoothstep(y / self.transition) * smoothstep(
            (top - y) / self.transition
        )

    def cutoff(self, x):
        """The indicator shifted to live on (-5R/2 - 1, -R/2)."""
        return self.smooth_indicator(
            np.asarray(x, dtype=float) + 2.5 * self.r + 1.0
        )

    def cutoff_support(self) -> tuple[float, float]:
        return (-2.5 * self.r - 1.0, -self.r / 2.0)


# ---------------------------------------------------------------------------
# exact Stieltjes transforms of polynomial densities


def _stieltjes_division(coeffs: np.ndarray, zs: np.ndarray):
    """Near-field form: q(x) = (x - z) b(x) + q(z), so the integral over
    (0,1) of q(x)/(x - z) is integral(b) + q(z)(log(1-z) - log(-z))."""
    desc = np.asarray(coeffs, dtype=float)[::-1]  # descending powers
    rem = np.full(zs.shape, desc[0], dtype=complex)
    quot_integral = np.zeros(zs.shape, dtype=complex)
    degree = len(desc) - 1
    for k, c in enumerate(desc[1:], start=1):
        # rem currently holds the quotient coefficient of x^(degree - k)
        quot_integral += rem / (degree - k + 1.0)
        rem = rem * zs + c
    log_term = np.log(1.0 - zs) - np.log(-zs)
    return quot_integral + rem * log_term


def _stieltjes_series(coeffs: np.ndarray, zs: np.ndarray):
    """Far-field form: -sum_k m_k / z^(k+1) with m_k the moments of q.
    Converges geometrically for |z| > 1; used from |z| >= 2."""
    coeffs = np.asarray(coeffs, dtype=float)
    j = np.arange(len(coeffs))
    out = np.zeros(zs.shape, dtype=complex)
    zinv = 1.0 / zs
    power = zinv.copy()
    scale = 0.0
    for k in range(90):
        moment = float(np.sum(coeffs / (j + k + 1.0)))
        term = moment * power
        out -= term
        scale = max(scale, float(np.max(np.abs(term))))
        # leading moments can vanish identically, so never break early
        if k >= 10 and np.all(np.abs(term) < 1e-18 * scale):
            break
        power = power * zinv
    return out


def _stieltjes_poly(coeffs: np.ndarray, zs: np.ndarray):
    """integral over (0,1) of q(x) / (x - z) for a polynomial q.

    The closed division form cancels catastrophically once |z| dwarfs the
    support, so the far field switches to the moment series."""
    zs = np.asarray(zs, dtype=complex)
    out = np.empty(zs.shape, dtype=complex)
    far = np.abs(zs) >= 2.0
    if np.any(~far):
        out[~far] = _stieltjes_division(coeffs, zs[~far])
    if np.any(far):
        out[far] = _stieltjes_series(coeffs, zs[far])
    return out


def stieltjes_transform(rho: SingleSiteDensity, order: int, zs):
    """integral of rho^(order)(x) / (x - z) dx for z off [0, 1].

    Equals the order-th E-derivative of the transform of rho itself as long
    as order <= continuity_order + 1 (the boundary terms of integration by
    parts vanish there).
    """
    if not 0 <= order <= rho.continuity_order + 1:
        raise ValueError(
            f"order {order} outside [0, {rho.continuity_order + 1}]"
        )
    zs = np.asarray(zs, dtype=complex)
    if np.any(zs.imag == 0):
        raise ValueError("transform evaluated on the real axis")
    out = _stieltjes_poly(rho.derivative_coefficients(order), zs)
    return out if out.ndim else complex(out)


# ---------------------------------------------------------------------------
# batched linear algebra helpers


def _batched_expi(x: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """exp(i t X) for every t, via one eigendecomposition of X.

    Falls back to scipy's expm when the eigenvector basis is ill
    conditioned (defective or nearly so)."""
    w, v = np.linalg.eig(x)
    if np.linalg.cond(v) > _EIG_COND_LIMIT:
        return np.stack([scipy.linalg.expm(1j * t * x) for t in ts])
    vinv = np.linalg.inv(v)
    phases = np.exp(1j * np.multiply.outer(ts, w))  # (T, d)
    return np.einsum("ij,tj,jk->tik", v, phases, vinv, optimize=True)


def _spectral_norms(stack: np.ndarray) -> np.ndarray:
    return np.linalg.svd(stack, compute_uv=False)[..., 0]


def _psd_sqrt(f: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(f)
    w = np.maximum(w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


# ---------------------------------------------------------------------------
# smoothed trace versus its disorder-space derivative forms


def _score_factors(density: SingleSiteDensity, pts: np.ndarray, ell: int):
    """Total score factor of order ell for a product density at pts (M, K)."""
    if ell == 0:
        return np.ones(pts.shape[0])
    s1 = density.log_derivative(pts).sum(axis=1)
    if ell == 1:
        return s1
    s2 = density.log_curvature(pts).sum(axis=1)
    return s1 * s1 + s2


def _finite_smooth_curves(
    free, coupling, density, eps, ell, energies, blocks, n_nodes, fd_step
):
    """Both derivative routes on the energy grid, from one eigenvalue pass.

    Processes the tensor quadrature grid in node chunks so memory stays flat
    even at five sites with a refined rule."""
    n_sites = free.shape[0]
    pts_1d, w_1d = panel_rule(0.0, 1.0, n_nodes, 1)
    n_blocks = len(blocks)
    grids = np.meshgrid(*([pts_1d] * n_blocks), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)  # (M, K)
    wgrids = np.meshgrid(*([w_1d] * n_blocks), indexing="ij")
    weights = np.ones_like(wgrids[0])
    for g in wgrids:
        weights = weights * g
    weights = weights.ravel() * density.eval(pts).prod(axis=1)
    scores = _score_factors(density, pts, ell)

    # 5-point central stencil for the ell-th derivative of the plain trace
    if ell == 0:
        stencil = np.array([0.0, 0.0, 1.0, 0.0, 0.0])
    elif ell == 1:
        stencil = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
    else:
        stencil = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    offsets = np.arange(-2, 3) * fd_step
    zs = energies[:, None] + offsets[None, :] + 1j * eps  # (E, 5)
    zflat = zs.ravel()

    h_vals = np.zeros(zs.size, dtype=complex)
    form = np.zeros(len(energies), dtype=complex)
    idx = np.arange(n_sites)
    center = slice(2, zs.size, 5)
    for start in range(0, pts.shape[0], 65536):
        stop = min(start + 65536, pts.shape[0])
        chunk = pts[start:stop]
        diag = np.zeros((chunk.shape[0], n_sites))
        for k, block in enumerate(blocks):
            diag[:, block] = chunk[:, k : k + 1]
        ham = np.broadcast_to(
            free, (chunk.shape[0], n_sites, n_sites)
        ).copy()
        ham[:, idx, idx] += coupling * diag
        evals = np.linalg.eigvalsh(ham)  # (m, N)
        traces = np.sum(
            1.0 / (evals[:, :, None] - zflat[None, None, :]), axis=1
        )  # (m, E*5)
        h_vals += weights[start:stop] @ traces
        form += (weights[start:stop] * scores[start:stop]) @ traces[:, center]
    h_vals = h_vals.reshape(zs.shape)
    fd = h_vals @ stencil / fd_step**ell
    return fd, form / coupling**ell


def verify_finite_smooth(
    free,
    coupling: float = 1.0,
    density: SingleSiteDensity | None = None,
    eps: float = 0.3,
    ell: int = 1,
    energies=None,
    blocks=None,
    n_nodes: int = 12,
    fd_step: float = 0.005,
    slack: float = DEFAULT_SLACK,
) -> CheckReport:
    """Check the two routes to d^ell/dE^ell of the smoothed trace agree.

    Route one integrates the plain trace of the resolvent against the
    product density by tensor Gauss quadrature and differentiates the curve
    in E with a five-point stencil.  Route two moves all E-derivatives onto
    the disorder coordinates (their directional sum matches an E-shift
    exactly when the coordinate projections sum to the identity) and then
    onto the density by parts, leaving a score-weighted quadrature at the
    bare energy.  Both routes share one eigenvalue decomposition per
    quadrature node.

    The report carries a refinement certificate: doubling quadrature nodes
    and halving the stencil step must cut the discrepancy at least in half
    unless it already sits at the accuracy floor.
    """
    free = np.asarray(free, dtype=float)
    if free.ndim != 2 or free.shape[0] != free.shape[1]:
        raise ValueError(f"free part must be square, got shape {free.shape}")
    n_sites = free.shape[0]
    if n_sites > 5:
        raise ValueError(
            f"tensor quadrature is exponential in sites: {n_sites} > 5"
        )
    if np.max(np.abs(free - free.T)) > _STRUCTURE_TOL:
        raise ValueError("free part must be symmetric")
    if coupling <= 0:
        raise ValueError(f"coupling must be positive, got {coupling}")
    if eps <= 0:
        raise ValueError(f"smoothing width must be positive, got {eps}")
    if density is None:
        density = SingleSiteDensity(2)
    if not 0 <= ell <= 2:
        raise ValueError(f"derivative order {ell} outside [0, 2]")
    if ell > density.continuity_order:
        raise ValueError(
            f"order {ell} needs continuity order >= {ell}, "
            f"density has {density.continuity_order}"
        )
    if blocks is None:
        blocks = [[i] for i in range(n_sites)]
    covered = sorted(site for block in blocks for site in block)
    if covered != list(range(n_sites)):
        raise ValueError(
            "disorder projections must form a complete covering: every site "
            f"in exactly one block, got {blocks} for {n_sites} sites"
        )
    if energies is None:
        bound = np.linalg.norm(free, 2) + coupling
        energies = np.linspace(-bound, bound + coupling, 9)
    energies = np.asarray(energies, dtype=float)

    fd, form = _finite_smooth_curves(
        free, coupling, density, eps, ell, energies, blocks, n_nodes, fd_step
    )
    scale = float(np.max(np.abs(fd)))
    disc = float(np.max(np.abs(form - fd))) / max(scale, 1e-300)

    fd2, form2 = _finite_smooth_curves(
        free, coupling, density, eps, ell, energies, blocks,
        n_nodes + n_nodes // 2, fd_step / 2.0,
    )
    scale2 = float(np.max(np.abs(fd2)))
    disc2 = float(np.max(np.abs(form2 - fd2))) / max(scale2, 1e-300)

    floor = 1e-10
    refined_ok = disc2 <= disc / 2.0 or disc2 <= floor
    worst = int(np.argmax(np.abs(form - fd)))
    return CheckReport(
        name="finite_smooth_derivative_forms",
        passed=bool(refined_ok),
        slack=slack,
        statistics={
            "ell": ell,
            "n_sites": n_sites,
            "n_blocks": len(blocks),
            "max_rel_discrepancy": disc,
            "refined_rel_discrepancy": disc2,
            "refinement_ok": refined_ok,
            "curve_scale": scale,
        },
        witness={
            "energy": float(energies[worst]),
            "fd_value": complex(fd[worst]),
            "form_value": complex(form[worst]),
        },
    )


# ---------------------------------------------------------------------------
# two-sided averaged-resolvent bound


def average_bound_terms(
    a, b, f1, f2, z, s, pair: BumpPair, n_nodes: int = 20, rhs_panels: int = 2
):
    """(LHS, RHS) of the two-sided bound by tensor quadrature.

    The RHS integrand carries an s-power of a norm, so it has kinks where
    singular values cross; rhs_panels localizes them."""
    d = a.shape[0]
    eye = np.eye(d)
    fh = _psd_sqrt(f1 + f2)

    def difference_stack(x_nodes):
        x1 = x_nodes[:, None, None, None]
        x2 = x_nodes[None, :, None, None]
        m_a = a + x1 * f1 + x2 * f2 - z * eye
        m_b = b + x1 * f1 + x2 * f2 - z * eye
        diff = np.linalg.inv(m_a) - np.linalg.inv(m_b)
        return fh @ diff @ fh

    x, w = panel_rule(0.0, pair.r, n_nodes, 1)
    wd = w * pair.density1(x), w * pair.density2(x)
    stack = difference_stack(x)
    lhs_matrix = np.einsum("i,j,ijkl->kl", wd[0], wd[1], stack, optimize=True)
    lhs = float(np.linalg.norm(lhs_matrix, 2))

    lo, hi = pair.cutoff_support()
    y, wy = panel_rule(lo, hi, n_nodes, rhs_panels)
    wc = wy * pair.cutoff(y)
    norms = _spectral_norms(difference_stack(y))
    rhs = float(np.einsum("i,j,ij->", wc, wc, norms**s))
    return lhs, rhs


def verify_resolvent_average_bound(
    corpus: Corpus,
    pair: BumpPair | None = None,
    s: float = 0.4,
    z_values=None,
    deltas=(1e-1, 1e-2, 1e-3, 1e-4),
    n_slope_instances: int = 5,
    n_nodes: int = 20,
    coarse_nodes: int = 16,
    convergence_tol: float = 0.02,
    slack: float = DEFAULT_SLACK,
) -> CheckReport:
    """Empirical two-sided bound for disorder-averaged resolvent differences.

    For each corpus instance (A, B, F1, F2) and each z: the norm of the
    density-averaged difference of resolvents of A + x1 F1 + x2 F2 and its B
    counterpart (LHS) against the cutoff-weighted average of the s-th power
    of the pointwise difference norm over the shifted window (RHS).  The
    bound constant is existential, so the report gives the empirical ratio
    distribution and its max; callers assert stability under corpus growth.

    Also fits the log-log slope of LHS against a shrinking perturbation
    B = A + delta C, which must come out at least s (Hoelder continuity in
    the generator); and flags per-instance quadrature non-convergence by
    comparing two node counts.
    """
    if pair is None:
        pair = BumpPair()
    if not 0 < s < pair.tau:
        raise ValueError(f"s must lie in (0, tau) = (0, {pair.tau}), got {s}")
    if z_values is None:
        z_values = (-1.0 + 0.2j, 0.5j, 1.0 + 0.2j, 0.5 + 1.0j)
    z_values = [complex(z) for z in z_values]
    if any(z.imag <= 0 for z in z_values):
        raise ValueError("spectral parameters must have positive imaginary part")

    ratios = []
    unconverged = []
    n_escalated = 0
    worst = None
    for index in range(corpus.n_instances):
        a, b, f1, f2, z_own = corpus.bound_instance(index)
        for z in z_values:
            lhs, rhs = average_bound_terms(a, b, f1, f2, z, s, pair, n_nodes)
            lhs_c, rhs_c = average_bound_terms(
                a, b, f1, f2, z, s, pair, coarse_nodes
            )
            scale = max(abs(rhs), abs(lhs), 1e-300)
            drift = max(abs(lhs - lhs_c), abs(rhs - rhs_c)) / scale
            if drift > convergence_tol:
                # kink panels converge slowly; escalate before flagging
                n_escalated += 1
                lhs_f, rhs_f = average_bound_terms(
                    a, b, f1, f2, z, s, pair, n_nodes + 8, rhs_panels=3
                )
                scale = max(abs(rhs_f), abs(lhs_f), 1e-300)
                drift = max(abs(lhs - lhs_f), abs(rhs - rhs_f)) / scale
                lhs, rhs = lhs_f, rhs_f
                if drift > convergence_tol:
                    unconverged.append(
                        {"index": index, "z": z, "drift": drift}
                    )
            ratio = lhs / max(rhs, 1e-300)
            ratios.append(ratio)
            if worst is None or ratio > worst["ratio"]:
                worst = {
                    "index": index,
                    "z": z,
                    "ratio": ratio,
                    "lhs": lhs,
                    "rhs": rhs,
                    "dim": a.shape[0],
                }
    ratios = np.asarray(ratios)

    slope_corpus = dataclasses.replace(corpus, delta=1.0)
    slopes = []
    for index in range(min(n_slope_instances, corpus.n_instances)):
        lhs_by_delta = []
        for delta in deltas:
            a, b, f1, f2, z_own = dataclasses.replace(
                slope_corpus, delta=float(delta)
            ).bound_instance(index)
            lhs, _ = average_bound_terms(a, b, f1, f2, z_own, s, pair, n_nodes)
            lhs_by_delta.append(lhs)
        slopes.append(
            float(np.polyfit(np.log(deltas), np.log(lhs_by_delta), 1)[0])
        )
    min_slope = float(min(slopes))

    passed = (
        bool(np.all(np.isfinite(ratios)))
        and min_slope >= s - 0.05
        and not unconverged
    )
    return CheckReport(
        name="resolvent_average_two_sided_bound",
        passed=passed,
        slack=slack,
        statistics={
            "s": s,
            "n_instances": corpus.n_instances,
            "n_evaluations": int(ratios.size),
            "max_ratio": float(ratios.max()),
            "mean_ratio": float(ratios.mean()),
            "quantile_95": float(np.quantile(ratios, 0.95)),
            "min_slope": min_slope,
            "slopes": slopes,
            "n_escalated": n_escalated,
            "n_unconverged": len(unconverged),
        },
        witness=worst if passed else {"worst": worst, "unconverged": unconverged},
    )


# ---------------------------------------------------------------------------
# semigroup Hoelder continuity in the generator


def hoelder_margin(x, y, s: float, t: float) -> float:
    """LHS - RHS of the semigroup bound for one pair: negative means it holds.

    LHS = norm of exp(itX) - exp(itY); RHS = 2^(1-s) t^s |X - Y|^s.
    """
    lhs = float(
        np.linalg.norm(
            scipy.linalg.expm(1j * t * x) - scipy.linalg.expm(1j * t * y), 2
        )
    )
    delta = float(np.linalg.norm(np.asarray(x) - np.asarray(y), 2))
    rhs = 2.0 ** (1.0 - s) * t**s * delta**s
    return lhs - rhs


def verify_semigroup_hoelder(
    corpus: Corpus,
    s_values=(0.3, 0.5, 0.7),
    t_values=(0.1, 0.5, 1.0, 2.0, 5.0, 10.0),
    slack: float = DEFAULT_SLACK,
) -> CheckReport:
    """Hoelder bound for contraction semigroups generated by iX, Im X >= 0:

        norm(exp(itX) - exp(itY)) <= 2^(1-s) t^s norm(X - Y)^s + slack

    for every corpus pair, every s in the list, every t in the grid.  Any
    violation beyond the slack fails the check with the offending pair
    serialized in the witness.
    """
    if not corpus.dissipative:
        raise ValueError("semigroup corpus must be dissipative")
    s_arr = np.asarray(s_values, dtype=float)
    if np.any((s_arr <= 0) | (s_arr >= 1)):
        raise ValueError(f"exponents must lie in (0, 1), got {s_values}")
    t_arr = np.asarray(t_values, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("the semigroup only runs forward in time")

    worst = {"margin": -np.inf}
    n_violations = 0
    for index in range(corpus.n_instances):
        x, y = corpus.pair(index)
        delta = float(np.linalg.norm(x - y, 2))
        ex = _batched_expi(x, t_arr)
        ey = _batched_expi(y, t_arr)
        lhs = _spectral_norms(ex - ey)  # (T,)
        rhs = 2.0 ** (1.0 - s_arr[:, None]) * np.power(
            t_arr[None, :], s_arr[:, None]
        ) * delta ** s_arr[:, None]
        margins = lhs[None, :] - rhs  # (S, T)
        peak = float(margins.max())
        if peak > worst["margin"]:
            si, ti = np.unravel_index(np.argmax(margins), margins.shape)
            worst = {
                "margin": peak,
                "index": index,
                "s": float(s_arr[si]),
                "t": float(t_arr[ti]),
                "generator_distance": delta,
                "dim": x.shape[0],
            }
        n_violations += int(np.count_nonzero(margins > slack))
    passed = n_violations == 0
    if not passed:
        x, y = corpus.pair(worst["index"])
        worst["x"] = x
        worst["y"] = y
    return CheckReport(
        name="semigroup_hoelder_in_generator",
        passed=passed,
        slack=slack,
        statistics={
            "n_instances": corpus.n_instances,
            "n_checks": int(corpus.n_instances * s_arr.size * t_arr.size),
            "n_violations": n_violations,
            "worst_margin": worst["margin"],
        },
        witness=worst,
    )


# ---------------------------------------------------------------------------
# averaged resolvent as a truncated oscillatory time integral


def _fourier_factor(density, support, ts):
    """integral of g(lam) exp(i t lam) dlam over the support, per t."""
    lo, hi = support
    lam, w = panel_rule(lo, hi, 16, 8)
    g = density.eval((lam - lo) / (hi - lo)) / (hi - lo)
    return np.exp(1j * np.multiply.outer(ts, lam)) @ (w * g)  # (T,)


def verify_resolvent_semigroup_identity(
    instances,
    density: SingleSiteDensity | None = None,
    support: tuple[float, float] = (1.0, 2.0),
    t_max: float = 1e3,
    quad_budget: float = 1e-7,
    n_lambda_nodes: int = 16,
    t_panel_width: float = 0.5,
    slack: float = DEFAULT_SLACK,
) -> CheckReport:
    """Averaged resolvent of a strictly dissipative matrix as a time integral:

        integral g(lam) (A + lam)^(-1) dlam
            = -i * integral_0^inf exp(itA) ghat(t) dt,
        ghat(t) = integral g(lam) exp(it lam) dlam,

    valid because exp(itA) decays like exp(-q t) when Im A >= q > 0.  The
    time integral is truncated where the decay makes the tail negligible
    (never beyond t_max), and the check demands the operator-norm
    discrepancy stay below the rigorous tail bound exp(-q T)/q plus a fixed
    quadrature budget.  Doubling t_max can only shrink the discrepancy.
    """
    if density is None:
        density = SingleSiteDensity(3)
    lo, hi = support
    if not lo < hi:
        raise ValueError(f"empty density support ({lo}, {hi})")
    if lo <= 0:
        raise ValueError("density support must sit at positive shifts")
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    if isinstance(instances, Corpus):
        if not instances.dissipative:
            raise ValueError("identity corpus must be dissipative")
        instances = [
            instances.matrix(index) for index in range(instances.n_instances)
        ]

    discrepancies = []
    tail_bounds = []
    worst = None
    for a in instances:
        a = np.asarray(a, dtype=complex)
        im_part = (a - a.conj().T) / 2j
        q = float(np.linalg.eigvalsh(im_part)[0])
        if q <= 0:
            raise ValueError(
                f"matrix must be strictly dissipative, Im part floor {q}"
            )
        d = a.shape[0]
        eye = np.eye(d)

        lam, w = panel_rule(lo, hi, n_lambda_nodes, 8)
        g = density.eval((lam - lo) / (hi - lo)) / (hi - lo)
        stack = np.linalg.inv(
            a[None, :, :] + lam[:, None, None] * eye[None, :, :]
        )
        resolvent_norms = _spectral_norms(stack)
        lhs = np.einsum("i,ijk->jk", w * g, stack)

        t_eff = float(min(t_max, 46.0 / q))
        n_panels = max(4, int(math.ceil(t_eff / t_panel_width)))
        ts, wt = panel_rule(0.0, t_eff, 8, n_panels)
        ghat = _fourier_factor(density, support, ts)
        semigroup = _batched_expi(a, ts)
        rhs = -1j * np.einsum("t,tjk->jk", wt * ghat, semigroup)

        disc = float(np.linalg.norm(lhs - rhs, 2))
        tail = math.exp(-q * t_eff) / q
        discrepancies.append(disc)
        tail_bounds.append(tail)
        if worst is None or disc > worst["discrepancy"]:
            worst = {
                "discrepancy": disc,
                "dim": d,
                "im_floor": q,
                "t_eff": t_eff,
                "max_resolvent_norm": float(resolvent_norms.max()),
            }
    tol = float(max(tail_bounds)) + quad_budget
    max_disc = float(max(discrepancies))
    passed = max_disc <= tol + slack
    return CheckReport(
        name="resolvent_as_time_integral",
        passed=passed,
        slack=slack,
        statistics={
            "n_instances": len(discrepancies),
            "max_discrepancy": max_disc,
            "tolerance": tol,
            "max_tail_bound": float(max(tail_bounds)),
            "quad_budget": quad_budget,
            "t_max": t_max,
        },
        witness=worst,
    )


# ---------------------------------------------------------------------------
# spectral averaging


def _averaged_imag_exact(a, phi, mu, zs):
    """F(z) for B = I via the exact transform: sum over eigenpairs of A of
    |<v, phi>|^2 times Im of the density transform shifted by the
    eigenvalue.  No quadrature anywhere."""
    evals, evecs = np.linalg.eigh(a)
    coef = np.abs(evecs.conj().T @ phi) ** 2
    out = np.zeros(len(zs))
    for lam, wgt in zip(evals, coef):
        out += wgt * np.imag(stieltjes_transform(mu, 0, np.asarray(zs) - lam))
    return out


def verify_spectral_averaging(
    a,
    b,
    phi,
    mu: SingleSiteDensity | None = None,
    energies=None,
    eps_list=(0.006, 0.003, 0.001),
    stability_tol: float = 0.02,
    force_quadrature: bool = False,
    range_tol: float = 1e-8,
    slack: float = DEFAULT_SLACK,
) -> CheckReport:
    """Averaging the spectral measure over a coupling with bounded density
    yields a measure with bounded density.

    Evaluates F(z) = integral of Im <phi, (A + t B - z)^(-1) phi> against the
    coupling density mu on a z grid, for each smoothing width in eps_list,
    and asserts the sup over the grid stays finite and stable (drifts shrink
    as eps does) as eps decreases through the list.  For B close to the
    identity the t-integral is done in closed form through the exact density
    transform; otherwise by resonance-resolving panel quadrature
    (force_quadrature picks the quadrature route regardless, as a
    cross-check).

    phi must lie in the range of B: components outside it see no averaging
    and are rejected.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=complex))
    if mu is None:
        mu = SingleSiteDensity(3)
    d = a.shape[0]
    if a.shape != (d, d) or b.shape != (d, d) or phi.shape != (d,):
        raise ValueError("shape mismatch between A, B, and phi")
    if np.max(np.abs(a - a.T)) > _STRUCTURE_TOL:
        raise ValueError("A must be symmetric")
    bw, bv = np.linalg.eigh((b + b.T) / 2.0)
    if bw[0] < -_STRUCTURE_TOL:
        raise ValueError(f"B must be positive semidefinite, eigmin {bw[0]}")
    eps_arr = np.asarray(eps_list, dtype=float)
    if np.any(eps_arr <= 0) or np.any(np.diff(eps_arr) >= 0):
        raise ValueError("eps_list must be positive and strictly decreasing")

    phi_norm = float(np.linalg.norm(phi))
    if phi_norm == 0.0 or np.max(np.abs(bw)) <= _STRUCTURE_TOL:
        # degenerate: B = 0 forces phi = 0 and F vanishes identically
        if phi_norm > range_tol:
            raise ValueError("phi outside the range of B")
        return CheckReport(
            name="spectral_averaging_bounded_density",
            passed=True,
            slack=slack,
            statistics={"sup_values": [0.0] * len(eps_arr), "degenerate": True},
            witness=None,
        )
    keep = bw > range_tol * bw[-1]
    residual = phi - bv[:, keep] @ (bv[:, keep].conj().T @ phi)
    if np.linalg.norm(residual) > range_tol * phi_norm:
        raise ValueError(
            "phi outside the range of B: residual "
            f"{float(np.linalg.norm(residual) / phi_norm):.3e}"
        )

    identity_like = np.max(np.abs(b - np.eye(d))) <= _STRUCTURE_TOL
    if energies is None:
        aw = np.linalg.eigvalsh(a)
        energies = np.linspace(float(aw[0]) - 0.5, float(aw[-1]) + 1.5, 200)
    energies = np.asarray(energies, dtype=float)

    sup_values = []
    for eps in eps_arr:
        if identity_like and not force_quadrature:
            curve = _averaged_imag_exact(a, phi, mu, energies + 1j * eps)
        else:
            # resolve the width-eps resonances in t with panels a few times
            # narrower than the Poisson width
            n_panels = max(16, int(math.ceil(2.0 / eps)))
            t, wt = panel_rule(0.0, 1.0, 8, n_panels)
            gt = mu.eval(t)
            stack = a[None, :, :] + t[:, None, None] * b[None, :, :]
            evals, evecs = np.linalg.eigh(stack)
            coef = np.abs(
                np.einsum("tij,i->tj", evecs.conj().astype(complex), phi)
            ) ** 2  # (T, d)
            curve = np.empty(len(energies))
            for start in range(0, len(energies), 50):
                sl = slice(start, min(start + 50, len(energies)))
                kernel = eps / (
                    (evals[:, :, None] - energies[None, None, sl]) ** 2
                    + eps**2
                )
                curve[sl] = np.einsum(
                    "t,tj,tjz->z", wt * gt, coef, kernel, optimize=True
                )
        sup_values.append(float(np.max(curve)))

    sup_arr = np.asarray(sup_values)
    drifts = np.abs(np.diff(sup_arr)) / sup_arr[:-1]
    drift_decay_ok = bool(
        np.all(np.diff(drifts) <= 0.25 * drifts[:-1] + 1e-9)
    ) if drifts.size > 1 else True
    passed = (
        bool(np.all(np.isfinite(sup_arr)))
        and bool(np.all(drifts <= stability_tol))
        and drift_decay_ok
    )
    stats = {
        "eps_list": eps_arr.tolist(),
        "sup_values": sup_values,
        "drifts": drifts.tolist(),
        "exact_route": bool(identity_like and not force_quadrature),
    }
    if identity_like:
        stats["poisson_cap"] = math.pi * mu.sup_derivative(0) * phi_norm**2
    return CheckReport(
        name="spectral_averaging_bounded_density",
        passed=passed,
        slack=slack,
        statistics=stats,
        witness=None if passed else {"sup_values": sup_values, "drifts": drifts},
    )


def averaging_corpus(
    n_instances: int, dim: int = 6, seed: int = 7
) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(A, I, phi) triples with random symmetric A and random unit phi."""
    out = []
    for index in range(n_instances):
        rng = np.random.default_rng((seed, index))
        g = rng.standard_normal((dim, dim))
        a = (g + g.T) / 2.0
        phi = rng.standard_normal(dim)
        phi = phi / np.linalg.norm(phi)
        out.append((a, np.eye(dim), phi))
    return out


# ---------------------------------------------------------------------------
# boundary values of the smoothed density


def verify_boundary_derivatives(
    rho: SingleSiteDensity | None = None,
    eps_list=(0.1, 0.01, 0.001),
    energies=None,
    interior_margin: float = 0.1,
    exterior_points=(-1.0, -2.0, 2.0, 3.0),
    min_convergence_slope: float = 0.9,
    slack: float = DEFAULT_SLACK,
) -> CheckReport:
    """Uniform boundedness as the strip shrinks, plus first-order boundary
    convergence, for the smoothed density and its derivatives.

    With F(z) the density transform, the j-th E-derivative of Im F(E + i eps)
    is pi times the width-eps Poisson smoothing of rho^(j), so its strip sup
    can never exceed pi * sup|rho^(j)|; the check asserts exactly that, with
    additive slack, for every j up to the continuity order and every eps in
    the list.  (The sup itself grows toward the cap as eps shrinks, so a cap
    pinned to the largest eps would be wrong; the smoothing cap is the
    uniform bound that actually holds.)

    Boundary convergence: max over interior grid points of
    |Im F(E + i eps)/pi - rho(E)| must shrink at first order in eps,
    certified by a log-log slope fit; the empirical constant is reported.
    Outside the support, Im F <= eps / dist^2.
    """
    if rho is None:
        rho = SingleSiteDensity(2)
    eps_arr = np.asarray(eps_list, dtype=float)
    if np.any(eps_arr <= 0) or np.any(np.diff(eps_arr) >= 0):
        raise ValueError("eps_list must be positive and strictly decreasing")
    if energies is None:
        energies = np.linspace(-0.5, 1.5, 201)
    energies = np.asarray(energies, dtype=float)
    if not 0 < interior_margin < 0.5:
        raise ValueError(f"interior margin {interior_margin} outside (0, 0.5)")
    interior = (energies >= interior_margin) & (energies <= 1.0 - interior_margin)
    if not np.any(interior):
        raise ValueError("energy grid has no interior points")

    m = rho.continuity_order
    sup_table = np.empty((m + 1, len(eps_arr)))
    caps = np.empty(m + 1)
    for j in range(m + 1):
        caps[j] = math.pi * rho.sup_derivative(j)
        for k, eps in enumerate(eps_arr):
            values = np.imag(stieltjes_transform(rho, j, energies + 1j * eps))
            sup_table[j, k] = float(np.max(np.abs(values)))
    bounded = np.all(sup_table <= caps[:, None] + slack)

    errors = np.empty(len(eps_arr))
    target = rho.eval(energies[interior])
    for k, eps in enumerate(eps_arr):
        smoothed = (
            np.imag(stieltjes_transform(rho, 0, energies[interior] + 1j * eps))
            / math.pi
        )
        errors[k] = float(np.max(np.abs(smoothed - target)))
    slope = float(np.polyfit(np.log(eps_arr), np.log(errors), 1)[0])
    rate_constant = float(np.max(errors / eps_arr))

    exterior_ok = True
    exterior_worst = 0.0
    for e in exterior_points:
        dist = max(0.0 - e, e - 1.0)
        if dist < 1.0:
            raise ValueError(f"exterior point {e} closer than 1 to the support")
        for eps in eps_arr:
            val = float(
                np.imag(stieltjes_transform(rho, 0, complex(e, eps)))
            )
            bound = eps / dist**2
            exterior_worst = max(exterior_worst, val - bound)
            if val > bound + slack:
                exterior_ok = False

    passed = bool(bounded) and slope >= min_convergence_slope and exterior_ok
    ji, ki = np.unravel_index(
        np.argmax(sup_table - caps[:, None]), sup_table.shape
    )
    return CheckReport(
        name="boundary_derivative_bounds",
        passed=passed,
        slack=slack,
        statistics={
            "max_order": m,
            "eps_list": eps_arr.tolist(),
            "sup_table": sup_table.tolist(),
            "smoothing_caps": caps.tolist(),
            "uniformly_bounded": bool(bounded),
            "convergence_errors": errors.tolist(),
            "convergence_slope": slope,
            "rate_constant": rate_constant,
            "exterior_worst_excess": exterior_worst,
        },
        witness={
            "tightest_order": int(ji),
            "tightest_eps": float(eps_arr[ki]),
            "sup": float(sup_table[ji, ki]),
            "cap": float(caps[ji]),
        },
    )


# ---------------------------------------------------------------------------
# bundled run for the CLI


def run_default_verification(seed: int = 0) -> list[CheckReport]:
    """All six checks at a desk scale small enough for interactive use."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((3, 3))
    free = (g + g.T) / 2.0

    reports = [
        verify_finite_smooth(np.zeros((1, 1)), ell=0),
        verify_finite_smooth(free, coupling=1.5, eps=0.3, ell=1),
        verify_resolvent_average_bound(
            Corpus(40, dim_min=2, dim_max=5, seed=seed)
        ),
        verify_semigroup_hoelder(
            Corpus(300, dim_min=2, dim_max=6, seed=seed + 1, dissipative=True)
        ),
        verify_resolvent_semigroup_identity(
            Corpus(
                30, dim_min=2, dim_max=6, seed=seed + 2,
                dissipative=True, min_imag=0.5,
            )
        ),
        verify_boundary_derivatives(),
    ]
    for a, b, phi in averaging_corpus(2, dim=6, seed=seed + 3):
        reports.append(verify_spectral_averaging(a, b, phi))
    return reports
