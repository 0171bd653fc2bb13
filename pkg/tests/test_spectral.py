"""Resolvent, spectral-projection, and semigroup checks against slow oracles."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

from doslab.lattice import ProjectionFamily
from doslab.spectral import (
    ComplexShift,
    KernelBlock,
    dissipative_exp,
    eigen_weights,
    kernel_block,
    kernel_block_norm,
    resolvent_columns,
    spectral_projector_trace,
)


def random_hermitian(n, seed, complex_entries=False):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    if complex_entries:
        a = a + 1j * rng.standard_normal((n, n))
    return (a + a.conj().T) / 2


def taylor_expm(m, terms=40):
    # independent scaling-and-squaring Taylor exponential
    norm = np.linalg.norm(m, 1)
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-300) / 0.25))))
    s = m / 2.0**squarings
    out = np.eye(m.shape[0], dtype=complex)
    term = np.eye(m.shape[0], dtype=complex)
    for k in range(1, terms + 1):
        term = term @ s / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def test_complex_shift_validation():
    s = ComplexShift(1.5, 0.25)
    assert s.z == 1.5 + 0.25j
    with pytest.raises(ValueError):
        ComplexShift(0.0, 0.0)
    with pytest.raises(ValueError):
        ComplexShift(0.0, -0.1)


def test_resolvent_columns_match_dense_inverse():
    h = random_hermitian(30, seed=42)
    z = 0.3 + 0.05j
    full = np.linalg.inv(h - z * np.eye(30))
    cols = resolvent_columns(h, z, [0, 7, 29])
    assert cols.shape == (30, 3)
    assert_allclose(cols, full[:, [0, 7, 29]], rtol=1e-11, atol=1e-13)
    # ComplexShift spelling agrees with the raw complex one
    again = resolvent_columns(h, ComplexShift(0.3, 0.05), [0, 7, 29])
    assert np.array_equal(cols, again)


def test_resolvent_rejects_real_energy():
    h = random_hermitian(5, seed=1)
    with pytest.raises(ValueError, match="imaginary"):
        resolvent_columns(h, 0.5, [0])
    with pytest.raises(ValueError, match="imaginary"):
        resolvent_columns(h, 0.5 - 0.1j, [0])


def test_kernel_block_entries_and_orientation():
    h = random_hermitian(6, seed=7)
    fam = ProjectionFamily.contiguous(6, rank=2)
    z = ComplexShift(-0.2, 0.4)
    blk = kernel_block(h, z, source=2, target=0, projections=fam)
    assert isinstance(blk, KernelBlock)
    full = np.linalg.inv(h - z.z * np.eye(6))
    assert_allclose(blk.entries, full[np.ix_([4, 5], [0, 1])], rtol=1e-11)


@pytest.mark.parametrize("eps", [0.5, 0.1, 0.02])
def test_kernel_block_norm_bounded_by_shift(eps):
    h = random_hermitian(12, seed=3)
    fam = ProjectionFamily.contiguous(12, rank=3)
    z = ComplexShift(0.7, eps)
    for src in range(4):
        for tgt in range(4):
            assert kernel_block_norm(h, z, src, tgt, fam) <= 1.0 / eps + 1e-10


def test_trace_against_block_is_herglotz():
    h = random_hermitian(14, seed=9)
    idx = [0, 1, 2]
    for energy in np.linspace(-3, 3, 11):
        cols = resolvent_columns(h, ComplexShift(energy, 0.15), idx)
        tr = np.trace(cols[idx, :])
        assert tr.imag > 0.0


def test_resolvent_of_real_matrix_is_symmetric():
    h = random_hermitian(10, seed=13)
    cols = resolvent_columns(h, 1.0 + 0.2j, list(range(10)))
    assert_allclose(cols, cols.T, rtol=1e-11, atol=1e-14)


def test_spectral_projector_trace_counts_closed_interval():
    h = np.diag([0.0, 1.0, 1.0, 2.0])
    all_sites = [0, 1, 2, 3]
    assert spectral_projector_trace(h, all_sites, 1.0) == pytest.approx(3.0, abs=1e-12)
    assert spectral_projector_trace(h, all_sites, 1.0 - 1e-9) == pytest.approx(1.0, abs=1e-12)
    assert spectral_projector_trace(h, all_sites, -0.5) == 0.0
    assert spectral_projector_trace(h, all_sites, 5.0) == pytest.approx(4.0, abs=1e-12)
    # single-site block of a diagonal matrix: a step at its own entry
    assert spectral_projector_trace(h, [3], 2.0) == pytest.approx(1.0, abs=1e-12)
    assert spectral_projector_trace(h, [3], 1.99) == pytest.approx(0.0, abs=1e-12)


def test_eigen_weights_sum_to_block_rank():
    h = random_hermitian(16, seed=21, complex_entries=True)
    for block in ([0], [3, 4, 5], list(range(16))):
        evals, weights = eigen_weights(h, block)
        assert evals.shape == (16,) and weights.shape == (16,)
        assert np.all(np.diff(evals) >= 0)
        assert np.sum(weights) == pytest.approx(len(block), abs=1e-12)
        assert np.all(weights >= -1e-15)


def test_smoothed_trace_integrates_to_block_rank():
    # (1/pi) Im tr(P (h - E - i eps)^{-1}) integrates over E to tr(P)
    h = random_hermitian(9, seed=30)
    evals, weights = eigen_weights(h, [0, 1])
    eps = 0.3

    def smoothed(e):
        return float(np.sum(weights * eps / ((evals - e) ** 2 + eps**2)) / np.pi)

    window = 60.0
    val, err = quad(smoothed, -window, window, limit=300)
    # Lorentzian tails past the window carry mass ~ eps * rank / (pi * window)
    tail = 2 * eps * 2 / (np.pi * (window - np.max(np.abs(evals))))
    assert err < 1e-8
    assert abs(val - 2.0) <= tail + 1e-6


def test_trace_derivative_matches_squared_resolvent():
    # d/dE tr(P (h - E - i eps)^{-1}) equals tr(P (h - E - i eps)^{-2})
    h = random_hermitian(11, seed=17)
    idx = [0, 4]
    eps, e0, step = 0.25, 0.4, 1e-5

    def tr_power(energy, power):
        evals, weights = eigen_weights(h, idx)
        return np.sum(weights / (evals - (energy + 1j * eps)) ** power)

    fd = (tr_power(e0 + step, 1) - tr_power(e0 - step, 1)) / (2 * step)
    assert_allclose(fd, tr_power(e0, 2), rtol=1e-8)


def test_dissipative_exp_matches_taylor_oracle():
    rng = np.random.default_rng(77)
    for n in (2, 5, 9):
        x = random_hermitian(n, seed=n, complex_entries=True)
        y = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        a = x + 1j * (y @ y.conj().T)  # Im part positive semidefinite
        for t in (0.0, 0.3, 2.0):
            got = dissipative_exp(a, t)
            want = taylor_expm(1j * t * a)
            assert_allclose(got, want, rtol=1e-9, atol=1e-10)


def test_dissipative_exp_is_a_contraction():
    rng = np.random.default_rng(123)
    for trial in range(8):
        n = int(rng.integers(2, 8))
        x = random_hermitian(n, seed=1000 + trial)
        y = rng.standard_normal((n, n))
        a = x + 1j * (y @ y.T)
        norms = [
            np.linalg.norm(dissipative_exp(a, t), 2) for t in (0.1, 0.5, 1.0, 3.0)
        ]
        assert all(v <= 1.0 + 1e-9 for v in norms)
        # hermitian generator: exactly unitary
        u = dissipative_exp(x, 1.7)
        assert_allclose(u @ u.conj().T, np.eye(n), atol=1e-12)


def test_dissipative_exp_rejects_bad_inputs():
    x = random_hermitian(4, seed=2)
    with pytest.raises(ValueError, match="t"):
        dissipative_exp(x, -0.5)
    bad = x - 0.3j * np.eye(4)  # negative imaginary part grows the norm
    with pytest.raises(ValueError, match="dissipative"):
        dissipative_exp(bad, 1.0)


def test_resolvent_residual_guard_trips_on_singular_input():
    # h - z nearly singular with eps below the residual scale is fine;
    # an exactly repeated unit column forced through a singular system is not.
    h = np.diag([1.0, 1.0])
    cols = resolvent_columns(h, 1.0 + 1e-8j, [0])
    assert np.abs(cols[0, 0]) == pytest.approx(1e8, rel=1e-6)
