"""Counting statistics of a time-integrated observable.

The time window [0, T] is split into N slices with a symmetric placement
of the counting field (half kick, evolve, half kick), which is second
order accurate in the slice width and exact whenever the observable
commutes with the generator. Two independent routes to the distribution
are provided: spectral inversion of the characteristic function on the
known finite support, and direct trajectory-pair enumeration. A Gaussian
detector model turns the trajectory sums into measured statistics with
imprecision and back-action, as in the subsequent-measurement case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .engine import (
    IMAG_MASS_ATOL,
    PAIR_BUDGET,
    PRUNE_RTOL,
    QuasiDistribution,
    _merge_by_labels,
)
from .errors import AliasingDetected, DimMismatch, ScenarioTooLarge, ToleranceExceeded
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    UnitaryPropagator,
    cluster_values,
    eig_hermitian,
)
from .measurement import GaussianDetector, SignedGaussianMixture, _check_heisenberg

SPECTRAL_SLICES = 64
SUPPORT_BUDGET = 200_000


@dataclass(frozen=True)
class FCSScenario:
    """Time integral of observable A over [0, T], resolved into N slices.

    Evolution is either a time-independent Hamiltonian or an explicit list
    of N per-slice propagators. ``gamma`` is a detector back-action
    parameter entering as a Hamiltonian shift H + gamma A (exactly so for
    the Hamiltonian form).
    """

    a: HermitianObservable
    h: Union[HermitianObservable, Tuple[UnitaryPropagator, ...]]
    rho0: DensityMatrix
    duration: float
    slices: int
    gamma: float = 0.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.slices < 1:
            raise ValueError("at least one slice is required")
        d = self.a.dim
        if isinstance(self.h, HermitianObservable):
            if self.h.dim != d:
                raise DimMismatch("Hamiltonian and observable dims differ")
        else:
            props = tuple(self.h)
            if len(props) != self.slices:
                raise ValueError("need one propagator per slice")
            if any(u.dim != d for u in props):
                raise DimMismatch("slice propagators must match the observable dim")
            object.__setattr__(self, "h", props)
        if self.rho0.dim != d:
            raise DimMismatch("state dim differs from observable dim")

    @property
    def dim(self) -> int:
        return self.a.dim

    @property
    def dt(self) -> float:
        return self.duration / self.slices

    def with_slices(self, n: int) -> "FCSScenario":
        if not isinstance(self.h, HermitianObservable):
            raise ValueError("cannot re-slice an explicit propagator list")
        return FCSScenario(self.a, self.h, self.rho0, self.duration, n, self.gamma)

    def slice_propagators(self):
        """Per-slice evolution with gamma folded in as a Hamiltonian shift."""
        if isinstance(self.h, HermitianObservable):
            gen = eig_hermitian(self.h.matrix + self.gamma * self.a.matrix)
            v = gen.eigenvectors
            u = (v * np.exp(-1j * gen.eigenvalues * self.dt)) @ v.conj().T
            return [u] * self.slices
        if self.gamma == 0.0:
            return [u.matrix for u in self.h]
        half = eig_hermitian(self.a.matrix)
        kick = (half.eigenvectors * np.exp(-1j * self.gamma * half.eigenvalues * self.dt / 2)) \
            @ half.eigenvectors.conj().T
        return [kick @ u.matrix @ kick for u in self.h]


def _counting_product(scenario: FCSScenario, chi: float) -> np.ndarray:
    """Ordered product of slices with counting-field kicks exp(-i chi dt A / 2)."""
    v = scenario.a.eigenvectors
    kick = (v * np.exp(-1j * chi * scenario.dt * scenario.a.eigenvalues / 2.0)) @ v.conj().T
    out = np.eye(scenario.dim, dtype=np.complex128)
    for u in scenario.slice_propagators():
        out = kick @ (u @ (kick @ out))
    return out


def fcs_characteristic(scenario: FCSScenario, lam: float) -> complex:
    """Characteristic function of the sliced time integral.

    Evaluates Tr{U(+lambda/2) rho U(-lambda/2)^dag} where U(chi) is the
    symmetric-split ordered product of counting kicks and slice evolution.
    Unity at lambda = 0, conjugate-symmetric in lambda when gamma = 0, and
    exactly exp(-i lambda a0 T) for an eigenstate of a conserved observable.
    """
    left = _counting_product(scenario, 0.5 * lam)
    right = _counting_product(scenario, -0.5 * lam)
    return complex(np.trace(left @ scenario.rho0.matrix @ right.conj().T))


def _trajectory_sums(scenario: FCSScenario):
    """Trapezoid-weighted eigenvalue sums along every index trajectory."""
    d = scenario.dim
    n = scenario.slices
    vals = scenario.a.eigenvalues
    dt = scenario.dt
    n_seq = d ** (n + 1)
    powers = d ** np.arange(n, -1, -1, dtype=np.int64)
    digits = (np.arange(n_seq, dtype=np.int64)[:, None] // powers[None, :]) % d
    weights = np.full(n + 1, dt)
    weights[0] = weights[-1] = 0.5 * dt
    m = (vals[digits] * weights[None, :]).sum(axis=1)
    return digits, m


def _fcs_pair_matrix(scenario: FCSScenario, budget: int, prune_rtol: float):
    """Complex pair weights resolved by (left, right) integrated-sum bin."""
    d = scenario.dim
    n = scenario.slices
    if d ** (2 * n + 1) > budget:
        raise ScenarioTooLarge(
            f"d^(2N+1) = {d}^{2 * n + 1} trajectory pairs exceed the budget {budget:g}"
        )
    v = scenario.a.eigenvectors
    transfer = [v.conj().T @ u @ v for u in scenario.slice_propagators()]
    amp = _kernels.path_amplitudes(transfer, d, n + 1)
    digits, m = _trajectory_sums(scenario)
    tol = 1e-9 * max(float(np.max(np.abs(scenario.a.eigenvalues))), 1e-300) * scenario.duration
    m_reps, m_labels = cluster_values(m, tol)
    n_bins = len(m_reps)

    rho_v = v.conj().T @ scenario.rho0.matrix @ v
    first = digits[:, 0]
    last = digits[:, -1]
    amax = float(np.max(np.abs(amp)))
    keep = np.abs(amp) > prune_rtol * amax
    amp, first, last, m_labels_k = amp[keep], first[keep], last[keep], m_labels[keep]
    order = np.argsort(last, kind="stable")
    counts = np.bincount(last, minlength=d)
    starts = np.concatenate(([0], np.cumsum(counts)))
    cells = _kernels.accumulate_pairs(
        amp[order], first[order],
        (m_labels_k * n_bins)[order], m_labels_k[order],
        starts, rho_v, n_bins * n_bins,
    )
    return cells.reshape(n_bins, n_bins), m_reps


def _pairs_to_distribution(pair_w, m_reps, duration, a_scale, imag_tol):
    n_bins = len(m_reps)
    li, ri = np.meshgrid(np.arange(n_bins), np.arange(n_bins), indexing="ij")
    mids = 0.5 * (m_reps[li.ravel()] + m_reps[ri.ravel()])
    tol = 1e-9 * max(a_scale, 1e-300) * duration
    reps, labels = cluster_values(mids, tol)
    support, weights, _ = _merge_by_labels(
        labels[:, None], reps[labels][:, None], pair_w.ravel())
    resid_max = float(np.max(np.abs(weights.imag))) if weights.size else 0.0
    resid_total = float(np.sum(np.abs(weights.imag)))
    if resid_total > imag_tol:
        raise ToleranceExceeded(f"residual imaginary mass {resid_total:.3e}")
    keep = np.abs(weights.real) > 1e-14
    w = weights.real[keep]
    w = w / w.sum()
    return QuasiDistribution(support[keep], w,
                             residual_imag_max=resid_max, residual_imag_total=resid_total)


def _support_sums(scenario: FCSScenario, budget: int) -> np.ndarray:
    """All achievable trapezoid sums, by dynamic programming over slices."""
    vals = scenario.a.eigenvalues
    dt = scenario.dt
    tol = 1e-9 * max(float(np.max(np.abs(vals))), 1e-300) * scenario.duration
    sums, _ = cluster_values(vals * (0.5 * dt), tol)
    for step in range(1, scenario.slices + 1):
        w = 0.5 * dt if step == scenario.slices else dt
        grid = (sums[:, None] + (vals * w)[None, :]).ravel()
        sums, _ = cluster_values(grid, tol)
        if len(sums) > budget:
            raise ScenarioTooLarge(f"spectral support exceeded {budget} points")
    return sums


def fcs_distribution(scenario: FCSScenario, method: str = "spectral", *,
                     budget: int = PAIR_BUDGET, prune_rtol: float = PRUNE_RTOL,
                     imag_tol: float = IMAG_MASS_ATOL) -> QuasiDistribution:
    """Distribution of the sliced time integral.

    ``method='trajectory'`` enumerates all d^(2N+1) trajectory pairs and is
    meant as a verification tool at small N. ``method='spectral'`` samples
    the characteristic function and inverts it on the known support: an
    exact DFT grid when the support is uniformly spaced (commensurate
    spectra), otherwise a least-squares trigonometric moment fit, with an
    AliasingDetected re-check of the reconstruction.
    """
    if method == "trajectory":
        pair_w, m_reps = _fcs_pair_matrix(scenario, budget, prune_rtol)
        return _pairs_to_distribution(pair_w, m_reps, scenario.duration,
                                      float(np.max(np.abs(scenario.a.eigenvalues))), imag_tol)
    if method != "spectral":
        raise ValueError("method must be 'trajectory' or 'spectral'")

    sums = _support_sums(scenario, SUPPORT_BUDGET)
    a_scale = float(np.max(np.abs(scenario.a.eigenvalues)))
    tol = 1e-9 * max(a_scale, 1e-300) * scenario.duration
    mids = 0.5 * (sums[:, None] + sums[None, :]).ravel()
    support, _ = cluster_values(mids, tol)
    if len(support) > SUPPORT_BUDGET:
        raise ScenarioTooLarge("midpoint support too large for spectral inversion")

    if len(support) == 1:
        return QuasiDistribution(support[:, None], np.ones(1))

    gaps = np.diff(support)
    delta = float(gaps.min())
    commensurate = delta > 0 and np.all(
        np.abs(np.round(gaps / delta) - gaps / delta) * delta < max(tol, 1e-12))
    if commensurate:
        k = int(round((support[-1] - support[0]) / delta)) + 1
        if k <= 4 * len(support) + 8:
            grid = support[0] + delta * np.arange(k)
            lam = 2.0 * np.pi * np.arange(k) / (k * delta)
            samples = np.array([fcs_characteristic(scenario, x) for x in lam])
            # Lambda(lam_n) e^{i lam_n m_0} is the forward DFT of the weights
            probs = np.fft.ifft(samples * np.exp(1j * lam * grid[0]))
            return _spectral_package(grid, probs, scenario, lam, samples, imag_tol)

    n_l = 2 * len(support) + 1
    lam_max = np.pi / max(delta, tol, 1e-12)
    lam = np.linspace(0.0, lam_max, n_l)
    samples = np.array([fcs_characteristic(scenario, x) for x in lam])
    basis = np.exp(-1j * np.outer(lam, support))
    design = np.vstack([basis.real, basis.imag])
    target = np.concatenate([samples.real, samples.imag])
    sol, *_ = np.linalg.lstsq(design, target, rcond=None)
    return _spectral_package(support, sol.astype(np.complex128), scenario, lam, samples, imag_tol)


def _spectral_package(support, weights, scenario, lam, samples, imag_tol):
    resid_max = float(np.max(np.abs(weights.imag))) if weights.size else 0.0
    resid_total = float(np.sum(np.abs(weights.imag)))
    w = weights.real
    recon = np.exp(-1j * np.outer(lam, support)) @ w
    miss = float(np.max(np.abs(recon - samples)))
    if miss > 1e-6 or abs(w.sum() - 1.0) > 1e-6:
        raise AliasingDetected(
            f"spectral inversion misses the samples by {miss:.3e} "
            f"(weight sum {w.sum():.9g})"
        )
    keep = np.abs(w) > 1e-12
    w = w[keep]
    return QuasiDistribution(np.asarray(support)[keep, None], w / w.sum(),
                             residual_imag_max=resid_max, residual_imag_total=resid_total)


def measured_fcs(scenario: FCSScenario, detector: GaussianDetector, *,
                 budget: int = PAIR_BUDGET, prune_rtol: float = PRUNE_RTOL,
                 imag_tol: float = IMAG_MASS_ATOL) -> SignedGaussianMixture:
    """Detector readout statistics for the time-integrated observable.

    One Gaussian of width sigma_imp per distinct pair midpoint, each pair
    damped by exp(-sigma_ba^2 (m_L - m_R)^2 / 2). Weights keep summing to
    one for any detector; nonnegativity of the density requires the
    Heisenberg bound.
    """
    _check_heisenberg([detector])
    pair_w, m_reps = _fcs_pair_matrix(scenario, budget, prune_rtol)
    n_bins = len(m_reps)
    li, ri = np.meshgrid(np.arange(n_bins), np.arange(n_bins), indexing="ij")
    deltas = m_reps[li.ravel()] - m_reps[ri.ravel()]
    mids = 0.5 * (m_reps[li.ravel()] + m_reps[ri.ravel()])
    w = pair_w.ravel() * np.exp(-0.5 * detector.sigma_ba ** 2 * deltas ** 2)
    a_scale = float(np.max(np.abs(scenario.a.eigenvalues)))
    tol = 1e-9 * max(a_scale, 1e-300) * scenario.duration
    reps, labels = cluster_values(mids, tol)
    centers, weights, _ = _merge_by_labels(labels[:, None], reps[labels][:, None], w)
    resid = float(np.sum(np.abs(weights.imag)))
    if resid > imag_tol:
        raise ToleranceExceeded(f"residual imaginary mass {resid:.3e}")
    widths = np.full_like(centers, detector.sigma_imp)
    return SignedGaussianMixture(centers, widths, weights.real)


def first_moment_quadrature(scenario: FCSScenario, order: int = 200) -> float:
    """Continuum first moment int_0^T Tr{A(t) rho} dt by Gauss-Legendre.

    Independent of the slicing machinery; used to pin the Trotter error of
    the distribution moments.
    """
    if not isinstance(scenario.h, HermitianObservable):
        raise ValueError("quadrature needs a time-independent Hamiltonian")
    nodes, wts = np.polynomial.legendre.leggauss(order)
    t = 0.5 * scenario.duration * (nodes + 1.0)
    v = scenario.h.eigenvectors
    total = 0.0
    for ti, wi in zip(t, wts):
        u = (v * np.exp(-1j * scenario.h.eigenvalues * ti)) @ v.conj().T
        a_t = u.conj().T @ scenario.a.matrix @ u
        total += wi * float(np.real(np.trace(a_t @ scenario.rho0.matrix)))
    return 0.5 * scenario.duration * total
