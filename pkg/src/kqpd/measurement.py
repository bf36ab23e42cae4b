"""Positive measurement statistics from quasi-probabilities.

Impulsive detector couplings with Gaussian detector states turn the exact
trajectory-pair sums into signed Gaussian mixtures: every pair contributes
a Gaussian at its midpoint whose width is the detector imprecision, damped
by a back-action factor that suppresses interference between differing
trajectories. Detectors satisfying sigma_imp * sigma_ba >= 1/2 always
produce nonnegative densities; violating the bound is allowed and flagged,
since the resulting negative "densities" are a useful diagnostic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .engine import (
    IMAG_MASS_ATOL,
    PAIR_BUDGET,
    PRUNE_RTOL,
    WEIGHT_SUM_ATOL,
    QuasiDistribution,
    SubsequentScenario,
    _PairCells,
    _merge_by_labels,
    kqpd_subsequent,
)
from .errors import (
    DimMismatch,
    HeisenbergViolationWarning,
    NegativeDensity,
    ToleranceExceeded,
    ZeroProbabilitySlice,
)
from .linalg import DensityMatrix, HermitianObservable, UnitaryPropagator

_SQRT2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianDetector:
    """Gaussian von Neumann detector, position-referred.

    ``sigma_imp`` is the readout smearing width, ``sigma_ba`` the
    back-action (dephasing) strength; ``chi`` is the raw coupling, kept
    for bookkeeping only. Physical detectors satisfy
    ``sigma_imp * sigma_ba >= 1/2``.
    """

    sigma_imp: float
    sigma_ba: float
    chi: float = 1.0

    def __post_init__(self):
        if not (self.sigma_imp > 0):
            raise ValueError("sigma_imp must be positive")
        if not (self.sigma_ba >= 0):
            raise ValueError("sigma_ba must be nonnegative")
        if not (self.chi > 0):
            raise ValueError("chi must be positive")

    @property
    def heisenberg_ok(self) -> bool:
        return self.sigma_imp * self.sigma_ba >= 0.5 - 1e-12

    @classmethod
    def saturating(cls, sigma_imp: float, chi: float = 1.0) -> "GaussianDetector":
        """Minimal-uncertainty detector: sigma_ba = 1 / (2 sigma_imp)."""
        return cls(sigma_imp=sigma_imp, sigma_ba=0.5 / sigma_imp, chi=chi)


@dataclass(frozen=True)
class SignedGaussianMixture:
    """Sum of axis-aligned Gaussians with signed weights.

    ``centers`` and ``widths`` are (n, N); weights sum to one even when
    individual components are negative.
    """

    centers: np.ndarray
    widths: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        s = np.atleast_2d(np.asarray(self.widths, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if s.shape != c.shape or w.shape[0] != c.shape[0]:
            raise DimMismatch("centers, widths and weights disagree in shape")
        if np.any(s <= 0):
            raise ValueError("component widths must be positive")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_ATOL:
            raise ToleranceExceeded(f"mixture weights sum to {total:.12g}, expected 1")
        for a in (c, s, w):
            a.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "widths", s)
        object.__setattr__(self, "weights", w)

    @property
    def dims(self) -> int:
        return self.centers.shape[1]

    def density(self, points) -> np.ndarray:
        """Evaluate the signed density at points of shape (..., N)."""
        pts = np.asarray(points, dtype=np.float64)
        scalar_in = pts.ndim == 1 and self.dims == 1 and pts.shape[0] != 1
        if pts.ndim == 1:
            pts = pts[:, None] if self.dims == 1 else pts[None, :]
        if pts.shape[-1] != self.dims:
            raise DimMismatch(f"points must have last axis {self.dims}")
        flat = pts.reshape(-1, self.dims)
        z = (flat[:, None, :] - self.centers[None, :, :]) / self.widths[None, :, :]
        comp = np.exp(-0.5 * np.sum(z * z, axis=2)) / np.prod(_SQRT2PI * self.widths, axis=1)[None, :]
        out = comp @ self.weights
        out = out.reshape(pts.shape[:-1])
        return out if not scalar_in else out

    def moment(self, k) -> float:
        """Exact raw moment E[prod_l x_l^{k_l}] of the signed mixture."""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if k.shape[0] != self.dims:
            raise DimMismatch("multi-index length must match dims")
        per_comp = np.ones(self.centers.shape[0])
        for l in range(self.dims):
            per_comp *= _gauss_raw_moment(self.centers[:, l], self.widths[:, l], int(k[l]))
        return float(np.sum(self.weights * per_comp))

    def marginal(self, keep) -> "SignedGaussianMixture":
        keep = [int(a) % self.dims for a in np.atleast_1d(keep)]
        return SignedGaussianMixture(self.centers[:, keep], self.widths[:, keep], self.weights)

    def condition_final(self, value: float) -> "SignedGaussianMixture":
        """Slice at a fixed final coordinate and renormalize.

        Raises ZeroProbabilitySlice when the slice carries no density.
        """
        if self.dims < 2:
            raise DimMismatch("conditioning needs at least two coordinates")
        z = (value - self.centers[:, -1]) / self.widths[:, -1]
        fac = np.exp(-0.5 * z * z) / (_SQRT2PI * self.widths[:, -1])
        w = self.weights * fac
        total = w.sum()
        if total <= 0 or not np.isfinite(total):
            raise ZeroProbabilitySlice(f"no probability mass at final coordinate {value}")
        return SignedGaussianMixture(self.centers[:, :-1], self.widths[:, :-1], w / total)

    def sample(self, n: int, seed, probe_points: int = 1000) -> np.ndarray:
        """Draw n points by rejection against the |weight| envelope mixture.

        The density is first probed on a grid (``probe_points`` per axis,
        capped for N > 1); NegativeDensity is raised if the probe finds
        density below -1e-9. Deterministic for a fixed seed.
        """
        grid = self._probe_grid(probe_points)
        dens = self.density(grid)
        if float(dens.min()) < -1e-9:
            raise NegativeDensity(f"probe grid density reaches {dens.min():.3e}")
        rng = np.random.default_rng(seed)
        absw = np.abs(self.weights)
        envelope_mass = absw.sum()
        probs = absw / envelope_mass
        out = np.empty((n, self.dims))
        filled = 0
        while filled < n:
            batch = max(256, int(1.5 * (n - filled) * envelope_mass))
            comp = rng.choice(len(probs), size=batch, p=probs)
            x = self.centers[comp] + self.widths[comp] * rng.standard_normal((batch, self.dims))
            target = self.density(x)
            env = envelope_mass * SignedGaussianMixture(
                self.centers, self.widths, absw / envelope_mass).density(x)
            accept = rng.uniform(size=batch) * env < target
            got = x[accept]
            take = min(len(got), n - filled)
            out[filled:filled + take] = got[:take]
            filled += take
        return out[:, 0] if self.dims == 1 else out

    def _probe_grid(self, points_per_axis: int) -> np.ndarray:
        pts = points_per_axis if self.dims == 1 else min(points_per_axis, 128)
        axes = []
        for l in range(self.dims):
            lo = float(np.min(self.centers[:, l] - 6 * self.widths[:, l]))
            hi = float(np.max(self.centers[:, l] + 6 * self.widths[:, l]))
            axes.append(np.linspace(lo, hi, pts))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def _gauss_raw_moment(mean, sigma, k: int):
    """E[(mean + sigma Z)^k] for standard normal Z, vectorized over components."""
    total = np.zeros_like(mean)
    for j in range(0, k + 1, 2):
        # (j-1)!! central moments; odd central moments vanish
        dfact = 1.0
        for t in range(j - 1, 0, -2):
            dfact *= t
        from math import comb
        total = total + comb(k, j) * dfact * (sigma ** j) * (mean ** (k - j))
    return total if k > 0 else np.ones_like(mean)


def _check_heisenberg(detectors: Sequence[GaussianDetector]):
    for i, det in enumerate(detectors):
        if not det.heisenberg_ok:
            warnings.warn(
                f"detector {i} has sigma_imp*sigma_ba = "
                f"{det.sigma_imp * det.sigma_ba:.4g} < 1/2; measured density may "
                "turn negative",
                HeisenbergViolationWarning,
                stacklevel=3,
            )


def measured_subsequent(scenario: SubsequentScenario,
                        detectors: Sequence[GaussianDetector], *,
                        budget: int = PAIR_BUDGET, prune_rtol: float = PRUNE_RTOL,
                        imag_tol: float = IMAG_MASS_ATOL) -> SignedGaussianMixture:
    """Outcome statistics of von Neumann measurements of every observable.

    One mixture component per distinct trajectory-pair midpoint: centers
    are the midpoints, widths the per-coordinate ``sigma_imp``, and each
    pair's weight is damped by exp(-sigma_ba^2 (A^L - A^R)^2 / 2) per
    coordinate before merging with its left/right-swapped conjugate.

    Component weights always sum to one; the density is guaranteed
    nonnegative only when every detector satisfies the Heisenberg bound
    (violations warn, not raise).
    """
    if not scenario.is_unitary:
        raise TypeError("measured statistics require unitary steps")
    n_obs = scenario.n_observables
    if len(detectors) != n_obs:
        raise DimMismatch(f"need {n_obs} detectors, got {len(detectors)}")
    _check_heisenberg(detectors)

    pc = _PairCells(scenario, budget, prune_rtol)
    w, a, b = pc.decode()
    mid_reps, mid_labels = pc.midpoint_bins()
    labels = np.empty((w.size, n_obs), dtype=np.int64)
    coords = np.empty((w.size, n_obs), dtype=np.float64)
    for l in range(n_obs):
        delta = pc.reps[l][a[:, l]] - pc.reps[l][b[:, l]]
        w = w * np.exp(-0.5 * detectors[l].sigma_ba ** 2 * delta ** 2)
        labels[:, l] = mid_labels[l][a[:, l], b[:, l]]
        coords[:, l] = mid_reps[l][labels[:, l]]
    centers, weights, _ = _merge_by_labels(labels, coords, w)
    resid = float(np.sum(np.abs(weights.imag)))
    if resid > imag_tol:
        raise ToleranceExceeded(f"residual imaginary mass {resid:.3e}")
    widths = np.tile([det.sigma_imp for det in detectors], (centers.shape[0], 1))
    return SignedGaussianMixture(centers, widths, weights.real)


@dataclass(frozen=True)
class SpinMeasuredResult:
    """Intermediate-strength first measurement, projective second.

    ``slices[v]`` is the unnormalized 1-D mixture of first-measurement
    readouts recorded together with second outcome ``v``; slice weights sum
    to the probability of that outcome.
    """

    outcome_values: Tuple[float, ...]
    slice_centers: Tuple[np.ndarray, ...]
    slice_weights: Tuple[np.ndarray, ...]
    sigma_imp: float
    kqpd: QuasiDistribution

    def outcome_probability(self, value: float) -> float:
        i = self._index(value)
        return float(np.sum(self.slice_weights[i]))

    def conditional(self, value: float) -> SignedGaussianMixture:
        """P(first readout | second outcome = value)."""
        i = self._index(value)
        w = self.slice_weights[i]
        total = w.sum()
        if total <= 0:
            raise ZeroProbabilitySlice(f"outcome {value} has zero probability")
        centers = self.slice_centers[i][:, None]
        widths = np.full_like(centers, self.sigma_imp)
        return SignedGaussianMixture(centers, widths, w / total)

    def joint_density(self, x, value: float) -> np.ndarray:
        i = self._index(value)
        x = np.asarray(x, dtype=np.float64)
        z = (x[..., None] - self.slice_centers[i][None, :]) / self.sigma_imp
        return np.exp(-0.5 * z * z) @ self.slice_weights[i] / (_SQRT2PI * self.sigma_imp)

    def _index(self, value: float) -> int:
        for i, v in enumerate(self.outcome_values):
            if abs(v - value) < 1e-9:
                return i
        raise KeyError(f"no projective outcome at {value}")


def spin_sequential_measured(rho0: DensityMatrix, obs1: HermitianObservable,
                             obs2: HermitianObservable, det1: GaussianDetector, *,
                             u1: Optional[UnitaryPropagator] = None,
                             u2: Optional[UnitaryPropagator] = None) -> SpinMeasuredResult:
    """Gaussian measurement of obs1 followed by a projective obs2 readout.

    The joint statistics follow from the two-observable quasi-probability:
    every support value sigma_1' of the first coordinate contributes a
    Gaussian N(sigma_1; sigma_1', sigma_imp) damped by
    exp(-sigma_ba^2 delta^2 / 2) where delta is the left/right eigenvalue
    gap feeding that support value. The second measurement stays discrete.
    """
    d = rho0.dim
    u1 = u1 or UnitaryPropagator.identity(d)
    u2 = u2 or UnitaryPropagator.identity(d)
    scenario = SubsequentScenario(rho0=rho0, steps=((u1, obs1), (u2, obs2)), times=(0.0, 1.0))
    _check_heisenberg([det1])

    pc = _PairCells(scenario, PAIR_BUDGET, PRUNE_RTOL)
    w, a, b = pc.decode()
    mid_reps, mid_labels = pc.midpoint_bins()
    delta1 = pc.reps[0][a[:, 0]] - pc.reps[0][b[:, 0]]
    w = w * np.exp(-0.5 * det1.sigma_ba ** 2 * delta1 ** 2)
    labels = np.stack([mid_labels[0][a[:, 0], b[:, 0]], mid_labels[1][a[:, 1], b[:, 1]]], axis=1)
    coords = np.stack([mid_reps[0][labels[:, 0]], mid_reps[1][labels[:, 1]]], axis=1)
    pts, weights, _ = _merge_by_labels(labels, coords, w)
    weights = weights.real

    kqpd = kqpd_subsequent(scenario)
    outcome_values = []
    slice_centers = []
    slice_weights = []
    for v in np.unique(pts[:, 1]):
        mask = pts[:, 1] == v
        outcome_values.append(float(v))
        slice_centers.append(pts[mask, 0])
        slice_weights.append(weights[mask])
    return SpinMeasuredResult(
        outcome_values=tuple(outcome_values),
        slice_centers=tuple(slice_centers),
        slice_weights=tuple(slice_weights),
        sigma_imp=det1.sigma_imp,
        kqpd=kqpd,
    )


def measured_single_grid(dist: QuasiDistribution, kernel_x: np.ndarray,
                         kernel_density: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Single-observable readout density for an arbitrary sampled detector.

    Back-action is irrelevant for one observable, so the readout density is
    the support-weighted sum of shifted copies of the detector's position
    density. ``kernel_x`` must be a uniform grid carrying
    ``kernel_density`` (normalized to unit integral within 1e-6).

    Only N = 1 is supported; multi-detector non-Gaussian kernels would
    need a quadrature prescription for the back-action integral that is
    not part of this model.
    """
    if dist.dims != 1:
        raise DimMismatch("grid convolution is only defined for one observable")
    x = np.asarray(kernel_x, dtype=np.float64)
    f = np.asarray(kernel_density, dtype=np.float64)
    dx = x[1] - x[0]
    if abs(np.sum(f) * dx - 1.0) > 1e-6:
        raise ValueError("kernel density must integrate to 1")
    # f is the density of the readout deviation; the readout density is the
    # support-weighted superposition of shifted kernels on the same grid.
    out = np.zeros_like(f)
    for aj, wj in zip(dist.support[:, 0], dist.weights):
        out += wj * np.interp(x - aj, x, f, left=0.0, right=0.0)
    return x, out
