"""Exact quasi-probability distributions for observables at subsequent times.

The joint distribution of N observables probed at times tau_1 < .. < tau_N
is assembled as a sum over pairs of left/right eigenvalue trajectories.
Each pair contributes its interference amplitude at the per-coordinate
midpoint of the two trajectories; pairs whose members differ carry the
quantum (possibly negative) part of the distribution. Enumeration is
exact, with a configurable pair budget instead of silent approximation.

A characteristic-function evaluator built from plain operator sandwiches
serves as an independent oracle for the trajectory sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import _kernels
from .errors import DimMismatch, ScenarioTooLarge, ToleranceExceeded
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    KrausChannel,
    UnitaryPropagator,
    cluster_values,
    evolve_matrix,
    propagator,
)

PAIR_BUDGET = 10**8
CELL_BUDGET = 1 << 24
SUPPORT_BIN_RTOL = 1e-9
IMAG_MASS_ATOL = 1e-9
WEIGHT_SUM_ATOL = 1e-8
PRUNE_RTOL = 1e-14

EvolutionStep = Union[UnitaryPropagator, KrausChannel]


@dataclass(frozen=True)
class SubsequentScenario:
    """N observables probed at subsequent times.

    ``steps[l] = (evolution, observable)`` where the evolution advances the
    state from the previous probe time to ``times[l]`` (the first step
    starts at t = 0). Evolutions are unitary propagators or Kraus channels.
    """

    rho0: DensityMatrix
    steps: Tuple[Tuple[EvolutionStep, HermitianObservable], ...]
    times: Tuple[float, ...]

    def __post_init__(self):
        steps = tuple((ev, ob) for ev, ob in self.steps)
        times = tuple(float(t) for t in self.times)
        if len(steps) < 1:
            raise ValueError("scenario needs at least one observable")
        if len(times) != len(steps):
            raise ValueError("times and steps must have equal length")
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise ValueError("times must be strictly ascending")
        d = self.rho0.dim
        for ev, ob in steps:
            if ev.dim != d or ob.dim != d:
                raise DimMismatch("all scenario operators must share the state dimension")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "times", times)

    @property
    def dim(self) -> int:
        return self.rho0.dim

    @property
    def n_observables(self) -> int:
        return len(self.steps)

    @property
    def is_unitary(self) -> bool:
        return all(isinstance(ev, UnitaryPropagator) for ev, _ in self.steps)

    @classmethod
    def from_hamiltonian(cls, h: HermitianObservable, rho0: DensityMatrix,
                         observables: Sequence[HermitianObservable],
                         times: Sequence[float]) -> "SubsequentScenario":
        """Build the per-step propagators exp(-i H dt) from one Hamiltonian."""
        times = [float(t) for t in times]
        prev = 0.0
        steps = []
        for t, ob in zip(times, observables):
            steps.append((propagator(h, t - prev, label=f"U({t:g},{prev:g})"), ob))
            prev = t
        return cls(rho0=rho0, steps=tuple(steps), times=tuple(times))


@dataclass(frozen=True)
class QuasiDistribution:
    """Finite-support distribution with real, possibly negative weights.

    ``support`` has one row per point and one column per observable.
    ``diag_weights``, when present, holds the contribution from pairs of
    identical trajectories (always nonnegative); the remainder of each
    weight comes from genuine interference.
    """

    support: np.ndarray
    weights: np.ndarray
    residual_imag_max: float = 0.0
    residual_imag_total: float = 0.0
    diag_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.support, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if sup.shape[0] != w.shape[0]:
            raise ValueError("support and weights disagree in length")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_ATOL:
            raise ToleranceExceeded(f"weights sum to {total:.12g}, expected 1")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "weights", w)
        sup.setflags(write=False)
        w.setflags(write=False)

    @property
    def dims(self) -> int:
        return self.support.shape[1]

    @property
    def min_weight(self) -> float:
        return float(self.weights.min()) if self.weights.size else 0.0

    def moment(self, k) -> float:
        """sum_j w_j prod_l A_{j,l}^{k_l}; scalar k means a 1-D distribution."""
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if k.shape[0] != self.dims:
            raise DimMismatch(f"multi-index length {k.shape[0]} != dims {self.dims}")
        if np.all(k == 0):
            return float(self.weights.sum())
        return float(np.sum(self.weights * np.prod(self.support ** k[np.newaxis, :], axis=1)))

    def marginal(self, keep) -> "QuasiDistribution":
        """Sum out all coordinates except those listed in ``keep``."""
        keep = [int(a) % self.dims for a in np.atleast_1d(keep)]
        sub = self.support[:, keep]
        order = np.lexsort(sub.T[::-1])
        sorted_sub = sub[order]
        new_pt = np.ones(len(order), dtype=bool)
        if len(order) > 1:
            new_pt[1:] = np.any(np.diff(sorted_sub, axis=0) != 0.0, axis=1)
        ids = np.cumsum(new_pt) - 1
        n = ids[-1] + 1 if len(ids) else 0
        w = np.zeros(n)
        np.add.at(w, ids, self.weights[order])
        pts = sorted_sub[new_pt]
        return QuasiDistribution(pts, w,
                                 residual_imag_max=self.residual_imag_max,
                                 residual_imag_total=self.residual_imag_total)

    def map_support(self, fn, bin_tol: float) -> "QuasiDistribution":
        """Push the distribution through a pointwise map of support rows.

        ``fn`` maps the (n, N) support array to an (n, M) array; images
        closer than ``bin_tol`` per coordinate merge.
        """
        img = np.atleast_2d(np.asarray(fn(self.support), dtype=np.float64))
        if img.ndim == 1:
            img = img[:, None]
        labels = np.empty((img.shape[0], img.shape[1]), dtype=np.int64)
        reps_per_axis = []
        for c in range(img.shape[1]):
            reps, lab = cluster_values(img[:, c], bin_tol)
            labels[:, c] = lab
            reps_per_axis.append(reps)
        sup, w, _ = _merge_by_labels(labels, img, self.weights.astype(np.complex128))
        return QuasiDistribution(sup, w.real,
                                 residual_imag_max=self.residual_imag_max,
                                 residual_imag_total=self.residual_imag_total)


def _merge_by_labels(labels, values, weights, extra=None):
    """Merge rows with identical label tuples; deterministic lexicographic order."""
    order = np.lexsort(labels.T[::-1])
    lab = labels[order]
    new_pt = np.ones(lab.shape[0], dtype=bool)
    if lab.shape[0] > 1:
        new_pt[1:] = np.any(np.diff(lab, axis=0) != 0, axis=1)
    ids = np.cumsum(new_pt) - 1
    n = int(ids[-1]) + 1 if len(ids) else 0
    w = np.zeros(n, dtype=np.complex128)
    np.add.at(w, ids, weights[order])
    pts = values[order][new_pt]
    merged_extra = None
    if extra is not None:
        merged_extra = np.zeros(n, dtype=np.complex128)
        np.add.at(merged_extra, ids, extra[order])
    return pts, w, merged_extra


class _PairCells:
    """Complex pair sums, resolved per (left bin, right bin) cell."""

    def __init__(self, scenario: SubsequentScenario, budget: int, prune_rtol: float):
        d = scenario.dim
        n_obs = scenario.n_observables
        if d ** (2 * n_obs) > budget:
            raise ScenarioTooLarge(
                f"d^(2N) = {d}^{2 * n_obs} exceeds the pair budget {budget:g}"
            )
        obs = [ob for _, ob in scenario.steps]
        self.reps = []
        eig_labels = []
        for ob in obs:
            reps, lab = ob.value_bins()
            self.reps.append(reps)
            eig_labels.append(lab)
        self.n_bins = [len(r) for r in self.reps]
        n_cells = 1
        for b in self.n_bins:
            n_cells *= b * b
        if n_cells > CELL_BUDGET:
            raise ScenarioTooLarge(f"{n_cells} support cells exceed the cell budget")
        self.strides = np.ones(n_obs, dtype=np.int64)
        for l in range(n_obs - 2, -1, -1):
            self.strides[l] = self.strides[l + 1] * self.n_bins[l + 1] ** 2
        self.n_cells = n_cells

        rho1 = evolve_matrix(scenario.steps[0][0], scenario.rho0.matrix)
        v1 = obs[0].eigenvectors
        rho1 = v1.conj().T @ rho1 @ v1
        transfer = []
        for l in range(1, n_obs):
            ev = scenario.steps[l][0]
            if not isinstance(ev, UnitaryPropagator):
                raise TypeError("trajectory enumeration requires unitary steps")
            transfer.append(obs[l].eigenvectors.conj().T @ ev.matrix @ obs[l - 1].eigenvectors)

        amp = _kernels.path_amplitudes(transfer, d, n_obs)
        n_seq = amp.shape[0]
        powers = d ** np.arange(n_obs - 1, -1, -1, dtype=np.int64)
        digits = (np.arange(n_seq, dtype=np.int64)[:, None] // powers[None, :]) % d
        rowkey = np.zeros(n_seq, dtype=np.int64)
        colkey = np.zeros(n_seq, dtype=np.int64)
        for l in range(n_obs):
            lab = eig_labels[l][digits[:, l]]
            rowkey += lab * (self.n_bins[l] * self.strides[l])
            colkey += lab * self.strides[l]
        first = digits[:, 0]
        last = digits[:, -1]

        # Sequences with amplitude at rounding level cannot move any weight;
        # dropping them keeps the sums exact at the stated tolerances.
        amax = float(np.max(np.abs(amp)))
        keep = np.abs(amp) > prune_rtol * amax
        amp, first, last = amp[keep], first[keep], last[keep]
        rowkey, colkey = rowkey[keep], colkey[keep]

        order = np.argsort(last, kind="stable")
        counts = np.bincount(last, minlength=d)
        starts = np.concatenate(([0], np.cumsum(counts)))
        self.cells = _kernels.accumulate_pairs(
            amp[order], first[order], rowkey[order], colkey[order], starts, rho1, n_cells
        )

    def decode(self):
        """Nonzero cells as (weights, left bins, right bins) arrays."""
        nz = np.nonzero(self.cells)[0]
        w = self.cells[nz]
        n_obs = len(self.n_bins)
        a = np.empty((nz.size, n_obs), dtype=np.int64)
        b = np.empty((nz.size, n_obs), dtype=np.int64)
        for l in range(n_obs):
            digit = (nz // self.strides[l]) % (self.n_bins[l] ** 2)
            a[:, l] = digit // self.n_bins[l]
            b[:, l] = digit % self.n_bins[l]
        return w, a, b

    def midpoint_bins(self):
        """Cluster the (value_a + value_b)/2 midpoints per coordinate."""
        mid_reps, mid_labels = [], []
        for l, reps in enumerate(self.reps):
            mids = 0.5 * (reps[:, None] + reps[None, :]).ravel()
            span = max(float(reps[-1] - reps[0]), 0.0) if len(reps) else 0.0
            r, lab = cluster_values(mids, SUPPORT_BIN_RTOL * span)
            mid_reps.append(r)
            mid_labels.append(lab.reshape(len(reps), len(reps)))
        return mid_reps, mid_labels


def _cells_to_distribution(pc: _PairCells, phase=None, imag_tol=IMAG_MASS_ATOL):
    w, a, b = pc.decode()
    if phase is not None:
        w = w * phase(pc, a, b)
    mid_reps, mid_labels = pc.midpoint_bins()
    n_obs = len(pc.n_bins)
    labels = np.empty((w.size, n_obs), dtype=np.int64)
    coords = np.empty((w.size, n_obs), dtype=np.float64)
    for l in range(n_obs):
        labels[:, l] = mid_labels[l][a[:, l], b[:, l]]
        coords[:, l] = mid_reps[l][labels[:, l]]
    diag = np.where(np.all(a == b, axis=1), w, 0.0)
    support, weights, diag_w = _merge_by_labels(labels, coords, w, extra=diag)
    resid_max = float(np.max(np.abs(weights.imag))) if weights.size else 0.0
    resid_total = float(np.sum(np.abs(weights.imag)))
    if resid_total > imag_tol:
        raise ToleranceExceeded(
            f"residual imaginary mass {resid_total:.3e} exceeds {imag_tol:.1e}"
        )
    return QuasiDistribution(support, weights.real,
                             residual_imag_max=resid_max,
                             residual_imag_total=resid_total,
                             diag_weights=diag_w.real)


def kqpd_subsequent(scenario: SubsequentScenario, *, budget: int = PAIR_BUDGET,
                    prune_rtol: float = PRUNE_RTOL,
                    imag_tol: float = IMAG_MASS_ATOL) -> QuasiDistribution:
    """Exact joint quasi-probability of the scenario's observables.

    Enumerates every left/right trajectory pair (complexity d^(2N-1) after
    the final-index constraint) and accumulates interference weights at the
    per-coordinate midpoints. Raises ScenarioTooLarge instead of
    approximating when the budget is exceeded, and ToleranceExceeded if the
    conjugate-pair cancellation leaves more than ``imag_tol`` imaginary
    mass.
    """
    if not scenario.is_unitary:
        raise TypeError("use kqpd_subsequent_channels for non-unitary steps")
    pc = _PairCells(scenario, budget, prune_rtol)
    return _cells_to_distribution(pc, imag_tol=imag_tol)


def kqpd_with_backaction(scenario: SubsequentScenario, gammas, *,
                         budget: int = PAIR_BUDGET, prune_rtol: float = PRUNE_RTOL,
                         imag_tol: float = IMAG_MASS_ATOL) -> QuasiDistribution:
    """Quasi-probability with detector back-action kicks of strength gamma_l.

    Each trajectory pair is weighted by exp(-i sum_l gamma_l (A_l^L - A_l^R)),
    the unitary kick exp(-i gamma_l A_l) applied at probe time l. With all
    gammas zero this reproduces :func:`kqpd_subsequent` exactly. The final
    coordinate's kick cancels through the trace but is applied uniformly.
    """
    if not scenario.is_unitary:
        raise TypeError("back-action kicks require unitary steps")
    g = np.asarray(gammas, dtype=np.float64).reshape(-1)
    if g.shape[0] != scenario.n_observables:
        raise DimMismatch("one gamma per observable is required")

    def phase(pc, a, b):
        ph = np.zeros(a.shape[0])
        for l, reps in enumerate(pc.reps):
            ph += g[l] * (reps[a[:, l]] - reps[b[:, l]])
        return np.exp(-1j * ph)

    pc = _PairCells(scenario, budget, prune_rtol)
    return _cells_to_distribution(pc, phase=phase, imag_tol=imag_tol)


def kqpd_subsequent_channels(scenario: SubsequentScenario, *,
                             budget: int = PAIR_BUDGET,
                             imag_tol: float = IMAG_MASS_ATOL) -> QuasiDistribution:
    """Quasi-probability for scenarios whose steps may be Kraus channels.

    Expands each probe in spectral projectors P_a rho P_b and threads the
    resulting branches through the channel evolutions. Reduces to
    :func:`kqpd_subsequent` when every step is unitary.
    """
    n_obs = scenario.n_observables
    obs = [ob for _, ob in scenario.steps]
    bins = []
    n_branches = 1
    for ob in obs[:-1]:
        reps, lab = ob.value_bins()
        bins.append((reps, lab))
        n_branches *= len(reps) ** 2
    reps_last, lab_last = obs[-1].value_bins()
    bins.append((reps_last, lab_last))
    n_branches *= len(reps_last)
    if n_branches > budget:
        raise ScenarioTooLarge(f"{n_branches} channel branches exceed the budget {budget:g}")

    projectors = []
    for ob, (reps, lab) in zip(obs, bins):
        projectors.append([ob.projector(np.nonzero(lab == t)[0]) for t in range(len(reps))])

    rho = evolve_matrix(scenario.steps[0][0], scenario.rho0.matrix)
    branches = [((), rho)]
    for l in range(n_obs - 1):
        new = []
        for key, m in branches:
            for ai, pa in enumerate(projectors[l]):
                left = pa @ m
                for bi, pb in enumerate(projectors[l]):
                    new.append((key + ((ai, bi),), left @ pb))
        ev = scenario.steps[l + 1][0]
        branches = [(key, evolve_matrix(ev, m)) for key, m in new]

    mid_reps, mid_labels = [], []
    for reps, _ in bins:
        mids = 0.5 * (reps[:, None] + reps[None, :]).ravel()
        span = max(float(reps[-1] - reps[0]), 0.0) if len(reps) else 0.0
        r, lab = cluster_values(mids, SUPPORT_BIN_RTOL * span)
        mid_reps.append(r)
        mid_labels.append(lab.reshape(len(reps), len(reps)))

    rows, weights = [], []
    for key, m in branches:
        for ai, pa in enumerate(projectors[-1]):
            w = np.trace(pa @ m)
            lab = [mid_labels[l][a, b] for l, (a, b) in enumerate(key)]
            lab.append(mid_labels[-1][ai, ai])
            rows.append(lab)
            weights.append(w)
    labels = np.asarray(rows, dtype=np.int64)
    coords = np.empty_like(labels, dtype=np.float64)
    for l in range(n_obs):
        coords[:, l] = mid_reps[l][labels[:, l]]
    support, w, _ = _merge_by_labels(labels, coords, np.asarray(weights, dtype=np.complex128))
    resid_max = float(np.max(np.abs(w.imag))) if w.size else 0.0
    resid_total = float(np.sum(np.abs(w.imag)))
    if resid_total > imag_tol:
        raise ToleranceExceeded(
            f"residual imaginary mass {resid_total:.3e} exceeds {imag_tol:.1e}"
        )
    return QuasiDistribution(support, w.real,
                             residual_imag_max=resid_max, residual_imag_total=resid_total)


def characteristic_function(scenario: SubsequentScenario, lambdas, gammas=None) -> complex:
    """Symmetrically split characteristic function of the scenario.

    Evaluates Tr{E_N .. E_1 rho(tau_1) F_1 .. F_N} with
    E_l = exp(-i (lambda_l / 2 + gamma_l) A_l) and
    F_l = exp(-i (lambda_l / 2 - gamma_l) A_l), the evolution interleaved.
    Independent of the trajectory machinery, so it doubles as an oracle:
    the Fourier sum of :func:`kqpd_subsequent` over its support must agree.
    """
    lam = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    if lam.shape[0] != scenario.n_observables:
        raise DimMismatch("one lambda per observable is required")
    if gammas is None:
        g = np.zeros_like(lam)
    else:
        g = np.asarray(gammas, dtype=np.float64).reshape(-1)
        if g.shape[0] != lam.shape[0]:
            raise DimMismatch("gammas must match lambdas in length")
    rho = scenario.rho0.matrix
    for (ev, ob), lam_l, g_l in zip(scenario.steps, lam, g):
        rho = evolve_matrix(ev, rho)
        v = ob.eigenvectors
        left = (v * np.exp(-1j * (0.5 * lam_l + g_l) * ob.eigenvalues)) @ v.conj().T
        right = (v * np.exp(-1j * (0.5 * lam_l - g_l) * ob.eigenvalues)) @ v.conj().T
        rho = left @ rho @ right
    return complex(np.trace(rho))


def fourier_sum(dist: QuasiDistribution, lambdas) -> complex:
    """Discrete Fourier transform sum_j w_j exp(-i lambda . A_j)."""
    lam = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    if lam.shape[0] != dist.dims:
        raise DimMismatch("lambda length must match distribution dims")
    return complex(np.sum(dist.weights * np.exp(-1j * dist.support @ lam)))


def moments(dist: QuasiDistribution, k) -> float:
    """Module-level alias for :meth:`QuasiDistribution.moment`."""
    return dist.moment(k)


def born_distribution(scenario: SubsequentScenario) -> QuasiDistribution:
    """Projective single-time distribution of the final observable.

    Direct Born-rule evaluation on the fully evolved state; used as the
    oracle for the marginal-consistency property of the trajectory sums.
    """
    rho = scenario.rho0.matrix
    for ev, _ in scenario.steps:
        rho = evolve_matrix(ev, rho)
    ob = scenario.steps[-1][1]
    reps, lab = ob.value_bins()
    probs = []
    for t in range(len(reps)):
        probs.append(float(np.real(np.trace(ob.projector(np.nonzero(lab == t)[0]) @ rho))))
    return QuasiDistribution(np.asarray(reps)[:, None], np.asarray(probs))
