"""Application suites built on the quasi-probability engine.

Three problem families reduce to small subsequent-measurement scenarios:

* work statistics as the difference of two energy readings of a work
  storage device, compared against the two-point projective scheme and
  the counting statistics of the power operator;
* weak values with post-selection, their conditioned distribution,
  variance, and the anomaly/negativity equivalence;
* Leggett-Garg tests from three dichotomic readings, including the
  discretized three-time distribution and its sum rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np

from .engine import (
    QuasiDistribution,
    SubsequentScenario,
    _merge_by_labels,
    kqpd_subsequent,
)
from .errors import DimMismatch, OverlapTooSmall
from .fcs import FCSScenario, fcs_distribution
from .linalg import (
    DensityMatrix,
    HermitianObservable,
    UnitaryPropagator,
    cluster_values,
    eig_hermitian,
    propagator,
)
from .phasespace import Wavefunction1D, wigner

OVERLAP_FLOOR = 1e-8
LG_VIOLATION_ATOL = 1e-9


# ---------------------------------------------------------------------------
# work statistics


@dataclass(frozen=True)
class WorkScenario:
    """Total Hamiltonian, a work-storage part, an initial state, a duration."""

    h_total: HermitianObservable
    h_w: HermitianObservable
    rho0: DensityMatrix
    tau: float

    def __post_init__(self):
        if not (self.h_total.dim == self.h_w.dim == self.rho0.dim):
            raise DimMismatch("work scenario operators must share one dimension")
        if not (self.tau > 0):
            raise ValueError("tau must be positive")

    @property
    def dim(self) -> int:
        return self.h_total.dim

    def propagator(self) -> UnitaryPropagator:
        return propagator(self.h_total, self.tau, label="U(tau,0)")


def _work_bin_tol(s: WorkScenario) -> float:
    return 1e-9 * max(s.h_w.spectral_range, 1.0)


def work_kqpd(s: WorkScenario) -> QuasiDistribution:
    """Quasi-probability of the energy gained by the storage device.

    Two readings of the storage Hamiltonian, one before and one after the
    evolution; the work argument is the second reading minus the midpoint
    of the first left/right pair, so coherences of the initial state in
    the energy basis show up as extra (possibly negative) support points.
    """
    ident = UnitaryPropagator.identity(s.dim)
    scenario = SubsequentScenario(
        rho0=s.rho0,
        steps=((ident, s.h_w), (s.propagator(), s.h_w)),
        times=(0.0, s.tau),
    )
    joint = kqpd_subsequent(scenario)
    return joint.map_support(lambda pts: pts[:, 1] - pts[:, 0], _work_bin_tol(s))


def tpm_distribution(s: WorkScenario) -> QuasiDistribution:
    """Two projective energy readings; always a genuine distribution.

    The first reading dephases the state in the storage-energy eigenbasis,
    after which the statistics are the standard two-point ones.
    """
    reps, labels = s.h_w.value_bins()
    u = s.propagator().matrix
    rho = s.rho0.matrix
    projs = [s.h_w.projector(np.nonzero(labels == t)[0]) for t in range(len(reps))]
    rows = []
    weights = []
    for i, pi in enumerate(projs):
        start = pi @ rho @ pi
        evolved = u @ start @ u.conj().T
        for f, pf in enumerate(projs):
            w = float(np.real(np.trace(pf @ evolved)))
            rows.append(reps[f] - reps[i])
            weights.append(w)
    vals, lab = cluster_values(np.asarray(rows), _work_bin_tol(s))
    support, w, _ = _merge_by_labels(lab[:, None], vals[lab][:, None],
                                     np.asarray(weights, dtype=np.complex128))
    return QuasiDistribution(support, w.real)


def work_moments(s: WorkScenario, k: int) -> float:
    """k-th work moment from ordered products of the energy change.

    For k = 1, 2 this reduces to Tr{(H_w(tau) - H_w)^k rho0}; higher
    moments interleave the anti-ordered and ordered factors on the two
    sides of the state with binomial weights.
    """
    if k < 0:
        raise ValueError("moment order must be nonnegative")
    if k == 0:
        return 1.0
    u = s.propagator().matrix
    hw = s.h_w.matrix
    hw_tau = u.conj().T @ hw @ u
    d = s.dim

    def ordered(j: int) -> np.ndarray:
        # time-ordered (later leftmost): sum_m C(j,m) H_w(tau)^m (-H_w)^(j-m)
        total = np.zeros((d, d), dtype=np.complex128)
        for m in range(j + 1):
            total += comb(j, m) * np.linalg.matrix_power(hw_tau, m) \
                @ np.linalg.matrix_power(-hw, j - m)
        return total

    acc = 0.0
    for l in range(k + 1):
        left = ordered(k - l).conj().T  # anti-ordered l-fold factor
        acc += comb(k, l) * float(np.real(np.trace(left @ ordered(l) @ s.rho0.matrix)))
        # note: ordered(j)^dag is the anti-ordered product of the same factors
    return acc / 2 ** k


def power_operator(s: WorkScenario) -> np.ndarray:
    """Energy flow into the storage device: i [H, H_w]."""
    return 1j * (s.h_total.matrix @ s.h_w.matrix - s.h_w.matrix @ s.h_total.matrix)


@dataclass(frozen=True)
class PowerFCSReport:
    work_distribution: QuasiDistribution
    power_distribution: QuasiDistribution
    commutator_norm: float
    max_deviation: float
    commuting: bool


def power_fcs_consistency(s: WorkScenario, slices: int = 64) -> PowerFCSReport:
    """Compare the work distribution against counting statistics of the power.

    When the power operator commutes with the total Hamiltonian the two
    distributions coincide (for a time-independent Hamiltonian that forces
    the power operator to vanish, making both a point mass at zero). The
    non-commuting case is reported, not rejected.
    """
    p_mat = power_operator(s)
    p_obs = eig_hermitian(p_mat) if np.max(np.abs(p_mat)) > 0 else eig_hermitian(
        np.zeros_like(p_mat))
    comm = p_mat @ s.h_total.matrix - s.h_total.matrix @ p_mat
    comm_norm = float(np.max(np.abs(comm)))
    work = work_kqpd(s)
    fcs_scn = FCSScenario(a=p_obs, h=s.h_total, rho0=s.rho0, duration=s.tau, slices=slices)
    power = fcs_distribution(fcs_scn, "spectral")
    max_dev = _distribution_deviation(work, power, _work_bin_tol(s))
    return PowerFCSReport(
        work_distribution=work,
        power_distribution=power,
        commutator_norm=comm_norm,
        max_deviation=max_dev,
        commuting=comm_norm < 1e-12 * max(float(np.max(np.abs(s.h_total.matrix))), 1.0),
    )


def _distribution_deviation(a: QuasiDistribution, b: QuasiDistribution, tol: float) -> float:
    """Sup-norm weight difference after aligning supports within tol."""
    pts = np.concatenate([a.support[:, 0], b.support[:, 0]])
    reps, labels = cluster_values(pts, max(tol, 1e-12))
    wa = np.zeros(len(reps))
    wb = np.zeros(len(reps))
    np.add.at(wa, labels[:len(a.weights)], a.weights)
    np.add.at(wb, labels[len(a.weights):], b.weights)
    return float(np.max(np.abs(wa - wb))) if len(reps) else 0.0


# ---------------------------------------------------------------------------
# weak values


@dataclass(frozen=True)
class WeakValueScenario:
    """Pre-selected state, measured observable, post-selected state."""

    a: HermitianObservable
    i_state: np.ndarray
    f_state: np.ndarray
    overlap_floor: float = OVERLAP_FLOOR

    def __post_init__(self):
        i_vec = np.asarray(self.i_state, dtype=np.complex128).reshape(-1)
        f_vec = np.asarray(self.f_state, dtype=np.complex128).reshape(-1)
        if i_vec.shape[0] != self.a.dim or f_vec.shape[0] != self.a.dim:
            raise DimMismatch("state vectors must match the observable dimension")
        i_vec = i_vec / np.linalg.norm(i_vec)
        f_vec = f_vec / np.linalg.norm(f_vec)
        for v in (i_vec, f_vec):
            v.setflags(write=False)
        object.__setattr__(self, "i_state", i_vec)
        object.__setattr__(self, "f_state", f_vec)

    @property
    def overlap(self) -> complex:
        return complex(np.vdot(self.f_state, self.i_state))

    def _require_overlap(self):
        if abs(self.overlap) <= self.overlap_floor:
            raise OverlapTooSmall(
                f"|<F|I>| = {abs(self.overlap):.3e} is below the floor "
                f"{self.overlap_floor:.1e}"
            )


def weak_value(s: WeakValueScenario) -> complex:
    """<F|A|I> / <F|I>; anomalous when its real part leaves the spectrum."""
    s._require_overlap()
    return complex(np.vdot(s.f_state, s.a.matrix @ s.i_state) / s.overlap)


def weak_kqpd(s: WeakValueScenario) -> QuasiDistribution:
    """Conditioned quasi-probability of the measured observable.

    The two-measurement distribution (observable, then post-selection
    projector) sliced on the successful outcome and renormalized by the
    Born probability |<F|I>|^2. Its mean is the real part of the weak
    value; support outside the eigenvalue range never occurs, so an
    anomalous weak value forces a negative weight.
    """
    s._require_overlap()
    reps, labels = s.a.value_bins()
    v = s.a.eigenvectors
    fi = v.conj().T @ s.f_state   # <A_k|F>
    ii = v.conj().T @ s.i_state   # <A_k|I>
    n_bins = len(reps)
    amp = np.zeros(n_bins, dtype=np.complex128)  # <F|P_bin|I>-resolved amplitudes
    for b in range(n_bins):
        sel = labels == b
        amp[b] = np.sum(np.conj(fi[sel]) * ii[sel])
    pair_w = amp[:, None] * np.conj(amp)[None, :]
    mids = 0.5 * (reps[:, None] + reps[None, :]).ravel()
    tol = 1e-9 * max(s.a.spectral_range, 0.0)
    mreps, mlabels = cluster_values(mids, tol)
    support, w, _ = _merge_by_labels(mlabels[:, None], mreps[mlabels][:, None], pair_w.ravel())
    w = w.real / abs(s.overlap) ** 2
    return QuasiDistribution(support, w / w.sum())


def weak_variance(s: WeakValueScenario) -> float:
    """Variance of the conditioned distribution, in closed form.

    Equal to Re{<F|A^2|I>/<F|I>} / 2 + |A_w|^2 / 2 - (Re A_w)^2, which the
    midpoint structure of the distribution enforces; the |A_w|^2 term is
    what the off-diagonal (left != right) pairs contribute to the second
    moment.
    """
    s._require_overlap()
    aw = weak_value(s)
    a2w = complex(np.vdot(s.f_state, s.a.matrix @ (s.a.matrix @ s.i_state)) / s.overlap)
    return 0.5 * a2w.real + 0.5 * abs(aw) ** 2 - aw.real ** 2


@dataclass(frozen=True)
class MomentumWeakValueReport:
    x: float
    wigner_conditional_mean: float
    log_derivative_value: float
    deviation: float


def momentum_weak_value_check(psi: Wavefunction1D, x: float,
                              amplitude_floor: float = 1e-6) -> MomentumWeakValueReport:
    """Conditional mean momentum at x, by two independent routes.

    Route one integrates p against the Wigner row nearest to x; route two
    evaluates Re{-i psi'(x) / psi(x)} with a fourth-order finite
    difference. Both equal the real part of the local momentum weak value.
    """
    j = int(round((x - psi.x0) / psi.dx))
    if j < 2 or j > psi.size - 3:
        raise ValueError("x too close to the grid boundary")
    a = psi.amplitudes
    if abs(a[j]) < amplitude_floor:
        raise ValueError(f"|psi({x})| = {abs(a[j]):.2e} is too small to condition on")
    w = wigner(psi)
    row = w.values[j]
    cond_mean = float(np.sum(w.p * row) / np.sum(row))
    dpsi = (-a[j + 2] + 8 * a[j + 1] - 8 * a[j - 1] + a[j - 2]) / (12 * psi.dx)
    local = float(np.real(-1j * dpsi / a[j]))
    return MomentumWeakValueReport(
        x=psi.x0 + j * psi.dx,
        wigner_conditional_mean=cond_mean,
        log_derivative_value=local,
        deviation=abs(cond_mean - local),
    )


# ---------------------------------------------------------------------------
# Leggett-Garg


@dataclass(frozen=True)
class LGScenario:
    """Dichotomic observable probed at three times under one Hamiltonian."""

    q: HermitianObservable
    h: HermitianObservable
    times: tuple
    rho0: DensityMatrix

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) != 3 or not (times[0] < times[1] < times[2]):
            raise ValueError("three strictly ascending times are required")
        if not (self.q.dim == self.h.dim == self.rho0.dim):
            raise DimMismatch("operators must share one dimension")
        q2 = self.q.matrix @ self.q.matrix
        if np.max(np.abs(q2 - np.eye(self.q.dim))) > 1e-10:
            raise ValueError("observable must be dichotomic (Q^2 = 1)")
        object.__setattr__(self, "times", times)

    def heisenberg_q(self, t: float) -> np.ndarray:
        u = propagator(self.h, t).matrix
        return u.conj().T @ self.q.matrix @ u


def lg_correlator(s: LGScenario, i: int, j: int) -> float:
    """Symmetrized two-time correlator Tr{{Q(t_i), Q(t_j)} rho} / 2.

    This is what projective readings of a dichotomic observable measure;
    it also equals the mixed second moment of the three-time
    quasi-probability.
    """
    if not (1 <= i <= 3 and 1 <= j <= 3):
        raise ValueError("time indices must be in {1, 2, 3}")
    qi = s.heisenberg_q(s.times[i - 1])
    qj = s.heisenberg_q(s.times[j - 1])
    anti = qi @ qj + qj @ qi
    return float(np.real(np.trace(anti @ s.rho0.matrix))) / 2.0


def _lg_scenario_3(s: LGScenario) -> SubsequentScenario:
    t1, t2, t3 = s.times
    steps = (
        (propagator(s.h, t1, label="U(t1,0)"), s.q),
        (propagator(s.h, t2 - t1, label="U(t2,t1)"), s.q),
        (propagator(s.h, t3 - t2, label="U(t3,t2)"), s.q),
    )
    return SubsequentScenario(rho0=s.rho0, steps=steps, times=s.times)


@dataclass(frozen=True)
class LGReport:
    k_value: float
    violated: bool
    correlators: tuple
    kqpd: QuasiDistribution
    min_weight: float
    diagonal_mass: float
    zero_argument_mass: float
    checks: dict = field(default_factory=dict)


def lg_test(s: LGScenario) -> LGReport:
    """Evaluate K = C21 + C32 - C31 together with its quasi-probability.

    The discretized three-time distribution lives on {0, +-1}^2 x {+-1}.
    Its weights restricted to +-1 arguments sum to one and the total mass
    on zero arguments vanishes; a violation K > 1 implies some weight is
    negative. All three facts are returned as checks.
    """
    c21 = lg_correlator(s, 2, 1)
    c32 = lg_correlator(s, 3, 2)
    c31 = lg_correlator(s, 3, 1)
    k = c21 + c32 - c31
    dist = kqpd_subsequent(_lg_scenario_3(s))

    sup = dist.support
    diag_mask = np.all(np.abs(np.abs(sup) - 1.0) < 1e-9, axis=1)
    zero_mask = np.any(np.abs(sup) < 1e-9, axis=1)
    diagonal_mass = float(dist.weights[diag_mask].sum())
    zero_mass = float(dist.weights[zero_mask].sum())
    violated = k > 1.0 + LG_VIOLATION_ATOL
    checks = {
        "k_from_kqpd_moments": float(
            dist.moment([1, 1, 0]) + dist.moment([0, 1, 1]) - dist.moment([1, 0, 1])
        ),
        "diagonal_mass_is_one": bool(abs(diagonal_mass - 1.0) <= 1e-10),
        "zero_argument_mass_is_zero": bool(abs(zero_mass) <= 1e-10),
        "violation_implies_negativity": bool((not violated) or dist.min_weight < -1e-12),
    }
    return LGReport(
        k_value=k,
        violated=violated,
        correlators=(c21, c32, c31),
        kqpd=dist,
        min_weight=dist.min_weight,
        diagonal_mass=diagonal_mass,
        zero_argument_mass=zero_mass,
        checks=checks,
    )


def precession_lg_scenario(theta: float, omega: float = 1.0,
                           rho0: Optional[DensityMatrix] = None) -> LGScenario:
    """Qubit precession benchmark: K(theta) = 2 cos(theta) - cos(2 theta)."""
    from .linalg import PAULI_X, PAULI_Z

    if theta <= 0:
        raise ValueError("theta must be positive")
    q = eig_hermitian(PAULI_Z)
    h = eig_hermitian(0.5 * omega * PAULI_X)
    gap = theta / omega
    return LGScenario(
        q=q, h=h, times=(gap, 2 * gap, 3 * gap),
        rho0=rho0 or DensityMatrix.maximally_mixed(2),
    )
