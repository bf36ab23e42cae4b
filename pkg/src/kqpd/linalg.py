"""Dense complex linear algebra foundation.

Hermitian eigendecompositions with a deterministic phase convention,
unitary propagators built from eigensystems, Heisenberg-picture rotations,
and trace-preserving Kraus channels. Everything is dense numpy; target
dimensions are small (d <= 64) because downstream trajectory enumeration,
not linear algebra, dominates the cost.

All values are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, NotHermitian, NotTracePreserving, NumericalFailure

HERMITICITY_RTOL = 1e-12
ORTHONORMALITY_ATOL = 1e-10
TRACE_ATOL = 1e-10
POSITIVITY_ATOL = 1e-10
DEGENERACY_RTOL = 1e-9


def as_complex_matrix(m, name="matrix"):
    """Coerce to a square complex128 array and reject non-finite entries."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimMismatch(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(np.float64))):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return a


def _max_abs(a):
    return float(np.max(np.abs(a))) if a.size else 0.0


def check_hermitian(m, rtol=HERMITICITY_RTOL, name="matrix"):
    """Raise NotHermitian unless ||M - M^dag||_max <= rtol * ||M||_max."""
    a = as_complex_matrix(m, name)
    scale = max(_max_abs(a), 1e-300)
    dev = _max_abs(a - a.conj().T)
    if dev > rtol * scale:
        raise NotHermitian(
            f"{name} is not Hermitian: max deviation {dev:.3e} exceeds {rtol:.1e} * {scale:.3e}"
        )
    return a


@dataclass(frozen=True)
class HermitianObservable:
    """Hermitian matrix together with its cached real eigensystem.

    ``eigenvectors[:, k]`` is the orthonormal eigenvector for
    ``eigenvalues[k]``; eigenvalues are ascending. The phase of each
    eigenvector is fixed by making its largest-magnitude component real
    and positive, so results are reproducible across runs.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", as_complex_matrix(self.matrix))
        object.__setattr__(self, "eigenvalues", np.asarray(self.eigenvalues, dtype=np.float64))
        object.__setattr__(self, "eigenvectors", as_complex_matrix(self.eigenvectors))
        self.matrix.setflags(write=False)
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def spectral_range(self) -> float:
        return float(self.eigenvalues[-1] - self.eigenvalues[0])

    def value_bins(self, rtol=DEGENERACY_RTOL):
        """Group near-degenerate eigenvalues into distinct support values.

        Returns ``(values, labels)`` where ``labels[k]`` maps eigenindex k
        to its bin and ``values`` holds one representative per bin.
        Eigenvalues closer than ``rtol * spectral_range`` merge.
        """
        tol = rtol * max(self.spectral_range, 0.0)
        return cluster_values(self.eigenvalues, tol)

    def projector(self, indices) -> np.ndarray:
        """Spectral projector onto the span of the given eigenindices."""
        v = self.eigenvectors[:, indices]
        return v @ v.conj().T


def cluster_values(values, tol):
    """Cluster sorted-or-not real values whose gaps are <= tol.

    Returns representatives (cluster means) and a label per input value.
    Deterministic: clusters follow ascending order.
    """
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    order = np.argsort(vals, kind="stable")
    svals = vals[order]
    new_cluster = np.empty(svals.size, dtype=bool)
    new_cluster[0] = True
    new_cluster[1:] = np.diff(svals) > tol
    cluster_ids = np.cumsum(new_cluster) - 1
    n = cluster_ids[-1] + 1
    reps = np.zeros(n)
    counts = np.zeros(n)
    np.add.at(reps, cluster_ids, svals)
    np.add.at(counts, cluster_ids, 1.0)
    reps /= counts
    labels = np.empty(vals.size, dtype=np.int64)
    labels[order] = cluster_ids
    return reps, labels


def eig_hermitian(m, rtol=HERMITICITY_RTOL) -> HermitianObservable:
    """Eigendecompose a Hermitian matrix with a deterministic phase gauge.

    Parameters
    ----------
    m : array_like
        Square matrix, Hermitian within ``rtol`` (relative to its largest
        entry).

    Returns
    -------
    HermitianObservable
        Ascending eigenvalues; each eigenvector's largest-magnitude
        component is made real positive.

    Raises
    ------
    NotHermitian
        If the symmetry check fails.
    NumericalFailure
        If the LAPACK iteration does not converge.
    """
    a = check_hermitian(m, rtol=rtol)
    h = 0.5 * (a + a.conj().T)
    try:
        vals, vecs = np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition failed: {exc}") from exc
    # Phase gauge: rotate each column so its largest-|.| component is real > 0.
    idx = np.argmax(np.abs(vecs), axis=0)
    pivots = vecs[idx, np.arange(vecs.shape[1])]
    phases = pivots / np.where(np.abs(pivots) > 0, np.abs(pivots), 1.0)
    vecs = vecs / phases[np.newaxis, :]
    return HermitianObservable(matrix=a, eigenvalues=vals, eigenvectors=vecs)


@dataclass(frozen=True)
class DensityMatrix:
    """Normalized positive-semidefinite state."""

    matrix: np.ndarray

    def __post_init__(self):
        a = check_hermitian(self.matrix, name="density matrix")
        tr = np.trace(a)
        if abs(tr - 1.0) > TRACE_ATOL:
            raise ValueError(f"density matrix trace is {tr:.12g}, expected 1")
        evals = np.linalg.eigvalsh(0.5 * (a + a.conj().T))
        if evals[0] < -POSITIVITY_ATOL:
            raise ValueError(f"density matrix has negative eigenvalue {evals[0]:.3e}")
        object.__setattr__(self, "matrix", a)
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_ket(cls, ket) -> "DensityMatrix":
        v = np.asarray(ket, dtype=np.complex128).reshape(-1)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("zero ket cannot define a state")
        v = v / norm
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=np.complex128) / dim)


@dataclass(frozen=True)
class UnitaryPropagator:
    """Unitary time-evolution operator with a human-readable label."""

    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = as_complex_matrix(self.matrix, "propagator")
        dev = _max_abs(a.conj().T @ a - np.eye(a.shape[0]))
        if dev > ORTHONORMALITY_ATOL:
            raise ValueError(f"propagator is not unitary: ||U^dag U - I||_max = {dev:.3e}")
        object.__setattr__(self, "matrix", a)
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int, label: str = "identity") -> "UnitaryPropagator":
        return cls(np.eye(dim, dtype=np.complex128), label)


@dataclass(frozen=True)
class KrausChannel:
    """Trace-preserving operator-sum map rho -> sum_k K_k rho K_k^dag."""

    operators: tuple = field()

    def __post_init__(self):
        ops = tuple(as_complex_matrix(k, f"Kraus operator {i}") for i, k in enumerate(self.operators))
        if not ops:
            raise ValueError("channel needs at least one Kraus operator")
        d = ops[0].shape[0]
        if any(k.shape != (d, d) for k in ops):
            raise DimMismatch("Kraus operators must share one square shape")
        s = sum(k.conj().T @ k for k in ops)
        dev = _max_abs(s - np.eye(d))
        if dev > ORTHONORMALITY_ATOL:
            raise NotTracePreserving(
                f"sum K^dag K deviates from identity by {dev:.3e}"
            )
        object.__setattr__(self, "operators", ops)
        for k in ops:
            k.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.operators[0].shape[0]

    @classmethod
    def from_unitary(cls, u: UnitaryPropagator) -> "KrausChannel":
        return cls((u.matrix,))

    @classmethod
    def dephasing(cls, observable: HermitianObservable) -> "KrausChannel":
        """Full dephasing in the eigenbasis of the given observable."""
        _, labels = observable.value_bins()
        ops = []
        for b in range(int(labels.max()) + 1):
            ops.append(observable.projector(np.nonzero(labels == b)[0]))
        return cls(tuple(ops))


def propagator(h: HermitianObservable, t: float, label: str = "") -> UnitaryPropagator:
    """exp(-i H t) built from the cached eigensystem (hbar = 1)."""
    if not np.isfinite(t):
        raise ValueError("duration must be finite")
    v = h.eigenvectors
    u = (v * np.exp(-1j * h.eigenvalues * t)[np.newaxis, :]) @ v.conj().T
    return UnitaryPropagator(u, label or f"exp(-i H t), t={t:g}")


def heisenberg(a: HermitianObservable, u: UnitaryPropagator) -> np.ndarray:
    """Rotate an observable to the Heisenberg picture: U^dag A U."""
    if a.dim != u.dim:
        raise DimMismatch(f"observable dim {a.dim} != propagator dim {u.dim}")
    return u.matrix.conj().T @ a.matrix @ u.matrix


def apply_channel(e: KrausChannel, rho: DensityMatrix) -> DensityMatrix:
    """Apply a trace-preserving channel and revalidate the output state."""
    if e.dim != rho.dim:
        raise DimMismatch(f"channel dim {e.dim} != state dim {rho.dim}")
    out = np.zeros_like(rho.matrix)
    for k in e.operators:
        out = out + k @ rho.matrix @ k.conj().T
    return DensityMatrix(out)


def evolve_matrix(step, rho: np.ndarray) -> np.ndarray:
    """Advance a raw density matrix by one scenario step (unitary or channel)."""
    if isinstance(step, UnitaryPropagator):
        return step.matrix @ rho @ step.matrix.conj().T
    if isinstance(step, KrausChannel):
        out = np.zeros_like(rho)
        for k in step.operators:
            out = out + k @ rho @ k.conj().T
        return out
    raise TypeError(f"unsupported evolution step of type {type(step).__name__}")


# Qubit constants used throughout tests and scenario files.
PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)


def pauli(direction) -> np.ndarray:
    """Pauli operator along a 3-vector direction (normalized internally)."""
    n = np.asarray(direction, dtype=np.float64)
    n = n / np.linalg.norm(n)
    return n[0] * PAULI_X + n[1] * PAULI_Y + n[2] * PAULI_Z
