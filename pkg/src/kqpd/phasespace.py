"""Continuous-variable phase-space tools on FFT grids.

Wigner transform of pure 1-D wavefunctions, minimal-uncertainty Gaussian
smoothing (Husimi Q), and the measured position/momentum distributions for
sequential and simultaneous Gaussian detector readouts. All smoothing is
spectral (FFT with periodic wrap), so inputs must decay at the grid
boundary; a leakage check raises GridTooCoarse otherwise. hbar = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, GridTooCoarse
from .measurement import GaussianDetector

NORMALIZATION_ATOL = 1e-8
GRID_NORM_GUARD = 1e-3
BOUNDARY_LEAK = 1e-8


@dataclass(frozen=True)
class Wavefunction1D:
    """Complex amplitudes on a uniform position grid x0 + k dx."""

    x0: float
    dx: float
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128).reshape(-1)
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        norm = float(np.sum(np.abs(a) ** 2) * self.dx)
        if abs(norm - 1.0) > NORMALIZATION_ATOL:
            raise ValueError(f"wavefunction norm^2 is {norm:.10g}, expected 1")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @property
    def size(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.size)

    def momentum_amplitudes(self, p=None):
        """Momentum-space wavefunction, by direct transform onto a p grid.

        Defaults to the momentum axis produced by :func:`wigner` for this
        state (2 m points spanning the full Nyquist range).
        """
        if p is None:
            m = self.size
            dp = np.pi / (m * self.dx)
            p = -np.pi / self.dx + dp * np.arange(2 * m)
        p = np.asarray(p, dtype=np.float64)
        phase = np.exp(-1j * np.outer(p, self.x))
        phi = phase @ self.amplitudes * self.dx / np.sqrt(2.0 * np.pi)
        return p, phi


def gaussian_wavepacket(m: int = 256, x_max: float = 10.0, center: float = 0.0,
                        momentum: float = 0.0, width: float = 1.0) -> Wavefunction1D:
    """Normalized Gaussian exp(-(x-c)^2 / (4 width^2)) exp(i p0 x).

    ``width`` is the position standard deviation of |psi|^2.
    """
    x0 = -x_max
    dx = 2.0 * x_max / m
    x = x0 + dx * np.arange(m)
    psi = np.exp(-((x - center) ** 2) / (4.0 * width ** 2)) * np.exp(1j * momentum * x)
    psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2) * dx)
    return Wavefunction1D(x0=x0, dx=dx, amplitudes=psi)


def ground_state(m: int = 256, x_max: float = 10.0) -> Wavefunction1D:
    """Harmonic oscillator ground state, psi ~ exp(-x^2 / 2)."""
    return gaussian_wavepacket(m=m, x_max=x_max, width=1.0 / np.sqrt(2.0))


def cat_state(separation: float, m: int = 256, x_max: float = 10.0,
              parity: str = "odd") -> Wavefunction1D:
    """Superposition of two unit-width Gaussians at +-separation."""
    x0 = -x_max
    dx = 2.0 * x_max / m
    x = x0 + dx * np.arange(m)
    sign = -1.0 if parity == "odd" else 1.0
    psi = np.exp(-0.5 * (x - separation) ** 2) + sign * np.exp(-0.5 * (x + separation) ** 2)
    psi = psi.astype(np.complex128)
    psi = psi / np.sqrt(np.sum(np.abs(psi) ** 2) * dx)
    return Wavefunction1D(x0=x0, dx=dx, amplitudes=psi)


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Real values on a rectangular (x, p) grid; rows index x, columns p."""

    x0: float
    dx: float
    p0: float
    dp: float
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimMismatch("grid values must be 2-D")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.values.shape[0])

    @property
    def p(self) -> np.ndarray:
        return self.p0 + self.dp * np.arange(self.values.shape[1])

    @property
    def cell(self) -> float:
        return self.dx * self.dp

    def integral(self) -> float:
        return float(self.values.sum() * self.cell)

    def x_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.dp

    def p_marginal(self) -> np.ndarray:
        return self.values.sum(axis=0) * self.dx

    def value_at(self, x: float, p: float) -> float:
        i = int(round((x - self.x0) / self.dx))
        j = int(round((p - self.p0) / self.dp))
        return float(self.values[i, j])


def wigner(psi: Wavefunction1D) -> PhaseSpaceGrid:
    """Wigner transform of a pure state on the FFT-dual grid.

    The shifted autocorrelation psi(x + y) psi*(x - y) is evaluated on the
    half-step grid (via exact Fourier interpolation of the band-limited
    wavefunction) over the full grid extent and Fourier transformed per x
    row. The momentum axis carries 2 m points with
    dp = 2 pi / (n_p dx), spanning the whole Nyquist range +-pi/dx. The x
    marginal of the output equals |psi(x)|^2 identically; GridTooCoarse is
    raised when the total integral drifts by more than 1e-3 (an aliasing
    indicator).
    """
    m = psi.size
    dx = psi.dx
    psi2 = _fourier_upsample(psi.amplitudes)  # 2m samples at spacing dx/2
    pad = np.zeros(4 * m, dtype=np.complex128)
    pad[m:3 * m] = psi2

    k = np.fft.fftfreq(2 * m, d=1.0 / (2 * m)).astype(np.int64)  # signed, fft layout
    j = np.arange(m)
    idx_plus = m + 2 * j[:, None] + k[None, :]
    idx_minus = m + 2 * j[:, None] - k[None, :]
    g = pad[idx_plus] * np.conj(pad[idx_minus])
    # p axis starts at -pi/dx, which turns the k-dependent phase into (-1)^k
    g *= np.where(k % 2 == 0, 1.0, -1.0)[None, :]
    w = np.fft.fft(g, axis=1)
    values = w.real * (dx / (2.0 * np.pi))

    dp = np.pi / (m * dx)
    grid = PhaseSpaceGrid(x0=psi.x0, dx=dx, p0=-np.pi / dx, dp=dp, values=values)
    total = grid.integral()
    if abs(total - 1.0) > GRID_NORM_GUARD:
        raise GridTooCoarse(f"Wigner integral is {total:.6g}; grid does not hold the state")
    return grid


def _fourier_upsample(psi: np.ndarray) -> np.ndarray:
    """Band-limited x2 upsampling; exact for spectra confined to the grid."""
    m = psi.shape[0]
    spec = np.fft.fft(psi)
    out = np.zeros(2 * m, dtype=np.complex128)
    half = m // 2
    if m % 2 == 0:
        out[:half] = spec[:half]
        out[2 * m - half + 1:] = spec[half + 1:]
        # the Nyquist bin belongs to +-half equally
        out[half] = 0.5 * spec[half]
        out[2 * m - half] = 0.5 * spec[half]
    else:
        out[:half + 1] = spec[:half + 1]
        out[2 * m - half:] = spec[half + 1:]
    return 2.0 * np.fft.ifft(out)


def _check_boundary(grid: PhaseSpaceGrid):
    v = np.abs(grid.values)
    peak = v.max() if v.size else 0.0
    edge = max(v[0, :].max(), v[-1, :].max(), v[:, 0].max(), v[:, -1].max())
    if peak > 0 and edge > BOUNDARY_LEAK * max(peak, 1.0):
        raise GridTooCoarse(
            f"grid boundary carries {edge:.3e} against peak {peak:.3e}; "
            "periodic smoothing would wrap"
        )


def gaussian_smooth(grid: PhaseSpaceGrid, sigma_x: float, sigma_p: float) -> PhaseSpaceGrid:
    """Convolve with a normalized Gaussian kernel, spectrally.

    Zero widths are exact identities. Normalization is preserved to
    machine precision because the kernel's DC gain is one.
    """
    if sigma_x < 0 or sigma_p < 0:
        raise ValueError("smoothing widths must be nonnegative")
    if sigma_x == 0 and sigma_p == 0:
        return grid
    _check_boundary(grid)
    nx, npts = grid.values.shape
    kx = 2.0 * np.pi * np.fft.fftfreq(nx, d=grid.dx)
    kp = 2.0 * np.pi * np.fft.fftfreq(npts, d=grid.dp)
    damp = np.exp(-0.5 * (sigma_x * kx[:, None]) ** 2 - 0.5 * (sigma_p * kp[None, :]) ** 2)
    smoothed = np.fft.ifft2(np.fft.fft2(grid.values) * damp).real
    return PhaseSpaceGrid(grid.x0, grid.dx, grid.p0, grid.dp, smoothed)


def husimi(grid: PhaseSpaceGrid, sigma: float) -> PhaseSpaceGrid:
    """Minimal-uncertainty smoothing: widths sigma in x and 1/(2 sigma) in p.

    The kernel widths multiply to 1/2, so the output is nonnegative (up to
    rounding) whenever the input is a valid pure-state Wigner function.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return gaussian_smooth(grid, sigma, 0.5 / sigma)


def sequential_xp(grid: PhaseSpaceGrid, det_x: GaussianDetector,
                  det_p: GaussianDetector, order: str = "xp") -> PhaseSpaceGrid:
    """Measured distribution for a position readout followed by momentum.

    The first detector's back-action smears the conjugate coordinate; both
    imprecisions smear their own readout. The trailing detector's
    back-action never enters (it acts after the last readout), so the
    result is independent of det_p.sigma_ba for order "xp". Gaussian
    variances add, so the three convolutions collapse into one kernel.
    """
    if order == "xp":
        sx = det_x.sigma_imp
        sp = np.hypot(det_p.sigma_imp, det_x.sigma_ba)
    elif order == "px":
        sx = np.hypot(det_x.sigma_imp, det_p.sigma_ba)
        sp = det_p.sigma_imp
    else:
        raise ValueError("order must be 'xp' or 'px'")
    return gaussian_smooth(grid, sx, sp)


def simultaneous_xp(grid: PhaseSpaceGrid, det_x: GaussianDetector,
                    det_p: GaussianDetector) -> PhaseSpaceGrid:
    """Measured distribution for simultaneous x and p readouts.

    Both back-actions act, each at half strength, on the conjugate
    coordinate. With minimal-uncertainty detectors balanced so that
    sigma_imp_x * sigma_imp_p = 1/2, this reproduces husimi(grid, sigma)
    with sigma = sqrt(2) sigma_imp_x.
    """
    sx = np.hypot(det_x.sigma_imp, 0.5 * det_p.sigma_ba)
    sp = np.hypot(det_p.sigma_imp, 0.5 * det_x.sigma_ba)
    return gaussian_smooth(grid, sx, sp)


def balanced_xp_detectors(sigma: float):
    """Minimal-uncertainty detector pair whose simultaneous readout is Husimi.

    Returns (det_x, det_p) with sigma_imp_x = sigma/sqrt(2),
    sigma_imp_p = 1/(2 sqrt(2) sigma), both saturating the Heisenberg
    bound.
    """
    det_x = GaussianDetector.saturating(sigma / np.sqrt(2.0))
    det_p = GaussianDetector.saturating(1.0 / (2.0 * np.sqrt(2.0) * sigma))
    return det_x, det_p


def negativity_volume(grid: PhaseSpaceGrid) -> float:
    """Integrated absolute value minus one; zero for a positive density."""
    return float(np.sum(np.abs(grid.values)) * grid.cell - 1.0)
