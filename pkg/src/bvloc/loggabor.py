"""Log-Gabor filter bank, oriented amplitude responses and the maximum index map.

Frequencies are in cycles/pixel. Filter angles are measured in image
coordinates, ``atan2(f_v, f_u)`` with v pointing down the rows, so a
counter-clockwise world rotation by k*pi/No lowers every MIM label by k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LogGaborParams:
    n_scales: int = 4
    n_orient: int = 6
    min_wavelength: float = 4.0
    scale_multiplier: float = 1.6
    sigma_f_ratio: float = 0.75
    sigma_omega: float | None = None  # None -> (pi / n_orient) / 1.5
    lowpass_cutoff: float | None = 0.45  # isotropic Butterworth, cycles/pixel
    lowpass_order: int = 15

    def __post_init__(self):
        if self.n_scales < 1:
            raise ValueError("n_scales must be >= 1")
        if self.n_orient < 2:
            raise ValueError("n_orient must be >= 2")
        if self.min_wavelength < 2:
            raise ValueError("min_wavelength must be >= 2 pixels")
        if not self.scale_multiplier > 1:
            raise ValueError("scale_multiplier must be > 1")
        if not 0 < self.sigma_f_ratio < 1:
            raise ValueError("sigma_f_ratio must lie in (0, 1)")
        if self.sigma_omega is not None and not self.sigma_omega > 0:
            raise ValueError("sigma_omega must be positive")
        if self.lowpass_cutoff is not None and not 0 < self.lowpass_cutoff <= 0.5:
            raise ValueError("lowpass_cutoff must lie in (0, 0.5]")

    @property
    def angular_sigma(self) -> float:
        if self.sigma_omega is not None:
            return self.sigma_omega
        return (math.pi / self.n_orient) / 1.5

    def center_frequency(self, s: int) -> float:
        return 1.0 / (self.min_wavelength * self.scale_multiplier**s)

    def orientation(self, o: int) -> float:
        return o * math.pi / self.n_orient

    @property
    def orientations(self) -> np.ndarray:
        return np.arange(self.n_orient) * math.pi / self.n_orient


def angular_distance(omega, omega_o):
    """Distance between orientations on a period of pi, in [0, pi/2]."""
    d = np.angle(np.exp(2j * (np.asarray(omega) - omega_o))) / 2.0
    return np.abs(d)


def transfer(f, omega, fs: float, omega_o: float, sigma_f_ratio: float, sigma_omega: float):
    """Log-Gabor transfer value: radial log-Gaussian times angular Gaussian.

    Zero at f = 0.
    """
    f = np.asarray(f, dtype=np.float64)
    with np.errstate(divide="ignore"):
        radial = np.exp(-np.log(f / fs) ** 2 / (2.0 * math.log(sigma_f_ratio) ** 2))
    radial = np.where(f > 0, radial, 0.0)
    ang = np.exp(-angular_distance(omega, omega_o) ** 2 / (2.0 * sigma_omega**2))
    return radial * ang


def lowpass(f, cutoff: float, order: int):
    """Butterworth low-pass; keeps the corners of the FFT grid (beyond the
    Nyquist circle, where the grid is anisotropic) out of every channel."""
    return 1.0 / (1.0 + (np.asarray(f) / cutoff) ** (2 * order))


def frequency_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Radius and angle of each unshifted FFT bin."""
    fv = np.fft.fftfreq(height)[:, None]
    fu = np.fft.fftfreq(width)[None, :]
    return np.hypot(fu, fv), np.arctan2(fv, fu)


@dataclass(frozen=True, eq=False)
class FilterBank:
    width: int
    height: int
    params: LogGaborParams
    filters: np.ndarray  # (Ns, No, H, W), real and non-negative, low-pass applied
    analytic: np.ndarray = field(repr=False)  # (Ns, No, H, W), one-sided quadrature version


def build_bank(width: int, height: int, params: LogGaborParams | None = None) -> FilterBank:
    params = params or LogGaborParams()
    if width < 8 or height < 8:
        raise ValueError("filter bank needs at least 8x8 pixels")
    f, omega = frequency_grid(height, width)
    ns, no = params.n_scales, params.n_orient
    filters = np.empty((ns, no, height, width))
    # doubling the filter on the half plane facing omega_o (and zeroing the
    # other half) turns the even response into even + i*odd
    halfplane = np.empty((no, height, width))
    fv = np.fft.fftfreq(height)[:, None]
    fu = np.fft.fftfreq(width)[None, :]
    lp = 1.0 if params.lowpass_cutoff is None else lowpass(f, params.lowpass_cutoff, params.lowpass_order)
    for o in range(no):
        wo = params.orientation(o)
        # rounding keeps cos(pi/2) ~ 6e-17 from splitting the boundary line
        proj = np.round(np.cos(wo) * fu + np.sin(wo) * fv, 12)
        halfplane[o] = 1.0 + np.sign(proj)
        for s in range(ns):
            filters[s, o] = lp * transfer(
                f, omega, params.center_frequency(s), wo, params.sigma_f_ratio, params.angular_sigma
            )
    filters.setflags(write=False)
    analytic = filters * halfplane[None]
    analytic.setflags(write=False)
    return FilterBank(width, height, params, filters, analytic)


def spatial_kernel(bank: FilterBank, s: int, o: int) -> np.ndarray:
    """Complex spatial kernel (even + i*odd) of channel (s, o), origin at [0, 0]."""
    return np.fft.ifft2(bank.analytic[s, o])


def filter_responses(image, bank: FilterBank) -> np.ndarray:
    """Amplitude of each (scale, orientation) channel, shape (Ns, No, H, W)."""
    img = getattr(image, "intensity", image)
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (bank.height, bank.width):
        raise ValueError(f"image shape {img.shape} does not match bank {(bank.height, bank.width)}")
    spec = np.fft.fft2(img)
    return np.abs(np.fft.ifft2(bank.analytic * spec, axes=(-2, -1)))


def orientation_amplitude(per_scale: np.ndarray, n_scales: int | None = None) -> np.ndarray:
    """Sum the per-scale amplitudes for each orientation -> (No, H, W)."""
    per_scale = np.asarray(per_scale)
    if per_scale.ndim != 4:
        raise ValueError("expected an (Ns, No, H, W) stack")
    if n_scales is not None and per_scale.shape[0] != n_scales:
        raise ValueError(f"expected {n_scales} scales, got {per_scale.shape[0]}")
    return per_scale.sum(axis=0)


@dataclass(frozen=True, eq=False)
class Mim:
    index: np.ndarray  # int [v, u] in 0..No-1
    amp_max: np.ndarray
    valid: np.ndarray
    n_orient: int


def default_noise_floor(amp_max: np.ndarray) -> float:
    return 1e-4 * float(np.mean(amp_max))


def compute_mim(amps: np.ndarray, noise_floor: float | None = None) -> Mim:
    """Per-pixel argmax orientation; ties go to the smallest index."""
    amps = np.asarray(amps)
    if amps.shape[0] < 2:
        raise ValueError("need at least two orientations")
    index = np.argmax(amps, axis=0)
    amp_max = np.take_along_axis(amps, index[None], axis=0)[0]
    if noise_floor is None:
        noise_floor = default_noise_floor(amp_max)
    return Mim(index.astype(np.int64), amp_max, amp_max > noise_floor, amps.shape[0])


def mim_from_image(image, bank: FilterBank, noise_floor: float | None = None) -> Mim:
    per_scale = filter_responses(image, bank)
    return compute_mim(orientation_amplitude(per_scale), noise_floor)
