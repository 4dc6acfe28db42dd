"""Curl-free flux recovery in 2-D.

Given a mean-free source ``q`` we solve ``lap(xi) = -q`` spectrally and
return ``Phi = -grad(xi)``.  Reflective grids use the cell-centred cosine
basis ``cos(h*pi*(x+a)/(2a))`` (type-II DCT), which makes the normal flux
vanish on the walls; periodic grids use complex exponentials.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .grid import Grid2D, check_scalar, check_vector, integrate

logger = logging.getLogger(__name__)

COMPATIBILITY_TOL = 1e-8


class CompatibilityError(ValueError):
    """The source does not integrate to zero, so no Neumann/periodic solution exists."""


@dataclass(frozen=True)
class SpectralCoeffs:
    """Series amplitudes of a field.

    For ``basis == "cosine"`` the field equals
    ``sum_hk coeffs[h, k] cos(h pi (x1+a)/2a) cos(k pi (x2+a)/2a)``;
    for ``basis == "fourier"`` it equals
    ``sum_hk coeffs[h, k] exp(i pi (h x1 + k x2) / a)`` with numpy FFT ordering.
    """

    coeffs: np.ndarray
    basis: str
    order: tuple[int, int]


def _dct_scale(n: int) -> np.ndarray:
    # amplitude of mode k given the orthonormal DCT-II output
    s = np.full(n, np.sqrt(2.0 / n))
    s[0] = np.sqrt(1.0 / n)
    return s


def _check_order(order, grid: Grid2D) -> tuple[int, int]:
    if order is None:
        return grid.shape
    if np.ndim(order) == 0:
        order = (order, order)
    order = tuple(int(o) for o in order)
    if any(o < 1 or o > n for o, n in zip(order, grid.shape)):
        raise ValueError(f"truncation order {order} must lie in [1, n_cells] = {grid.shape}")
    return order


def _mask(arr: np.ndarray, order) -> np.ndarray:
    out = np.zeros_like(arr)
    out[: order[0], : order[1]] = arr[: order[0], : order[1]]
    return out


def cosine_transform_2d(f, grid: Grid2D, order=None) -> SpectralCoeffs:
    if grid.ndim != 2:
        raise ValueError("cosine_transform_2d needs a Grid2D")
    if grid.periodic:
        raise ValueError("the cosine basis is for reflective grids")
    f = check_scalar(f, grid)
    order = _check_order(order, grid)
    ortho = sfft.dctn(f, type=2, norm="ortho")
    amp = ortho * _dct_scale(grid.shape[0])[:, None] * _dct_scale(grid.shape[1])[None, :]
    return SpectralCoeffs(_mask(amp, order), "cosine", order)


def inverse_cosine_transform_2d(c: SpectralCoeffs, grid: Grid2D) -> np.ndarray:
    if c.basis != "cosine":
        raise ValueError("expected cosine coefficients")
    ortho = c.coeffs / (_dct_scale(grid.shape[0])[:, None] * _dct_scale(grid.shape[1])[None, :])
    return sfft.idctn(ortho, type=2, norm="ortho")


def fourier_transform_2d(f, grid: Grid2D, order=None) -> SpectralCoeffs:
    if not grid.periodic:
        raise ValueError("the Fourier basis is for periodic grids")
    f = check_scalar(f, grid)
    order = _check_order(order, grid)
    amp = sfft.fft2(f) / f.size
    if order != grid.shape:
        keep = np.zeros(grid.shape, dtype=bool)
        m1 = np.abs(np.fft.fftfreq(grid.shape[0], 1.0 / grid.shape[0])) < (order[0] + 1) / 2
        m2 = np.abs(np.fft.fftfreq(grid.shape[1], 1.0 / grid.shape[1])) < (order[1] + 1) / 2
        keep[np.ix_(m1, m2)] = True
        amp = np.where(keep, amp, 0.0)
    return SpectralCoeffs(amp, "fourier", order)


def inverse_fourier_transform_2d(c: SpectralCoeffs, grid: Grid2D) -> np.ndarray:
    return sfft.ifft2(c.coeffs * c.coeffs.size).real


def _cosine_wavenumbers(grid: Grid2D):
    a = grid.half_width
    return [np.arange(n) * np.pi / (2 * a) for n in grid.shape]


def _fourier_wavenumbers(grid: Grid2D, drop_nyquist: bool = False):
    ks = []
    for n, h in zip(grid.shape, grid.spacing):
        k = 2 * np.pi * np.fft.fftfreq(n, d=h)
        if drop_nyquist and n % 2 == 0:
            k = k.copy()
            k[n // 2] = 0.0
        ks.append(k)
    return ks


def check_compatibility(q, grid: Grid2D, strict: bool = False) -> np.ndarray:
    """Return a mean-free copy of ``q``; raise in strict mode if it was not."""
    q = check_scalar(q, grid)
    total = integrate(q, grid)
    if abs(total) > COMPATIBILITY_TOL:
        if strict:
            raise CompatibilityError(f"integral of q is {total:.3e}, exceeds {COMPATIBILITY_TOL:g}")
        msg = f"integral of q is {total:.3e}; subtracting its mean"
        logger.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return q - total / grid.volume


def solve_poisson(q, grid: Grid2D, strict: bool = False, order=None) -> np.ndarray:
    """Zero-mean solution of ``lap(xi) = -q`` with zero normal flux / periodicity."""
    if grid.ndim != 2:
        raise ValueError("solve_poisson needs a Grid2D")
    q = check_compatibility(q, grid, strict)
    if grid.periodic:
        c = fourier_transform_2d(q, grid, order)
        k1, k2 = _fourier_wavenumbers(grid)
    else:
        c = cosine_transform_2d(q, grid, order)
        k1, k2 = _cosine_wavenumbers(grid)
    lam = k1[:, None] ** 2 + k2[None, :] ** 2
    lam[0, 0] = 1.0
    a = c.coeffs / lam
    a[0, 0] = 0.0
    xi_c = SpectralCoeffs(a, c.basis, c.order)
    if grid.periodic:
        return inverse_fourier_transform_2d(xi_c, grid)
    return inverse_cosine_transform_2d(xi_c, grid)


def _cos_to_sin_derivative(ortho: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    """Map orthonormal DCT-II coefficients of f to orthonormal DST-II
    coefficients of df/dx along ``axis``."""
    out = np.zeros_like(ortho)
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    src[axis] = slice(1, None)
    dst[axis] = slice(0, -1)
    shape = [1, 1]
    shape[axis] = -1
    out[tuple(dst)] = -(k[1:].reshape(shape)) * ortho[tuple(src)]
    return out


def flux_from_potential(xi, grid: Grid2D) -> np.ndarray:
    """``Phi = -grad(xi)`` computed by differentiating in coefficient space."""
    if grid.ndim != 2:
        raise ValueError("flux_from_potential needs a Grid2D")
    xi = check_scalar(xi, grid)
    if grid.periodic:
        k1, k2 = _fourier_wavenumbers(grid, drop_nyquist=True)
        xh = sfft.fft2(xi)
        d1 = sfft.ifft2(1j * k1[:, None] * xh).real
        d2 = sfft.ifft2(1j * k2[None, :] * xh).real
        return -np.stack([d1, d2])
    k1, k2 = _cosine_wavenumbers(grid)
    ortho = sfft.dctn(xi, type=2, norm="ortho")
    b1 = _cos_to_sin_derivative(ortho, k1, 0)
    d1 = sfft.idct(sfft.idst(b1, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
    b2 = _cos_to_sin_derivative(ortho, k2, 1)
    d2 = sfft.idst(sfft.idct(b2, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
    return -np.stack([d1, d2])


def recover_flux(q, grid: Grid2D, strict: bool = False) -> np.ndarray:
    return flux_from_potential(solve_poisson(q, grid, strict=strict), grid)


def spectral_curl(F, grid: Grid2D) -> np.ndarray:
    """``d1 F2 - d2 F1`` in the same spectral representation that produced F.

    On reflective grids F1 is expanded in sine(x1) x cosine(x2) and F2 in
    cosine(x1) x sine(x2), matching the output of :func:`flux_from_potential`.
    """
    F = check_vector(F, grid)
    if grid.periodic:
        k1, k2 = _fourier_wavenumbers(grid, drop_nyquist=True)
        d1F2 = sfft.ifft2(1j * k1[:, None] * sfft.fft2(F[1])).real
        d2F1 = sfft.ifft2(1j * k2[None, :] * sfft.fft2(F[0])).real
        return d1F2 - d2F1
    k1, k2 = _cosine_wavenumbers(grid)
    # F1: DST-II along axis 0, DCT-II along axis 1
    c1 = sfft.dct(sfft.dst(F[0], type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
    c2 = sfft.dst(sfft.dct(F[1], type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)
    # d/dx2 of cos(k.) along axis 1 -> -k sin; sine index k-1
    d2F1 = np.zeros_like(c1)
    d2F1[:, :-1] = -k2[None, 1:] * c1[:, 1:]
    d1F2 = np.zeros_like(c2)
    d1F2[:-1, :] = -k1[1:, None] * c2[1:, :]
    back = lambda c: sfft.idst(sfft.idst(c, type=2, norm="ortho", axis=0), type=2, norm="ortho", axis=1)  # noqa: E731
    return back(d1F2) - back(d2F1)


def boundary_normal_flux(F, grid: Grid2D) -> dict[str, np.ndarray]:
    """Outward normal flux on the four walls, evaluated from the series.

    Reflective: F1 is a sine series in x1, so it is summed exactly at
    x1 = -a and x1 = +a (and likewise F2).  Periodic: values at the wrapped
    face are taken from the band-limited interpolant, which is single-valued,
    so opposite walls carry equal and opposite outward flux.
    """
    F = check_vector(F, grid)
    n1, n2 = grid.shape
    if grid.periodic:
        k1, k2 = _fourier_wavenumbers(grid, drop_nyquist=True)
        a = grid.half_width
        x1c, x2c = grid.axes[0].centers, grid.axes[1].centers
        # evaluate band-limited series at the wall x = -a (== +a)
        f1 = sfft.fft(F[0], axis=0) / n1
        w1 = np.exp(1j * k1 * (-a - x1c[0]))
        face1 = np.real(np.tensordot(w1, f1, axes=(0, 0)))
        f2 = sfft.fft(F[1], axis=1) / n2
        w2 = np.exp(1j * k2 * (-a - x2c[0]))
        face2 = np.real(np.tensordot(f2, w2, axes=(1, 0)))
        return {"x1=-a": -face1, "x1=+a": face1, "x2=-a": -face2, "x2=+a": face2}
    out = {}
    s1 = sfft.dst(F[0], type=2, norm="ortho", axis=0)
    s2 = sfft.dst(F[1], type=2, norm="ortho", axis=1)
    for label, theta, sgn in (("-a", 0.0, -1.0), ("+a", np.pi, 1.0)):
        h1 = np.arange(1, n1 + 1)
        g1 = np.full(n1, np.sqrt(2.0 / n1))
        g1[-1] = np.sqrt(1.0 / n1)
        out[f"x1={label}"] = sgn * np.tensordot(g1 * np.sin(h1 * theta), s1, axes=(0, 0))
        h2 = np.arange(1, n2 + 1)
        g2 = np.full(n2, np.sqrt(2.0 / n2))
        g2[-1] = np.sqrt(1.0 / n2)
        out[f"x2={label}"] = sgn * np.tensordot(s2, g2 * np.sin(h2 * theta), axes=(1, 0))
    return out


def net_boundary_flux(F, grid: Grid2D) -> float:
    """Line integral of the outward normal flux over the boundary."""
    walls = boundary_normal_flux(F, grid)
    dx1, dx2 = grid.spacing
    total = 0.0
    for name, vals in walls.items():
        total += float(np.sum(vals)) * (dx2 if name.startswith("x1") else dx1)
    return total
