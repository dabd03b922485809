"""Karhunen-Loeve modes of an exponential-covariance Gaussian field and the
Hermite chaos coefficients of its exponential (lognormal) transform.

The lognormal modulus is ``E(x, xi) = exp(g0(x) + sum_j g_j(x) xi_j)`` with
``xi_j`` i.i.d. standard normal. Its chaos coefficients are available in
closed form::

    E_l(x) = exp(g0 + 0.5 * sum_j g_j^2) * prod_j g_j^a_j / sqrt(a_j!)

where ``a`` is the multi-index of ``psi_l``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from math import factorial, log, log1p, sqrt

import numpy as np
from scipy.optimize import brentq

from .polychaos import GpcBasis


@dataclass(frozen=True)
class GaussianKL:
    """Truncated KL representation evaluated at a fixed set of points.

    ``modes[j]`` holds ``g_{j+1}`` at ``points``; ``eigenvalues`` are the KL
    eigenvalues in decreasing order (already including ``sigma_g**2``).
    """

    points: np.ndarray = field(repr=False)
    g0: np.ndarray = field(repr=False)
    modes: np.ndarray = field(repr=False)  # (m_xi, npts)
    eigenvalues: np.ndarray
    sigma_g: float
    L_corr: float

    @property
    def m_xi(self) -> int:
        return self.modes.shape[0]

    def with_mean(self, g0) -> "GaussianKL":
        g0 = np.broadcast_to(np.asarray(g0, dtype=float), (self.points.shape[0],)).copy()
        return GaussianKL(self.points, g0, self.modes, self.eigenvalues, self.sigma_g, self.L_corr)

    def variance_captured(self) -> np.ndarray:
        """Pointwise ``sum_j g_j(x)^2``."""
        return (self.modes ** 2).sum(axis=0)


@dataclass(frozen=True)
class LognormalField:
    coeffs: np.ndarray = field(repr=False)  # (M_A+1, npts)
    basis: GpcBasis = field(repr=False)

    def evaluate(self, xi) -> np.ndarray:
        """Field values at chaos points ``xi``; shape (n, npts) or (npts,)."""
        psi = self.basis.eval(xi)
        return psi @ self.coeffs

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point"] + [f"E_{ell}" for ell in range(self.coeffs.shape[0])])
            for i, col in enumerate(self.coeffs.T):
                w.writerow([i] + [repr(float(v)) for v in col])


def _fix_sign(modes: np.ndarray) -> np.ndarray:
    # first point non-negative; zero first value falls back to first nonzero entry
    out = modes.copy()
    for j, row in enumerate(out):
        nz = np.flatnonzero(np.abs(row) > 1e-14 * max(np.abs(row).max(), 1e-300))
        if nz.size and row[nz[0]] < 0:
            out[j] = -row
    return out


def exponential_kl_frequencies(length: float, L_corr: float, m_xi: int) -> list[tuple[float, str]]:
    """First ``m_xi`` frequencies of the exponential kernel on an interval.

    On ``[-a, a]`` with ``c = 1/L_corr``, even modes solve ``w tan(w a) = c`` and
    odd modes ``w + c tan(w a) = 0``. Roots interlace: even root ``n`` lies in
    ``(n pi, (n + 1/2) pi)/a``, odd root ``n`` in ``((n + 1/2) pi, (n + 1) pi)/a``.
    """
    a = 0.5 * length
    ca = a / L_corr
    eps = 1e-13
    out: list[tuple[float, str]] = []
    n = 0
    while len(out) < m_xi:
        lo, hi = n * np.pi, n * np.pi + 0.5 * np.pi
        f_even = lambda t: t * np.tan(t) - ca
        a_lo, a_hi = lo, hi - eps * hi
        if not (f_even(a_lo) < 0 < f_even(a_hi)):
            raise RuntimeError(f"no bracket for even KL root n={n}")
        out.append((brentq(f_even, a_lo, a_hi, xtol=1e-15, rtol=1e-15) / a, "even"))
        if len(out) == m_xi:
            break
        lo, hi = n * np.pi + 0.5 * np.pi, (n + 1) * np.pi
        f_odd = lambda t: t + ca * np.tan(t)
        b_lo = lo + eps * hi
        if not (f_odd(b_lo) < 0 < f_odd(hi)):
            raise RuntimeError(f"no bracket for odd KL root n={n}")
        out.append((brentq(f_odd, b_lo, hi, xtol=1e-15, rtol=1e-15) / a, "odd"))
        n += 1
    return out


def kl_1d_exponential(length: float, L_corr: float, sigma_g: float, m_xi: int,
                      points=None) -> GaussianKL:
    """Analytic KL modes of ``sigma_g^2 exp(-|x1-x2|/L_corr)`` on ``[0, length]``.

    ``points`` defaults to 200 equispaced midpoints.
    """
    if length <= 0 or L_corr <= 0 or sigma_g < 0:
        raise ValueError("length and L_corr must be positive, sigma_g non-negative")
    if points is None:
        points = (np.arange(200) + 0.5) * length / 200
    x = np.asarray(points, dtype=float).ravel()
    a = 0.5 * length
    c = 1.0 / L_corr
    freqs = exponential_kl_frequencies(length, L_corr, m_xi)
    theta = np.array([2 * c * sigma_g ** 2 / (w * w + c * c) for w, _ in freqs])
    modes = np.empty((m_xi, x.size))
    for j, (w, kind) in enumerate(freqs):
        s = x - a
        if kind == "even":
            f = np.cos(w * s) / sqrt(a + np.sin(2 * w * a) / (2 * w))
        else:
            f = np.sin(w * s) / sqrt(a - np.sin(2 * w * a) / (2 * w))
        modes[j] = np.sqrt(theta[j]) * f
    modes = _fix_sign(modes)
    return GaussianKL(points=x, g0=np.zeros(x.size), modes=modes, eigenvalues=theta,
                      sigma_g=float(sigma_g), L_corr=float(L_corr))


def kl_2d_discrete(points, L_corr: float, sigma_g: float, m_xi: int, weights=None) -> GaussianKL:
    """Nystrom KL of ``sigma_g^2 exp(-||x1-x2||_2/L_corr)`` on a point set.

    ``weights`` are quadrature weights of the points (cell areas); default is
    uniform weights summing to the bounding-box measure of the point set.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    if n < m_xi:
        raise ValueError(f"need at least m_xi={m_xi} points, got {n}")
    if weights is None:
        ext = np.ptp(pts, axis=0)
        ext = ext[ext > 0]
        vol = float(np.prod(ext)) if ext.size else 1.0
        weights = np.full(n, vol / n)
    w = np.asarray(weights, dtype=float)
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    cov = sigma_g ** 2 * np.exp(-dist / L_corr)
    sw = np.sqrt(w)
    B = sw[:, None] * cov * sw[None, :]
    B = 0.5 * (B + B.T)
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1][:m_xi]
    vals, vecs = vals[order], vecs[:, order]
    if np.any(vals < 0):
        warnings.warn("covariance matrix has negative eigenvalues; clipped to zero", RuntimeWarning)
        vals = np.clip(vals, 0.0, None)
    f = vecs / sw[:, None]  # L2-normalized: sum_i w_i f_i^2 = 1
    modes = _fix_sign((f * np.sqrt(vals)[None, :]).T)
    return GaussianKL(points=pts, g0=np.zeros(n), modes=modes, eigenvalues=vals,
                      sigma_g=float(sigma_g), L_corr=float(L_corr))


def lognormal_coeffs(kl: GaussianKL, basis_a: GpcBasis) -> LognormalField:
    if basis_a.m_xi != kl.m_xi:
        raise ValueError(f"basis has m_xi={basis_a.m_xi}, KL has {kl.m_xi} modes")
    mean = np.exp(kl.g0 + 0.5 * kl.variance_captured())
    coeffs = np.empty((basis_a.size, mean.size))
    for ell, alpha in enumerate(basis_a.indices):
        term = mean.copy()
        for j, a in enumerate(alpha):
            if a:
                term *= kl.modes[j] ** a / sqrt(factorial(int(a)))
        coeffs[ell] = term
    return LognormalField(coeffs=coeffs, basis=basis_a)


def calibrate_lognormal(E0: float, cov: float) -> tuple[float, float]:
    """``(g0, sigma_g)`` giving a pointwise lognormal with mean ``E0`` and CoV ``cov``."""
    if E0 <= 0:
        raise ValueError("E0 must be positive")
    if not 0 <= cov < 1:
        raise ValueError("CoV must lie in [0, 1)")
    sigma_g = sqrt(log1p(cov * cov))
    return log(E0) - 0.5 * sigma_g ** 2, sigma_g


def mean_preserving_g0(E0: float, kl: GaussianKL) -> np.ndarray:
    """Pointwise ``g0`` making the truncated expansion's mean exactly ``E0``."""
    return np.log(E0) - 0.5 * kl.variance_captured()
