"""Band-pass wavelet kernels evaluated at continuous frequencies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

KINDS = ("disk", "square")


def beta(x):
    """Degree-7 transition polynomial ``x^4 (35 - 84x + 70x^2 - 20x^3)`` on [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0) | (x > 1)) or not np.all(np.isfinite(x)):
        raise ValueError("beta is defined on [0, 1]")
    out = x**4 * (35.0 - 84.0 * x + 70.0 * x**2 - 20.0 * x**3)
    return out if out.ndim else float(out)


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 0.5:
        raise ValueError(f"tau must lie in (0, 1/2), got {tau}")


def profile(r, tau: float, beta_fn: Callable = beta):
    """Radial profile shared by every kernel, as a function of ``|xi|`` (or ``||xi||``)."""
    _check_tau(tau)
    r = np.abs(np.asarray(r, dtype=np.float64))
    out = np.zeros_like(r)
    out[r < 0.5 - tau] = 1.0
    band = (r >= 0.5 - tau) & (r <= 0.5 + tau)
    if np.any(band):
        t = (tau - 0.5 + r[band]) / (2.0 * tau)
        out[band] = np.cos(0.5 * np.pi * beta_fn(np.clip(t, 0.0, 1.0)))
    return out if out.ndim else float(out)


def psi_1d(xi, tau: float, beta_fn: Callable = beta):
    """1D band-pass wavelet, mostly supported on [-1/2, 1/2]."""
    return profile(xi, tau, beta_fn)


def psi_disk(xi_x, xi_y, tau: float, beta_fn: Callable = beta):
    """Disk band-pass wavelet: the 1D profile applied to the Euclidean norm."""
    return profile(np.hypot(xi_x, xi_y), tau, beta_fn)


def psi_square(xi_x, xi_y, tau: float, beta_fn: Callable = beta):
    """Square band-pass wavelet: separable product of two 1D profiles."""
    return profile(xi_x, tau, beta_fn) * profile(xi_y, tau, beta_fn)


@dataclass(frozen=True)
class KernelSpec:
    """Generating kernel: its support shape ``kind`` and transition width ``tau``."""

    kind: str = "disk"
    tau: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kernel kind must be one of {KINDS}, got {self.kind!r}")
        _check_tau(self.tau)

    def __call__(self, xi_x, xi_y, beta_fn: Callable = beta):
        if self.kind == "disk":
            return psi_disk(xi_x, xi_y, self.tau, beta_fn)
        return psi_square(xi_x, xi_y, self.tau, beta_fn)

    def support(self, xi_x, xi_y, enlarged: bool = False) -> np.ndarray:
        """Membership in Lambda (or in Lambda_tau when ``enlarged``)."""
        half = 0.5 + (self.tau if enlarged else 0.0)
        xi_x = np.asarray(xi_x)
        xi_y = np.asarray(xi_y)
        if self.kind == "disk":
            return np.hypot(xi_x, xi_y) <= half
        return (np.abs(xi_x) <= half) & (np.abs(xi_y) <= half)
