"""Deterministic node/weight sets shared by every integral in the toolkit.

A :class:`QuadratureSet` bundles four things:

* a radial Gauss-Legendre rule on [0, r_max] (velocity magnitude),
* a product rule on the unit sphere (Gauss in cos(theta) x trapezoid in
  phi, exact for spherical polynomials of the degrees used here),
* seeded scrambled-Sobol streams for the high-dimensional collision
  integrals,
* inverse-CDF samplers for the radial equilibrium densities used as
  importance weights.

Everything is a pure function of the configuration fields, so identical
configurations reproduce identical nodes bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.stats import qmc

# e^{-sqrt(1+r^2)} < 1e-14 for r >= 33, so velocity integrals truncated
# there lose less than the working tolerance.
DEFAULT_R_MAX = 33.0


@dataclass(frozen=True)
class QuadratureSet:
    """Configuration of all deterministic quadrature resources."""

    r_max: float = DEFAULT_R_MAX
    n_radial: int = 320
    n_theta: int = 24
    n_phi: int = 48
    qmc_samples: int = 1 << 21
    seed: int = 20250801

    def radial_rule(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes/weights on [0, r_max]."""
        return _radial_rule(self.r_max, n or self.n_radial)

    def sphere_rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit directions and weights integrating over S^2 (sum of w = 4 pi)."""
        return _sphere_rule(self.n_theta, self.n_phi)

    def velocity_rule(self, n_radial: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Full 3D product rule: points (N,3) and weights including r^2 dr dOmega."""
        r, wr = self.radial_rule(n_radial)
        dirs, wd = self.sphere_rule()
        pts = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
        w = (wr[:, None] * r[:, None] ** 2 * wd[None, :]).reshape(-1)
        return pts, w

    def sobol(self, dim: int, n: int, stream: int = 0) -> np.ndarray:
        """Scrambled Sobol points; `stream` derives an independent substream."""
        eng = qmc.Sobol(d=dim, scramble=True, seed=self.seed + 0x9E3779B9 * stream)
        return eng.random(n)

    def maxwellian_radial_sampler(self, half_weight: bool = False):
        """Inverse CDF of the density ~ r^2 e^{-v0} (or e^{-v0/2}).

        Returns (inverse_cdf, normalization) where normalization is the
        integral of the 3D density r^2 e^{-v0 * s} over R^3 (s = 1 or 1/2).
        """
        return _radial_sampler(self.r_max, half_weight)

    def vgrid(self, n: int = 61, vmax: float = 30.0) -> np.ndarray:
        """Plain |v| grid used for envelope fits."""
        return np.linspace(0.0, vmax, n)


def sample_direction(u2: np.ndarray) -> np.ndarray:
    """Map uniform (N,2) variates to uniform unit vectors on S^2."""
    ct = 2.0 * u2[:, 0] - 1.0
    ph = 2.0 * np.pi * u2[:, 1]
    st = np.sqrt(np.maximum(1.0 - ct * ct, 0.0))
    return np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=1)


@lru_cache(maxsize=32)
def _radial_rule(r_max: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * r_max * (x + 1.0), 0.5 * r_max * w


@lru_cache(maxsize=8)
def _sphere_rule(n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray]:
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    ph = 2.0 * np.pi * np.arange(n_phi) / n_phi
    wp = 2.0 * np.pi / n_phi
    st = np.sqrt(1.0 - x * x)
    dirs = np.stack(
        [
            np.outer(st, np.cos(ph)).ravel(),
            np.outer(st, np.sin(ph)).ravel(),
            np.outer(x, np.ones(n_phi)).ravel(),
        ],
        axis=1,
    )
    w = np.outer(wx, np.full(n_phi, wp)).ravel()
    return dirs, w


@lru_cache(maxsize=8)
def _radial_sampler(r_max: float, half_weight: bool):
    rg = np.linspace(0.0, r_max, 32769)
    expo = 0.5 if half_weight else 1.0
    pdf = rg**2 * np.exp(-expo * np.sqrt(1.0 + rg**2))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(rg))])
    total = cdf[-1]
    cdf /= total
    # PCHIP keeps the inverse monotone; the CDF is strictly increasing
    # away from 0, so de-duplication is only a guard.
    cdf, keep = np.unique(cdf, return_index=True)
    inv = PchipInterpolator(cdf, rg[keep])
    return inv, 4.0 * np.pi * total
