"""Seeded error models for flow estimates.

Kurtosis here is the one used for endpoint-error bounds: for an error vector
``e`` with norm ``Z = |e|``, ``kappa = E[Z^4] / E[Z^2]^2``. An isotropic 2-D
Gaussian has ``kappa = 2``; Student-t components push it higher.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np

NoiseKind = Literal["gaussian", "student_t", "uniform_disk"]
VarianceLaw = Literal["constant", "linear_in_t"]

GAUSSIAN_KAPPA = 2.0


def student_t_dof(kappa: float) -> float:
    """Degrees of freedom giving norm-kurtosis ``kappa`` for i.i.d. t components.

    With unit-scale components ``E[X^2] = nu/(nu-2)`` and
    ``E[X^4] = 3 nu^2 / ((nu-2)(nu-4))``, so
    ``kappa = (3 (nu-2)/(nu-4) + 1) / 2``, which inverts to
    ``nu = (4 kappa - 5) / (kappa - 2)``.
    """
    if kappa <= GAUSSIAN_KAPPA:
        raise ValueError(f"Student-t noise needs kappa > {GAUSSIAN_KAPPA}, got {kappa}")
    return (4.0 * kappa - 5.0) / (kappa - 2.0)


def student_t_kappa(nu: float) -> float:
    return (3.0 * (nu - 2.0) / (nu - 4.0) + 1.0) / 2.0


@dataclass(frozen=True)
class NoiseModel:
    """Error distribution, its scale law over temporal baseline, and a seed.

    ``sigma`` is the base scale: the root-mean-square error norm at a
    baseline of one frame. Under ``linear_in_t`` the mean-square error grows
    as ``sigma^2 * baseline``. ``kurtosis`` applies to ``student_t`` only.
    """

    kind: NoiseKind = "gaussian"
    sigma: float = 1.0
    variance_law: VarianceLaw = "constant"
    kurtosis: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t", "uniform_disk"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.variance_law not in ("constant", "linear_in_t"):
            raise ValueError(f"unknown variance law {self.variance_law!r}")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.kurtosis is not None and self.kurtosis < 1:
            raise ValueError("kurtosis must be >= 1")
        if self.kind == "student_t":
            student_t_dof(self.kurtosis if self.kurtosis is not None else 3.0)

    @property
    def dof(self) -> float | None:
        if self.kind != "student_t":
            return None
        return student_t_dof(self.kurtosis if self.kurtosis is not None else 3.0)

    def with_seed(self, seed: int) -> "NoiseModel":
        return replace(self, seed=seed)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def scale_at(self, baseline: float) -> float:
        """RMS error norm for a temporal baseline of ``baseline`` frames."""
        if self.variance_law == "linear_in_t":
            return self.sigma * float(np.sqrt(baseline))
        return self.sigma

    def standard_scalars(self, rng: np.random.Generator, size) -> np.ndarray:
        """Zero-mean, unit-variance scalar draws of this kind."""
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "student_t":
            nu = self.dof
            return rng.standard_t(nu, size) * np.sqrt((nu - 2.0) / nu)
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)

    def vectors(self, rng: np.random.Generator, size, mean_square: float = 1.0) -> np.ndarray:
        """Isotropic zero-mean 2-vectors with ``E|e|^2 = mean_square``; shape ``size + (2,)``."""
        size = (size,) if np.isscalar(size) else tuple(size)
        if self.kind == "uniform_disk":
            # uniform on a disk of radius r has E|e|^2 = r^2 / 2
            r = np.sqrt(2.0 * mean_square)
            rad = r * np.sqrt(rng.random(size))
            ang = rng.uniform(0.0, 2.0 * np.pi, size)
            return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
        comp = self.standard_scalars(rng, size + (2,))
        return comp * np.sqrt(mean_square / 2.0)


def norm_kurtosis(vectors: np.ndarray) -> float:
    """Sample ``E[Z^4] / E[Z^2]^2`` of the vector norms (last axis = components)."""
    z2 = np.sum(np.asarray(vectors, np.float64) ** 2, axis=-1).ravel()
    m2 = z2.mean()
    if m2 == 0:
        return float("nan")
    return float(np.mean(z2**2) / m2**2)
