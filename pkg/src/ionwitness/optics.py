"""Gaussian detection-volume model and per-emitter detection efficiencies."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CrystalLayout

__all__ = [
    "DetectionModel",
    "REFERENCE_MODEL",
    "WIDE_FIELD_MODEL",
    "PROSPECT_MODEL",
    "FWHM_PER_SIGMA",
    "efficiency_at",
    "per_ion_efficiencies",
    "contributing_count",
    "save_model",
    "load_model",
]

# Gaussian FWHM = 2 sqrt(2 ln 2) sigma
FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))


@dataclass(frozen=True)
class DetectionModel:
    """Overall detection efficiency of an emitter as a function of position.

    ``eta0`` is the efficiency at the focus, summed over both detectors.  A
    collected photon goes to detector 1 with probability ``split_T`` and to
    detector 2 otherwise; ``kappa1`` and ``kappa2`` scale each detector's
    share to model unequal detector efficiencies.
    """

    eta0: float = 6.1e-4
    sigma_r_um: float = 2.3
    sigma_a_um: float = 98.0
    split_T: float = 0.5
    kappa1: float = 1.0
    kappa2: float = 1.0
    dark_prob: float = 0.0

    def __post_init__(self):
        if not 0 < self.eta0 <= 1:
            raise ValueError(f"eta0 must be in (0, 1], got {self.eta0}")
        if not (self.sigma_r_um > 0 and self.sigma_a_um > 0):
            raise ValueError("Gaussian widths must be positive")
        if not 0 < self.split_T < 1:
            raise ValueError(f"split_T must be in (0, 1), got {self.split_T}")
        if self.kappa1 < 0 or self.kappa2 < 0:
            raise ValueError("detector scale factors must be non-negative")
        if not 0 <= self.dark_prob < 1:
            raise ValueError(f"dark_prob must be in [0, 1), got {self.dark_prob}")
        if max(self.split_T * self.kappa1, (1 - self.split_T) * self.kappa2) > 1:
            raise ValueError("per-detector share of collected light exceeds one")

    @property
    def detector_shares(self) -> tuple[float, float]:
        """Fraction of an emitter's efficiency that reaches each detector."""
        return self.split_T * self.kappa1, (1 - self.split_T) * self.kappa2

    @property
    def peak_detector_efficiencies(self) -> tuple[float, float]:
        s1, s2 = self.detector_shares
        return self.eta0 * s1, self.eta0 * s2

    def replace(self, **changes) -> "DetectionModel":
        return dataclasses.replace(self, **changes)


# Focus efficiency and widths of the narrow-field setup; detector shares
# reproduce peak per-detector efficiencies of 3.3e-4 and 2.8e-4.
REFERENCE_MODEL = DetectionModel(
    eta0=6.1e-4,
    sigma_r_um=2.3,
    sigma_a_um=98.0,
    split_T=0.5,
    kappa1=6.6 / 6.1,
    kappa2=5.6 / 6.1,
)

# ~20 um radial field of view read as a Gaussian FWHM.
WIDE_FIELD_MODEL = REFERENCE_MODEL.replace(sigma_r_um=20.0 / FWHM_PER_SIGMA)

# Parameters of the measurement-time projection for large crystals.
PROSPECT_MODEL = DetectionModel(
    eta0=4e-4, sigma_r_um=2.0, sigma_a_um=98.0, split_T=0.5
)


def efficiency_at(model: DetectionModel, r, a):
    """eta0 * exp(-r^2 / 2 sigma_r^2 - a^2 / 2 sigma_a^2), elementwise."""
    r = np.asarray(r, dtype=float)
    a = np.asarray(a, dtype=float)
    expo = -(r**2) / (2 * model.sigma_r_um**2) - a**2 / (2 * model.sigma_a_um**2)
    out = model.eta0 * np.exp(expo)
    return float(out) if out.ndim == 0 else out


def per_ion_efficiencies(
    model: DetectionModel,
    layout: CrystalLayout | np.ndarray,
    axis=(0.0, 0.0, 1.0),
    focus=(0.0, 0.0, 0.0),
) -> np.ndarray:
    """Overall detection efficiency of every emitter in ``layout``.

    ``axis`` is the optical axis direction and ``focus`` the focal point; the
    axial coordinate is measured along ``axis`` from the focal plane.
    """
    axis = np.asarray(axis, dtype=float)
    if not math.isclose(np.linalg.norm(axis), 1.0, rel_tol=1e-9):
        raise ValueError(f"optical axis must be a unit vector, got {axis}")
    pos = layout.positions if isinstance(layout, CrystalLayout) else layout
    pos = np.asarray(pos, dtype=float).reshape(-1, 3) - np.asarray(focus, dtype=float)
    a = pos @ axis
    r = np.linalg.norm(pos - a[:, None] * axis, axis=1)
    return np.asarray(efficiency_at(model, r, a), dtype=float).reshape(-1)


def contributing_count(etas, eta_th: float) -> int:
    """Number of emitters with efficiency at least ``eta_th * max(etas)``."""
    etas = np.asarray(etas, dtype=float)
    if etas.size == 0:
        raise ValueError("no emitters")
    if not 0 <= eta_th <= 1:
        raise ValueError(f"relative threshold must be in [0, 1], got {eta_th}")
    return int(np.count_nonzero(etas >= eta_th * etas.max()))


_CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(DetectionModel))


def save_model(model: DetectionModel, path: str | Path) -> None:
    """Write ``model`` as ``key = value`` lines."""
    lines = [f"{key} = {getattr(model, key)!r}" for key in _CONFIG_KEYS]
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> DetectionModel:
    """Read a ``key = value`` detection config; missing keys take defaults."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = float(value)
    return DetectionModel(**values)
