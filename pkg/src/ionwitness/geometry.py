"""Emitter positions for spherical ion Coulomb crystals.

Small and medium crystals are built shell by shell: each shell is populated
with the vertices of randomly rotated polyhedra, surplus vertices removed at
random.  Very large crystals use a layered lattice instead.  All lengths are
in micrometres.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation

__all__ = [
    "ShellSpec",
    "CrystalLayout",
    "PolyhedronKind",
    "SHELL_CAPACITY",
    "SHELL_MAX_IONS",
    "REFERENCE_SPACING_UM",
    "shell_occupation",
    "polyhedron_vertices",
    "random_rotation",
    "sample_crystal",
    "bcc_position",
    "bcc_layout",
    "build_layout",
    "bcc_spacing_for_shells",
    "calibrate_spacing",
    "write_layout_csv",
    "read_layout_csv",
]

# Measured crystals, innermost shell first.
KNOWN_OCCUPANCIES: dict[int, tuple[int, ...]] = {
    12: (12,),
    55: (12, 43),
    125: (8, 35, 82),
    204: (4, 25, 60, 115),
    275: (9, 36, 80, 150),
}

# Ions per unit k^2 on shell k; the measured 275-ion crystal holds ~9 k^2.
SHELL_CAPACITY = 9

# Shell spacing (um) at which a 1500-ion crystal has ~391 ions above 1/e of
# the peak efficiency in the wide-field model; found with calibrate_spacing.
REFERENCE_SPACING_UM = 3.26

# Above this size crystals are laid out on the lattice.
SHELL_MAX_IONS = 2000


@dataclass(frozen=True)
class ShellSpec:
    occupancies: tuple[int, ...]
    spacing: float

    def __post_init__(self):
        if not self.occupancies or min(self.occupancies) < 1:
            raise ValueError(f"every shell needs at least one ion: {self.occupancies}")
        if not self.spacing > 0:
            raise ValueError(f"shell spacing must be positive, got {self.spacing}")

    @property
    def n_total(self) -> int:
        return sum(self.occupancies)

    def radius(self, shell: int) -> float:
        """Radius of the 0-based ``shell``; a lone ion sits at the centre."""
        if self.occupancies == (1,):
            return 0.0
        return (shell + 1) * self.spacing


@dataclass(frozen=True, eq=False)
class CrystalLayout:
    positions: np.ndarray
    provenance: str
    seed: int | None = None
    spacing: float | None = None
    shell_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.provenance not in ("shells", "bcc"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n(self) -> int:
        return len(self.positions)


class PolyhedronKind(enum.IntEnum):
    """Polyhedra used to tile a shell; the value is the vertex count."""

    TETRAHEDRON = 4
    CUBE = 8
    ICOSAHEDRON = 12
    DODECAHEDRON = 20
    TRUNCATED_ICOSAHEDRON = 60


def _shell_sizes(n_shells: int) -> np.ndarray:
    return np.arange(1, n_shells + 1) ** 2


def shell_occupation(n_total: int, spacing: float = 1.0) -> ShellSpec:
    """Split ``n_total`` ions over concentric shells, innermost first.

    Measured crystal sizes return their tabulated occupancies.  Other sizes
    get the fewest shells whose capacity ``SHELL_CAPACITY * k**2`` holds all
    ions, filled in proportion to ``k**2`` with the rounding remainder on the
    outermost shell.
    """
    if n_total < 1:
        raise ValueError(f"need at least one ion, got {n_total}")
    if n_total in KNOWN_OCCUPANCIES:
        return ShellSpec(KNOWN_OCCUPANCIES[n_total], spacing)
    n_shells = 1
    while SHELL_CAPACITY * _shell_sizes(n_shells).sum() < n_total:
        n_shells += 1
    weights = _shell_sizes(n_shells)
    occ = (n_total * weights) // weights.sum()
    occ[-1] += n_total - occ.sum()
    return ShellSpec(tuple(int(o) for o in occ), spacing)


_PHI = (1 + math.sqrt(5)) / 2


def _signed(*base):
    """All sign choices of the non-zero entries of ``base``."""
    choices = [(v,) if v == 0 else (v, -v) for v in base]
    return list(itertools.product(*choices))


def _cyclic(points):
    out = []
    for p in points:
        out += [p, (p[1], p[2], p[0]), (p[2], p[0], p[1])]
    return out


def _raw_vertices(kind: PolyhedronKind) -> np.ndarray:
    phi = _PHI
    if kind is PolyhedronKind.TETRAHEDRON:
        pts = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    elif kind is PolyhedronKind.CUBE:
        pts = _signed(1, 1, 1)
    elif kind is PolyhedronKind.ICOSAHEDRON:
        pts = _cyclic(_signed(0, 1, phi))
    elif kind is PolyhedronKind.DODECAHEDRON:
        pts = _signed(1, 1, 1) + _cyclic(_signed(0, 1 / phi, phi))
    else:
        pts = _cyclic(
            _signed(0, 1, 3 * phi)
            + _signed(1, 2 + phi, 2 * phi)
            + _signed(phi, 2, 2 * phi + 1)
        )
    return np.array(pts, dtype=float)


def polyhedron_vertices(kind: PolyhedronKind) -> np.ndarray:
    """Unit-norm vertices of ``kind`` centred on the origin, shape (V, 3)."""
    v = _raw_vertices(PolyhedronKind(kind))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Haar-uniform rotation matrix, or a stack of ``size`` of them."""
    return Rotation.random(size, random_state=rng).as_matrix()


def _polyhedra_for(m: int) -> list[PolyhedronKind]:
    """Largest-first polyhedra whose vertices cover ``m`` points."""
    kinds = sorted(PolyhedronKind, reverse=True)
    chosen = []
    left = m
    for kind in kinds:
        while left >= kind:
            chosen.append(kind)
            left -= kind
    if left > 0:
        chosen.append(min(k for k in kinds if k >= left))
    return chosen


def _fill_shell(m: int, rng: np.random.Generator) -> np.ndarray:
    parts = [
        polyhedron_vertices(kind) @ random_rotation(rng).T for kind in _polyhedra_for(m)
    ]
    verts = np.vstack(parts)
    keep = rng.choice(len(verts), size=m, replace=False)
    return verts[np.sort(keep)]


def sample_crystal(
    n_total: int, spacing: float, rng: np.random.Generator | int | None = None
) -> CrystalLayout:
    """Random shell-structured crystal of ``n_total`` ions.

    ``rng`` may be a Generator or an integer seed; the layout is a pure
    function of ``(n_total, spacing, seed)``.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    spec = shell_occupation(n_total, spacing)
    if spec.occupancies == (1,):
        return CrystalLayout(
            np.zeros((1, 3)), "shells", seed, spacing, np.zeros(1, dtype=int)
        )
    blocks, index = [], []
    for k, m in enumerate(spec.occupancies):
        blocks.append(_fill_shell(m, rng) * spec.radius(k))
        index.append(np.full(m, k))
    return CrystalLayout(
        np.vstack(blocks), "shells", seed, spacing, np.concatenate(index)
    )


def bcc_position(i, j, k, u: float = 1.0) -> np.ndarray:
    """Cartesian coordinates of lattice site (i, j, k) at ion distance ``u``."""
    i, j, k = (np.asarray(a) for a in (i, j, k))
    x = i * u + 0.25 * (1 - (-1.0) ** j) * u
    y = j * math.sqrt(3) / 2 * u + u / (2 * math.sqrt(3)) * (1 - (-1.0) ** k)
    z = k * math.sqrt(2 / 3) * u
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1).astype(float)


def bcc_layout(u: float, n_target: int) -> CrystalLayout:
    """The ``n_target`` lattice sites nearest the centroid of a generous block."""
    if not u > 0:
        raise ValueError(f"lattice spacing must be positive, got {u}")
    if n_target < 1:
        raise ValueError(f"need at least one ion, got {n_target}")
    # site density is sqrt(2)/u^3; pad the radius so the ball is complete
    radius = (3 * n_target / (4 * math.pi * math.sqrt(2))) ** (1 / 3) * u + 2 * u
    ni = math.ceil(radius / u) + 1
    nj = math.ceil(radius / (math.sqrt(3) / 2 * u)) + 1
    nk = math.ceil(radius / (math.sqrt(2 / 3) * u)) + 1
    i, j, k = np.meshgrid(
        np.arange(-ni, ni + 1),
        np.arange(-nj, nj + 1),
        np.arange(-nk, nk + 1),
        indexing="ij",
    )
    pts = bcc_position(i.ravel(), j.ravel(), k.ravel(), u)
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1)
    keep = np.argsort(dist, kind="stable")[:n_target]
    return CrystalLayout(pts[keep] - centroid, "bcc", None, u)


def bcc_spacing_for_shells(spacing: float) -> float:
    """Lattice ion distance giving the same number density as the shell model."""
    shell_density = SHELL_CAPACITY / (4 * math.pi * spacing**3)
    return (math.sqrt(2) / shell_density) ** (1 / 3)


def build_layout(
    n_total: int, spacing: float, rng: np.random.Generator | int | None = None
) -> CrystalLayout:
    """Shell crystal up to ``SHELL_MAX_IONS`` ions, density-matched lattice above."""
    if n_total <= SHELL_MAX_IONS:
        return sample_crystal(n_total, spacing, rng)
    layout = bcc_layout(bcc_spacing_for_shells(spacing), n_total)
    return CrystalLayout(layout.positions, "bcc", None, spacing)


def calibrate_spacing(
    observable: Callable[[float], float],
    target: float,
    lo: float,
    hi: float,
    xtol: float = 1e-4,
) -> float:
    """Shell spacing at which ``observable(spacing)`` equals ``target``.

    ``observable`` should be deterministic (fix its seeds) and monotone on
    ``[lo, hi]``.
    """
    f_lo = observable(lo) - target
    f_hi = observable(hi) - target
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise ValueError(
            f"target {target} is not bracketed by spacings [{lo}, {hi}]"
        )
    return brentq(lambda s: observable(s) - target, lo, hi, xtol=xtol)


def write_layout_csv(layout: CrystalLayout, path: str | Path) -> None:
    header = (
        f"# n={layout.n},provenance={layout.provenance},"
        f"seed={layout.seed},spacing={None if layout.spacing is None else float(layout.spacing)!r}\n"
    )
    with open(path, "w", newline="") as fh:
        fh.write(header)
        fh.write("x_um,y_um,z_um\n")
        for x, y, z in layout.positions.tolist():
            fh.write(f"{x!r},{y!r},{z!r}\n")


def _parse_meta(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise ValueError("layout CSV must start with a '# n=...' metadata line")
    items = (kv.split("=", 1) for kv in line[1:].strip().split(","))
    return {k.strip(): v.strip() for k, v in items}


def read_layout_csv(path: str | Path) -> CrystalLayout:
    with open(path) as fh:
        meta = _parse_meta(fh.readline())
        columns = fh.readline().strip().split(",")
        if columns != ["x_um", "y_um", "z_um"]:
            raise ValueError(f"unexpected layout columns {columns}")
        pos = np.loadtxt(fh, delimiter=",", ndmin=2).reshape(-1, 3)
    if len(pos) != int(meta["n"]):
        raise ValueError(f"header says n={meta['n']} but file has {len(pos)} rows")
    seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    spacing = None if meta.get("spacing", "None") == "None" else float(meta["spacing"])
    return CrystalLayout(pos, meta["provenance"], seed, spacing)


def layout_radii(layout: CrystalLayout) -> np.ndarray:
    return np.linalg.norm(layout.positions, axis=1)
