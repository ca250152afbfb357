"""Physical description of a rare-earth spin cluster.

A cluster is the set of host ions surrounding one dopant.  Each host ion has
three hyperfine ground levels (|0>, |1>, |aux>) and one optically excited
level |e>.  The dopant strains the lattice, so every site gets its own optical
frequency shift (a satellite line), and an ion in |e> shifts the optical
transitions of its neighbours by an amount Delta_ij.

All frequencies are in MHz, lengths in Angstrom unless stated otherwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "LEVELS",
    "TRANSITIONS",
    "LevelScheme",
    "Site",
    "ClusterSpec",
    "MaterialParams",
    "SpectralLine",
    "EmptyClusterError",
    "INTERACTION_CALIBRATION",
    "dipole_shift",
    "build_cluster",
    "merge_lines",
    "satellite_spectrum",
    "connectivity",
    "neighbors",
    "read_sites_csv",
    "write_spectrum_csv",
]

LEVELS = ("0", "1", "aux", "e")
# transition name -> index of its ground level
TRANSITIONS = {"0e": 0, "1e": 1, "auxe": 2}

# Measured (distance in Angstrom, interaction in MHz) pairs for EuCl3.6H2O.
# Reference data only; the default interaction generator is not fitted to them.
INTERACTION_CALIBRATION = ((7.9, 46.0), (30.0, 1.7))


class EmptyClusterError(ValueError):
    """Raised when a cluster definition would contain no sites."""


@dataclass(frozen=True)
class LevelScheme:
    """Optical transition frequencies and branching of one ion.

    ``freq_0e``, ``freq_1e`` and ``freq_auxe`` are the ground->|e> transition
    frequencies relative to the satellite line centre.  ``branching`` holds the
    relative oscillator strengths of the three transitions, in the order
    (0-e, 1-e, aux-e).
    """

    freq_0e: float = 0.0
    freq_1e: float = -50.0
    freq_auxe: float = -120.0
    branching: tuple[float, float, float] = (0.45, 0.45, 0.10)

    def __post_init__(self):
        freqs = self.transition_freqs
        if len(set(freqs)) != 3:
            raise ValueError(f"transition frequencies must be distinct, got {freqs}")
        if len(self.branching) != 3:
            raise ValueError("branching needs one value per transition")
        b = np.asarray(self.branching, dtype=float)
        if np.any(b < 0) or np.any(b > 1):
            raise ValueError(f"branching values must lie in [0, 1], got {self.branching}")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ValueError(f"branching must sum to 1, got {b.sum()!r}")
        object.__setattr__(self, "branching", tuple(float(x) for x in b))

    @property
    def transition_freqs(self) -> tuple[float, float, float]:
        return (float(self.freq_0e), float(self.freq_1e), float(self.freq_auxe))

    @property
    def hyperfine_splittings(self) -> tuple[float, float, float]:
        """Ground-state splittings |0>-|1>, |0>-|aux>, |1>-|aux> (MHz)."""
        f0, f1, fa = self.transition_freqs
        return (abs(f0 - f1), abs(f0 - fa), abs(f1 - fa))

    def ground_energies(self) -> np.ndarray:
        """Energies of |0>, |1>, |aux> with |0> as the zero."""
        f0, f1, fa = self.transition_freqs
        return np.array([0.0, f0 - f1, f0 - fa])

    @classmethod
    def ideal_lambda(cls, splitting: float = 50.0, aux_splitting: float = 120.0) -> "LevelScheme":
        """Lambda system with no oscillator strength on the aux transition."""
        return cls(0.0, -splitting, -aux_splitting, (0.5, 0.5, 0.0))


@dataclass(frozen=True)
class Site:
    position: tuple[float, float, float]
    satellite_shift: float
    level_scheme: LevelScheme = field(default_factory=LevelScheme)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.position))

    def transition_freq(self, transition: str) -> float:
        """Nominal optical frequency of ``transition`` for this site."""
        g = TRANSITIONS[transition]
        return self.satellite_shift + self.level_scheme.transition_freqs[g]


@dataclass(frozen=True, eq=False)
class ClusterSpec:
    """Sites around a dopant plus the pairwise excited-state interaction.

    ``interaction[i, j]`` is the shift (MHz) of site j's optical transitions
    while site i is in |e>.  The matrix is symmetric with a zero diagonal.
    """

    sites: tuple[Site, ...]
    interaction: np.ndarray
    symmetry_factor: int = 1

    def __post_init__(self):
        sites = tuple(self.sites)
        if not sites:
            raise EmptyClusterError("cluster has no sites")
        object.__setattr__(self, "sites", sites)
        inter = np.array(self.interaction, dtype=float)
        n = len(sites)
        if inter.shape != (n, n):
            raise ValueError(f"interaction must be {n}x{n}, got {inter.shape}")
        if not np.allclose(inter, inter.T, atol=0.0, rtol=0.0):
            raise ValueError("interaction map must be symmetric")
        if np.any(np.diag(inter) != 0):
            raise ValueError("interaction map must have a zero diagonal")
        inter.setflags(write=False)
        object.__setattr__(self, "interaction", inter)
        if int(self.symmetry_factor) < 1:
            raise ValueError("symmetry_factor must be a positive integer")
        pos = self.positions
        if n > 1:
            d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
            d[np.diag_indices(n)] = np.inf
            if d.min() <= 0:
                raise ValueError("site positions overlap")

    def __len__(self) -> int:
        return len(self.sites)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.sites], dtype=float).reshape(-1, 3)

    @property
    def shifts(self) -> np.ndarray:
        return np.array([s.satellite_shift for s in self.sites])

    def delta(self, i: int, j: int) -> float:
        return float(self.interaction[i, j])

    @classmethod
    def explicit(
        cls,
        shifts: Sequence[float],
        interactions: Mapping[tuple[int, int], float] | np.ndarray | None = None,
        level_scheme: LevelScheme | Sequence[LevelScheme] | None = None,
        positions: Sequence[Sequence[float]] | None = None,
        symmetry_factor: int = 1,
    ) -> "ClusterSpec":
        """Build a cluster from explicit shifts and a pair map.

        Without ``positions`` the sites are laid out on the x axis, 10 A apart;
        those positions are placeholders and carry no physics.
        """
        n = len(shifts)
        if positions is None:
            positions = [(10.0 * (i + 1), 0.0, 0.0) for i in range(n)]
        if level_scheme is None:
            schemes = [LevelScheme()] * n
        elif isinstance(level_scheme, LevelScheme):
            schemes = [level_scheme] * n
        else:
            schemes = list(level_scheme)
        inter = _interaction_matrix(n, interactions)
        sites = tuple(
            Site(tuple(float(x) for x in p), float(s), ls)
            for p, s, ls in zip(positions, shifts, schemes)
        )
        return cls(sites, inter, symmetry_factor)


def _interaction_matrix(n, interactions) -> np.ndarray:
    if interactions is None:
        return np.zeros((n, n))
    if isinstance(interactions, np.ndarray):
        return np.array(interactions, dtype=float)
    out = np.zeros((n, n))
    for (i, j), val in interactions.items():
        if i == j:
            raise ValueError(f"self-interaction given for site {i}")
        if out[i, j] not in (0.0, val):
            raise ValueError(f"conflicting interaction values for pair ({i}, {j})")
        out[i, j] = out[j, i] = float(val)
    return out


@dataclass(frozen=True)
class MaterialParams:
    """Crystal and measurement parameters used by the cluster generator and the
    feasibility estimates.  Defaults describe the EuCl3.6H2O scenario."""

    volume_per_ion: float = 250.0  # A^3
    doping_fraction: float = 1e-3
    crystal_length: float = 5.0  # mm
    beam_diameter: float = 100.0  # um
    intrinsic_linewidth: float = 10.0  # MHz
    dopant_broadening: float = 10.0  # MHz
    nn_shift: float = 1000.0  # MHz, dipole part of the nearest-neighbour shift
    nn_distance: float = 7.37  # A
    min_resolvable_shift: float = 50.0  # MHz
    min_interaction: float = 10.0  # MHz
    interaction_ref: float = 10.0  # MHz at interaction_ref_distance
    interaction_ref_distance: float = 10.0  # A
    symmetry_factor: int = 1
    concentration_threshold_ppb: float = 100.0
    detection_min_ions: float = 1e4

    def __post_init__(self):
        for name in (
            "volume_per_ion",
            "crystal_length",
            "beam_diameter",
            "intrinsic_linewidth",
            "dopant_broadening",
            "nn_shift",
            "nn_distance",
            "min_resolvable_shift",
            "min_interaction",
            "interaction_ref",
            "interaction_ref_distance",
            "concentration_threshold_ppb",
            "detection_min_ions",
        ):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be a positive number, got {val!r}")
        if not 0 < self.doping_fraction < 1:
            raise ValueError(f"doping_fraction must lie in (0, 1), got {self.doping_fraction}")
        if int(self.symmetry_factor) != self.symmetry_factor or self.symmetry_factor < 1:
            raise ValueError("symmetry_factor must be a positive integer")

    @property
    def total_linewidth(self) -> float:
        return self.intrinsic_linewidth + self.dopant_broadening


def dipole_shift(r, amplitude: float, ref_distance: float):
    """``amplitude * (ref_distance / r)**3``; works on scalars and arrays."""
    r = np.asarray(r, dtype=float)
    out = amplitude * (ref_distance / r) ** 3
    return float(out) if out.ndim == 0 else out


def _random_positions(n_base, radius, min_sep, sym, rng) -> np.ndarray:
    """Uniform placement inside a sphere with a hard-core separation.

    With ``sym > 1`` each accepted point is accompanied by its images under
    rotations by 2*pi*k/sym about z, so equivalent sites come in sets of sym.
    """
    rots = []
    for k in range(sym):
        a = 2 * np.pi * k / sym
        rots.append(np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]]))
    pts: list[np.ndarray] = []
    attempts = 0
    while len(pts) < n_base * sym:
        attempts += 1
        if attempts > 10000 * max(n_base, 1):
            raise RuntimeError("could not place sites; density too high for the hard-core radius")
        p = rng.uniform(-radius, radius, size=3)
        if np.linalg.norm(p) > radius or np.linalg.norm(p) < min_sep:
            continue
        images = [R @ p for R in rots]
        cand = np.array(images)
        if sym > 1:
            dd = np.linalg.norm(cand[:, None] - cand[None, :], axis=-1)
            dd[np.diag_indices(sym)] = np.inf
            if dd.min() < min_sep:
                continue
        if pts:
            existing = np.array(pts)
            if np.min(np.linalg.norm(existing[:, None] - cand[None, :], axis=-1)) < min_sep:
                continue
        pts.extend(images)
    return np.array(pts)


def _cubic_positions(radius, spacing) -> np.ndarray:
    m = int(np.ceil(radius / spacing))
    g = np.arange(-m, m + 1) * spacing
    pts = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    r = np.linalg.norm(pts, axis=1)
    keep = (r > 0) & (r <= radius)
    pts = pts[keep]
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], np.round(r[keep], 9)))
    return pts[order]


def build_cluster(
    params: MaterialParams,
    cutoff_radius: float,
    site_source: str | Sequence[Sequence[float]] | np.ndarray = "random",
    *,
    seed: int = 0,
    shift_overrides: Mapping[int, float] | None = None,
    interactions: Mapping[tuple[int, int], float] | None = None,
    level_scheme: LevelScheme | None = None,
) -> ClusterSpec:
    """Generate the sites within ``cutoff_radius`` of a dopant at the origin.

    ``site_source`` is ``"random"`` (uniform density at ``volume_per_ion``,
    seeded), ``"cubic"`` (simple cubic lattice at the same density) or an
    explicit array of positions.  Satellite shifts follow the 1/r^3 law
    anchored at (nn_distance, nn_shift); ``shift_overrides`` replaces the
    value for individual near-neighbour sites.  Interactions default to the
    same power law anchored at (interaction_ref_distance, interaction_ref).
    """
    if cutoff_radius < params.nn_distance:
        raise EmptyClusterError(
            f"cutoff radius {cutoff_radius} A is below the nearest-neighbour distance "
            f"{params.nn_distance} A"
        )
    sym = int(params.symmetry_factor)
    spacing = params.volume_per_ion ** (1 / 3)
    if isinstance(site_source, str):
        if site_source == "random":
            n_expected = 4 * np.pi / 3 * cutoff_radius**3 / params.volume_per_ion
            n_base = max(1, int(round(n_expected / sym)))
            rng = np.random.default_rng(seed)
            pos = _random_positions(n_base, cutoff_radius, 0.5 * spacing, sym, rng)
        elif site_source == "cubic":
            pos = _cubic_positions(cutoff_radius, spacing)
        else:
            raise ValueError(f"unknown site source {site_source!r}")
    else:
        pos = np.asarray(site_source, dtype=float).reshape(-1, 3)
        r = np.linalg.norm(pos, axis=1)
        pos = pos[r <= cutoff_radius]
    if len(pos) == 0:
        raise EmptyClusterError("no sites inside the cutoff radius")
    if len(np.unique(np.round(pos, 9), axis=0)) != len(pos):
        raise ValueError("overlapping site positions")
    r = np.linalg.norm(pos, axis=1)
    if np.any(r <= 0):
        raise ValueError("a site coincides with the dopant")

    shifts = np.asarray(dipole_shift(r, params.nn_shift, params.nn_distance), dtype=float).reshape(-1)
    for i, val in (shift_overrides or {}).items():
        shifts[i] = val

    n = len(pos)
    if interactions is None:
        d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        inter = params.interaction_ref * (params.interaction_ref_distance / d) ** 3
        np.fill_diagonal(inter, 0.0)
        inter = 0.5 * (inter + inter.T)
    else:
        inter = _interaction_matrix(n, interactions)
    ls = level_scheme or LevelScheme()
    sites = tuple(Site(tuple(map(float, p)), float(s), ls) for p, s in zip(pos, shifts))
    return ClusterSpec(sites, inter, sym)


@dataclass(frozen=True)
class SpectralLine:
    center: float
    width: float
    site_ids: tuple[int, ...]


def merge_lines(shifts: Sequence[float], linewidth: float) -> list[tuple[int, ...]]:
    """Single-linkage grouping of shifts: neighbours closer than ``linewidth``
    (after sorting) share a line.  Returns index groups sorted by frequency."""
    if linewidth <= 0:
        raise ValueError("linewidth must be positive")
    s = np.asarray(shifts, dtype=float)
    if s.size == 0:
        return []
    order = np.argsort(s, kind="stable")
    groups = [[int(order[0])]]
    for prev, cur in zip(order[:-1], order[1:]):
        if s[cur] - s[prev] < linewidth:
            groups[-1].append(int(cur))
        else:
            groups.append([int(cur)])
    return [tuple(sorted(g)) for g in groups]


def satellite_spectrum(cluster: ClusterSpec, linewidth: float) -> list[SpectralLine]:
    """Satellite lines of ``cluster`` at the given optical linewidth."""
    shifts = cluster.shifts
    lines = []
    for group in merge_lines(shifts, linewidth):
        vals = shifts[list(group)]
        lines.append(
            SpectralLine(float(vals.mean()), float(vals.max() - vals.min() + linewidth), group)
        )
    return lines


def connectivity(cluster: ClusterSpec, min_interaction: float) -> dict[int, int]:
    """Number of partners of each site with interaction >= ``min_interaction``."""
    if min_interaction <= 0:
        raise ValueError("min_interaction must be positive")
    strong = np.abs(cluster.interaction) >= min_interaction
    np.fill_diagonal(strong, False)
    return {i: int(c) for i, c in enumerate(strong.sum(axis=1))}


def neighbors(cluster: ClusterSpec, site: int, min_interaction: float) -> set[int]:
    strong = np.abs(cluster.interaction[site]) >= min_interaction
    strong[site] = False
    return set(np.flatnonzero(strong).tolist())


def read_sites_csv(path: str | Path, params: MaterialParams | None = None) -> ClusterSpec:
    """Read an explicit site list with columns x, y, z, shift.

    An empty ``shift`` cell falls back to the dipole law of ``params``.
    """
    params = params or MaterialParams()
    pos, shifts = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "y", "z", "shift"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            p = (float(row["x"]), float(row["y"]), float(row["z"]))
            pos.append(p)
            cell = (row["shift"] or "").strip()
            shifts.append(
                float(cell) if cell else dipole_shift(np.linalg.norm(p), params.nn_shift, params.nn_distance)
            )
    overrides = dict(enumerate(shifts))
    cutoff = max(np.linalg.norm(pos, axis=1).max(), params.nn_distance)
    return build_cluster(params, float(cutoff), np.array(pos), shift_overrides=overrides)


def write_spectrum_csv(lines: Iterable[SpectralLine], path_or_file) -> None:
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["center_mhz", "width_mhz", "n_sites"])
        for line in lines:
            w.writerow([repr(line.center), repr(line.width), len(line.site_ids)])
    finally:
        if own:
            fh.close()
