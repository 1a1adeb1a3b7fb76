"""Spin species, cluster geometry, and secular dipolar couplings.

Couplings are stored as angular frequencies (rad/s) throughout; any Hz
values coming from a config file are multiplied by 2*pi at the parsing
boundary.  Positions are in meters, the quantization axis is set by the
static-field direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import constants

MIN_PAIR_DISTANCE = 0.5e-10  # meters; pairs closer than this are degenerate
DEFAULT_DIM_CAP = 65536
DEFAULT_SITE_CAP = 64

_MU0_OVER_4PI = constants.mu_0 / (4.0 * math.pi)
_HBAR = constants.hbar


class GeometryError(ValueError):
    """Degenerate or inconsistent geometry (coincident sites, bad axis)."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


class CapacityError(RuntimeError):
    """A requested system exceeds a configured size cap."""


class SelectionError(ValueError):
    """A species selection matched no site pair."""


@dataclass(frozen=True)
class SpinSpecies:
    """One nuclear species: label, spin quantum number, gyromagnetic ratio."""

    label: str
    spin: float                 # 1/2 or 1
    gamma: float                # rad s^-1 T^-1
    larmor_frequency: float = 0.0   # rad/s, gamma * static field

    def __post_init__(self):
        if self.spin not in (0.5, 1.0):
            raise ConfigError(
                f"species {self.label!r}: spin must be 1/2 or 1, got {self.spin}"
            )

    @property
    def multiplicity(self) -> int:
        return int(round(2 * self.spin)) + 1


@dataclass(frozen=True)
class SpinSite:
    """A spin at a fixed position (meters)."""

    species: SpinSpecies
    position: tuple[float, float, float]

    @property
    def xyz(self) -> np.ndarray:
        return np.array(self.position, dtype=float)


def _unit_axis(axis) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0 or not np.isfinite(n):
        raise GeometryError("field axis must be a nonzero finite 3-vector")
    return axis / n


def dipolar_coupling(pos_i, pos_j, gamma_i: float, gamma_j: float, field_axis) -> float:
    """Secular dipolar coupling (rad/s) for one spin pair.

    Parameters
    ----------
    pos_i, pos_j : array_like, shape (3,)
        Site positions in meters.
    gamma_i, gamma_j : float
        Gyromagnetic ratios in rad s^-1 T^-1.
    field_axis : array_like, shape (3,)
        Direction of the static field (defines z); need not be normalized.

    Returns
    -------
    float
        b_ij = (mu0/4pi) * gamma_i*gamma_j*hbar / r^3 * (1/2)(1 - 3 cos^2 theta),
        where theta is the angle between the internuclear vector and the
        field axis.  Signed; scales as r^-3.
    """
    axis = _unit_axis(field_axis)
    rvec = np.asarray(pos_j, dtype=float) - np.asarray(pos_i, dtype=float)
    r = float(np.linalg.norm(rvec))
    if r == 0.0:
        raise GeometryError("coincident spin positions give a degenerate coupling")
    cos_t = float(np.dot(rvec, axis)) / r
    return _MU0_OVER_4PI * gamma_i * gamma_j * _HBAR / r**3 * 0.5 * (1.0 - 3.0 * cos_t**2)


@dataclass(frozen=True)
class SpinSystem:
    """An ordered finite spin cluster with a precomputed coupling table.

    ``couplings[i, j]`` is the secular dipolar coupling b_ij in rad/s
    (symmetric, zero diagonal).  ``offset`` is the uniform resonance offset
    (rad/s) applied to the driven species.
    """

    sites: tuple[SpinSite, ...]
    field_axis: tuple[float, float, float]
    couplings: np.ndarray
    driven: str
    offset: float = 0.0
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        if not self.sites:
            raise ConfigError("spin system must contain at least one site")
        n = len(self.sites)
        c = np.asarray(self.couplings, dtype=float)
        if c.shape != (n, n):
            raise ConfigError(f"coupling table shape {c.shape} does not match {n} sites")
        if not np.all(np.isfinite(c)):
            raise ConfigError("coupling table contains non-finite entries")
        if np.max(np.abs(c - c.T)) != 0.0 or np.any(np.diag(c) != 0.0):
            raise ConfigError("coupling table must be symmetric with zero diagonal")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "couplings", c)
        object.__setattr__(self, "field_axis", tuple(_unit_axis(self.field_axis)))
        if self.driven not in {s.species.label for s in self.sites}:
            raise ConfigError(f"driven species {self.driven!r} has no sites")
        if self.dim > self.dim_cap:
            raise CapacityError(
                f"Hilbert dimension {self.dim} exceeds cap {self.dim_cap}"
            )

    @property
    def dim(self) -> int:
        d = 1
        for s in self.sites:
            d *= s.species.multiplicity
        return d

    @property
    def spins(self) -> tuple[float, ...]:
        return tuple(s.species.spin for s in self.sites)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.species.label for s in self.sites)

    def species_indices(self, label: str) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sites) if s.species.label == label)

    def species_labels(self) -> tuple[str, ...]:
        seen = []
        for s in self.sites:
            if s.species.label not in seen:
                seen.append(s.species.label)
        return tuple(seen)


def system_from_positions(
    positions,
    species: SpinSpecies | list[SpinSpecies],
    field_axis,
    *,
    driven: str | None = None,
    offset: float = 0.0,
    dim_cap: int = DEFAULT_DIM_CAP,
    min_distance: float = MIN_PAIR_DISTANCE,
    coupling_scale: float = 1.0,
) -> SpinSystem:
    """Build a SpinSystem directly from explicit positions.

    ``species`` is either one SpinSpecies applied to every position or a
    per-site list.  Mostly a convenience for tests and small studies; the
    config-driven path is :func:`build_cluster`.
    """
    positions = [tuple(float(x) for x in p) for p in positions]
    if isinstance(species, SpinSpecies):
        species = [species] * len(positions)
    if len(species) != len(positions):
        raise ConfigError("need one species per position")
    sites = tuple(SpinSite(sp, pos) for sp, pos in zip(species, positions))
    if driven is None:
        driven = sites[0].species.label
    axis = _unit_axis(field_axis)
    couplings = _coupling_table(sites, axis, min_distance) * coupling_scale
    return SpinSystem(sites, tuple(axis), couplings, driven, offset, dim_cap)


def _coupling_table(sites, axis, min_distance) -> np.ndarray:
    n = len(sites)
    table = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = np.linalg.norm(sites[j].xyz - sites[i].xyz)
            if d < min_distance:
                raise GeometryError(
                    f"sites {i} and {j} are {d:.3e} m apart, below the "
                    f"{min_distance:.3e} m minimum"
                )
            b = dipolar_coupling(
                sites[i].position, sites[j].position,
                sites[i].species.gamma, sites[j].species.gamma, axis,
            )
            table[i, j] = table[j, i] = b
    return table


# ---------------------------------------------------------------------------
# Geometry configuration files
# ---------------------------------------------------------------------------

GEOMETRY_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GeometryConfig:
    """Parsed geometry file: unit cell, species table, basis sites, field."""

    cell: np.ndarray                    # rows are cell vectors, meters
    species: dict[str, SpinSpecies]
    basis: tuple[tuple[str, tuple[float, float, float]], ...]  # label, fractional
    field_axis: tuple[float, float, float]
    static_field_tesla: float

    def site_position(self, frac, shift=(0, 0, 0)) -> np.ndarray:
        frac = np.asarray(frac, dtype=float) + np.asarray(shift, dtype=float)
        return frac @ self.cell


def _parse_spin(token: str) -> float:
    if token in ("1/2", "0.5"):
        return 0.5
    if token in ("1", "1.0"):
        return 1.0
    raise ConfigError(f"unsupported spin quantum number {token!r}")


def load_geometry(path) -> GeometryConfig:
    """Parse a geometry config file.

    Layout (whitespace-separated rows inside sections)::

        format_version = 1
        [cell]
        a_angstrom = 7.6 0.0 0.0
        b_angstrom = 0.0 7.6 0.0
        c_angstrom = 0.0 0.0 7.0
        [species]
        P 1/2 1.08394e8
        [sites]
        P 0.0 0.0 0.0
        [field]
        axis = 0 0 1
        static_tesla = 4.0

    Comments start with ``#``.  The ``format_version`` line must come first.
    """
    section = None
    cell_rows: dict[str, list[float]] = {}
    species: dict[str, SpinSpecies] = {}
    basis: list[tuple[str, tuple[float, float, float]]] = []
    field_axis = None
    static_field = None
    version = None

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if version is None:
                key, _, value = line.partition("=")
                if key.strip() != "format_version":
                    raise ConfigError(
                        f"{path}:{lineno}: first directive must be format_version"
                    )
                version = int(value.strip())
                if version != GEOMETRY_FORMAT_VERSION:
                    raise ConfigError(
                        f"{path}: unsupported geometry format_version {version}"
                    )
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                continue
            try:
                if section == "cell":
                    key, _, value = line.partition("=")
                    cell_rows[key.strip()] = [float(x) for x in value.split()]
                elif section == "species":
                    label, spin_tok, gamma_tok = line.split()
                    species[label] = SpinSpecies(label, _parse_spin(spin_tok), float(gamma_tok))
                elif section == "sites":
                    parts = line.split()
                    label, frac = parts[0], tuple(float(x) for x in parts[1:4])
                    if label not in species:
                        raise ConfigError(f"site references unknown species {label!r}")
                    basis.append((label, frac))
                elif section == "field":
                    key, _, value = line.partition("=")
                    key = key.strip()
                    if key == "axis":
                        field_axis = tuple(float(x) for x in value.split())
                    elif key == "static_tesla":
                        static_field = float(value)
                    else:
                        raise ConfigError(f"unknown field key {key!r}")
                else:
                    raise ConfigError(f"line outside any known section: {line!r}")
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from exc

    for key in ("a_angstrom", "b_angstrom", "c_angstrom"):
        if key not in cell_rows or len(cell_rows[key]) != 3:
            raise ConfigError(f"{path}: [cell] must define {key} as three numbers")
    if not species:
        raise ConfigError(f"{path}: no species defined")
    if not basis:
        raise ConfigError(f"{path}: no sites defined")
    if field_axis is None or static_field is None:
        raise ConfigError(f"{path}: [field] must define axis and static_tesla")

    cell = np.array(
        [cell_rows["a_angstrom"], cell_rows["b_angstrom"], cell_rows["c_angstrom"]],
        dtype=float,
    ) * 1e-10
    # attach Larmor frequencies now that the field strength is known
    species = {
        lab: SpinSpecies(lab, sp.spin, sp.gamma, sp.gamma * static_field)
        for lab, sp in species.items()
    }
    return GeometryConfig(cell, species, tuple(basis), field_axis, static_field)


def build_cluster(
    geometry: GeometryConfig,
    radius: float,
    *,
    driven: str = "P",
    include: set[str] | None = None,
    max_sites: int = DEFAULT_SITE_CAP,
    dim_cap: int = DEFAULT_DIM_CAP,
    center_index: int = 0,
    offset: float = 0.0,
    coupling_scale: float = 1.0,
    min_distance: float = MIN_PAIR_DISTANCE,
) -> SpinSystem:
    """Cut a finite cluster out of the periodic geometry.

    Keeps every active site within ``radius`` (meters) of a central driven
    spin (the ``center_index``-th driven basis site of the home cell), in a
    deterministic order: distance from the center first, then (x, y, z)
    lexicographically.  All pairwise couplings are precomputed.

    ``include`` restricts the active species (e.g. drop "H" to model ideal
    decoupling); the driven species is always kept.  ``coupling_scale``
    multiplies every b_ij, used by desk-scale presets to set the interaction
    scale without editing coordinates.
    """
    active = set(include) if include is not None else set(geometry.species)
    active.add(driven)
    unknown = active - set(geometry.species)
    if unknown:
        raise ConfigError(f"unknown species in include set: {sorted(unknown)}")
    if driven not in geometry.species:
        raise ConfigError(f"driven species {driven!r} not defined in geometry")

    driven_basis = [b for b in geometry.basis if b[0] == driven]
    if not driven_basis:
        raise ConfigError(f"geometry has no basis site of driven species {driven!r}")
    if not 0 <= center_index < len(driven_basis):
        raise ConfigError(f"center_index {center_index} out of range")
    center = geometry.site_position(driven_basis[center_index][1])

    # lattice translation range large enough to cover the radius
    heights = _cell_heights(geometry.cell)
    nmax = [int(math.ceil(radius / h)) + 1 for h in heights]

    found: list[tuple[float, float, float, float, str]] = []
    for na in range(-nmax[0], nmax[0] + 1):
        for nb in range(-nmax[1], nmax[1] + 1):
            for nc in range(-nmax[2], nmax[2] + 1):
                for label, frac in geometry.basis:
                    if label not in active:
                        continue
                    pos = geometry.site_position(frac, (na, nb, nc))
                    d = float(np.linalg.norm(pos - center))
                    if d <= radius + 1e-15:
                        found.append((d, pos[0], pos[1], pos[2], label))
    if not found:
        raise ConfigError("cluster radius selects no sites")
    found.sort()

    if len(found) > max_sites:
        raise CapacityError(
            f"cluster selects {len(found)} sites, above the cap of {max_sites}"
        )
    sites = tuple(
        SpinSite(geometry.species[label], (x, y, z)) for _, x, y, z, label in found
    )
    dim = 1
    for s in sites:
        dim *= s.species.multiplicity
    if dim > dim_cap:
        raise CapacityError(f"Hilbert dimension {dim} exceeds cap {dim_cap}")
    axis = _unit_axis(geometry.field_axis)
    couplings = _coupling_table(sites, axis, min_distance) * coupling_scale
    return SpinSystem(sites, tuple(axis), couplings, driven, offset, dim_cap)


def _cell_heights(cell: np.ndarray) -> list[float]:
    vol = abs(float(np.linalg.det(cell)))
    if vol == 0.0:
        raise ConfigError("unit cell vectors are linearly dependent")
    heights = []
    for k in range(3):
        cross = np.cross(cell[(k + 1) % 3], cell[(k + 2) % 3])
        heights.append(vol / float(np.linalg.norm(cross)))
    return heights


def interaction_scale(system: SpinSystem, species_pair: tuple[str, str]) -> float:
    """Typical interaction scale W (rad/s) for a species pair.

    Operational definition: for every site i of the first species, take the
    root-sum-square of its couplings to sites of the second species, then
    take the median over i.  Reduces to |b| for an isolated pair.
    """
    return float(np.median(local_interaction_scales(system, species_pair)))


def local_interaction_scales(system: SpinSystem, species_pair: tuple[str, str]) -> np.ndarray:
    """Per-site root-sum-square coupling to the partner species (rad/s)."""
    a, b = species_pair
    idx_a = system.species_indices(a)
    idx_b = system.species_indices(b)
    if not idx_a or not idx_b or (a == b and len(idx_a) < 2):
        raise SelectionError(f"no coupled pair of species ({a!r}, {b!r}) in system")
    vals = []
    for i in idx_a:
        partners = [j for j in idx_b if j != i]
        vals.append(math.sqrt(sum(system.couplings[i, j] ** 2 for j in partners)))
    return np.array(vals)
