"""Spin operators and the internal/rf Hamiltonian terms of a cluster.

All operators are built in the site order of the SpinSystem via Kronecker
embedding and returned as sparse CSR matrices in angular-frequency units
(hbar = 1).  Dense copies are only materialized where an eigendecomposition
is actually needed (see engine).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .spinsys import ConfigError, SpinSystem

HERMITICITY_TOL = 1e-12


class UnsupportedSpinError(ValueError):
    """Spin quantum number outside the supported set {1/2, 1}."""


@lru_cache(maxsize=None)
def small_spin_matrices(spin: float) -> dict[str, np.ndarray]:
    """Single-site angular momentum matrices I_x, I_y, I_z for one spin."""
    if spin == 0.5:
        ix = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
        iy = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
        iz = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
    elif spin == 1.0:
        s = 1.0 / math.sqrt(2.0)
        ix = s * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
        iy = s * np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex)
        iz = np.array([[1, 0, 0], [0, 0, 0], [0, 0, -1]], dtype=complex)
    else:
        raise UnsupportedSpinError(f"unsupported spin quantum number {spin}")
    for m in (ix, iy, iz):
        m.setflags(write=False)
    return {"x": ix, "y": iy, "z": iz}


@dataclass(frozen=True)
class SpinOperatorSet:
    """Embedded spin operators for an ordered list of spins.

    Operators are generated on demand (sparse), so the set itself stays
    cheap even for large product dimensions.
    """

    spins: tuple[float, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(round(2 * s)) + 1 for s in self.spins)

    @property
    def dim(self) -> int:
        d = 1
        for m in self.dims:
            d *= m
        return d

    def site_operator(self, site: int, axis: str) -> sparse.csr_matrix:
        """I_axis of one site embedded in the full Hilbert space."""
        return self._embed({site: small_spin_matrices(self.spins[site])[axis]})

    def total_operator(self, axis: str, sites) -> sparse.csr_matrix:
        """Sum of I_axis over the given site indices."""
        sites = tuple(sites)
        if not sites:
            raise ConfigError("total_operator needs at least one site")
        out = self.site_operator(sites[0], axis)
        for i in sites[1:]:
            out = out + self.site_operator(i, axis)
        return out.tocsr()

    def total_z_diagonal(self, sites) -> np.ndarray:
        """Diagonal of the total I_z over ``sites`` as a real vector."""
        sites = set(sites)
        diag = np.zeros(1)
        for i, d in enumerate(self.dims):
            m = np.real(np.diag(small_spin_matrices(self.spins[i])["z"]))
            if i not in sites:
                m = np.zeros(d)
            diag = (diag[:, None] + m[None, :]).ravel()
        return diag

    def _embed(self, factors: dict[int, np.ndarray]) -> sparse.csr_matrix:
        op = sparse.identity(1, dtype=complex, format="csr")
        for i, d in enumerate(self.dims):
            f = factors.get(i)
            block = sparse.csr_matrix(f) if f is not None else sparse.identity(d, dtype=complex, format="csr")
            op = sparse.kron(op, block, format="csr")
        return op

    def pair_operator(self, i: int, j: int, axis: str) -> sparse.csr_matrix:
        mi = small_spin_matrices(self.spins[i])[axis]
        mj = small_spin_matrices(self.spins[j])[axis]
        return self._embed({i: mi, j: mj})


def spin_operators(spins) -> SpinOperatorSet:
    """Validate spins and return the operator set for this site order."""
    spins = tuple(float(s) for s in spins)
    for s in spins:
        small_spin_matrices(s)  # raises UnsupportedSpinError early
    return SpinOperatorSet(spins)


def _canonical(m: sparse.spmatrix) -> sparse.csr_matrix:
    m = m.tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    m.sort_indices()
    return m


def matrix_fingerprint(m: sparse.spmatrix) -> str:
    m = _canonical(m)
    h = hashlib.sha256()
    h.update(repr(m.shape).encode())
    h.update(m.indptr.tobytes())
    h.update(m.indices.tobytes())
    h.update(m.data.tobytes())
    return h.hexdigest()


def hermiticity_defect(m) -> float:
    """Max absolute element of M - M^dagger."""
    if sparse.issparse(m):
        delta = (m - m.conjugate().transpose()).tocoo()
        return float(np.max(np.abs(delta.data))) if delta.nnz else 0.0
    m = np.asarray(m)
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


@dataclass(frozen=True)
class HamiltonianTerms:
    """Internal Hamiltonian split into its physical parts (all CSR, rad/s)."""

    zeeman: sparse.csr_matrix | None
    homonuclear: sparse.csr_matrix | None
    hetero: dict[str, sparse.csr_matrix]
    total: sparse.csr_matrix
    labels: tuple[str, ...]
    fingerprint: str

    def total_dense(self) -> np.ndarray:
        return self.total.toarray()


def build_internal(
    system: SpinSystem,
    *,
    zeeman: bool = True,
    homonuclear: bool = True,
    hetero: tuple[str, ...] | None = None,
) -> HamiltonianTerms:
    """Assemble the secular internal Hamiltonian of the driven species.

    The homonuclear part between driven spins keeps the flip-flop terms,
    3*Iz_i*Iz_j - I_i.I_j; couplings of the driven species to every other
    species are Ising-only, 2*Iz_i*Sz_j.  Terms not involving the driven
    species are omitted.  ``hetero=None`` activates every non-driven
    species present; passing labels explicitly raises ConfigError when a
    label has no sites.
    """
    ops = spin_operators(system.spins)
    driven_idx = system.species_indices(system.driven)
    labels: list[str] = []
    d = ops.dim

    zee = None
    if zeeman:
        diag = system.offset * ops.total_z_diagonal(driven_idx)
        zee = sparse.diags(diag.astype(complex), format="csr")
        labels.append("zeeman")

    homo = None
    if homonuclear:
        homo = _homonuclear_term(system, ops, driven_idx)
        labels.append(f"{system.driven},{system.driven}")

    if hetero is None:
        others = tuple(lab for lab in system.species_labels() if lab != system.driven)
    else:
        others = tuple(hetero)
    het: dict[str, sparse.csr_matrix] = {}
    for lab in others:
        other_idx = system.species_indices(lab)
        if not other_idx:
            raise ConfigError(f"heteronuclear flag references absent species {lab!r}")
        diag = np.zeros(d)
        for i in driven_idx:
            zi = ops.total_z_diagonal([i])
            for j in other_idx:
                zj = ops.total_z_diagonal([j])
                diag += 2.0 * system.couplings[i, j] * zi * zj
        het[lab] = sparse.diags(diag.astype(complex), format="csr")
        labels.append(f"{system.driven},{lab}")

    total = sparse.csr_matrix((d, d), dtype=complex)
    for part in [zee, homo, *het.values()]:
        if part is not None:
            total = total + part
    total = _canonical(total)
    return HamiltonianTerms(zee, homo, het, total, tuple(labels), matrix_fingerprint(total))


def _homonuclear_term(system, ops, idx, axis: str = "z") -> sparse.csr_matrix:
    """sum_{i<j} b_ij (3 I_axis_i I_axis_j - I_i . I_j) over the given sites."""
    d = ops.dim
    out = sparse.csr_matrix((d, d), dtype=complex)
    for a, i in enumerate(idx):
        for j in idx[a + 1:]:
            b = system.couplings[i, j]
            if b == 0.0:
                continue
            term = sparse.csr_matrix((d, d), dtype=complex)
            for ax in ("x", "y", "z"):
                coeff = 2.0 if ax == axis else -1.0
                term = term + coeff * ops.pair_operator(i, j, ax)
            out = out + b * term
    return _canonical(out)


def dipolar_variant(system: SpinSystem, axis: str) -> sparse.csr_matrix:
    """Homonuclear dipolar term of the driven species referred to one axis.

    For axis phi in {x, y, z}: sum_{i<j} b_ij (3 I_phi_i I_phi_j - I_i.I_j).
    The three variants sum to zero as an operator identity.
    """
    if axis not in ("x", "y", "z"):
        raise ConfigError(f"axis must be x, y or z, got {axis!r}")
    idx = system.species_indices(system.driven)
    if len(idx) < 2:
        raise ConfigError("dipolar variant needs at least two driven sites")
    ops = spin_operators(system.spins)
    return _homonuclear_term(system, ops, idx, axis)


@dataclass(frozen=True)
class RfTerm:
    """Transverse rf drive term -amplitude * I_phase on one species."""

    phase: float            # radians in the transverse plane
    amplitude: float        # rad/s
    species: str
    matrix: sparse.csr_matrix


def build_rf(system: SpinSystem, phase: float, amplitude: float, species: str) -> RfTerm:
    """Rf Hamiltonian -w1 (cos(phase) I_xT + sin(phase) I_yT) on ``species``."""
    idx = system.species_indices(species)
    if not idx:
        raise ConfigError(f"rf term references absent species {species!r}")
    ops = spin_operators(system.spins)
    m = -amplitude * (
        math.cos(phase) * ops.total_operator("x", idx)
        + math.sin(phase) * ops.total_operator("y", idx)
    )
    return RfTerm(phase, amplitude, species, _canonical(m))


_PHASE_AXIS = {"x": "x", "-x": "x", "y": "y", "-y": "y"}


def toggling_average(system: SpinSystem, pulse_phases) -> sparse.csr_matrix:
    """Zeroth-order pulse-window average for a train of pi pulses.

    During a pi pulse of transverse phase phi, the homonuclear coupling acts
    as -1/2 H_phiphi for the pulse duration.  This returns the plain
    arithmetic mean of -1/2 H_phiphi over the listed pulses (the delay
    intervals are handled exactly by the engine, not here), e.g. the pair
    (x, y) averages to +1/4 H_zz.
    """
    phases = [str(p).lower() for p in pulse_phases]
    if not phases:
        raise ConfigError("pulse phase list must not be empty")
    for p in phases:
        if p not in _PHASE_AXIS:
            raise ConfigError(f"pulse phase must be one of x, y, -x, -y, got {p!r}")
    d = spin_operators(system.spins).dim
    acc = sparse.csr_matrix((d, d), dtype=complex)
    for p in phases:
        acc = acc + (-0.5) * dipolar_variant(system, _PHASE_AXIS[p])
    return _canonical(acc * (1.0 / len(phases)))


def write_dense_matrix(m, path) -> None:
    """Debug dump: row-major dense text, one row per line, entries "re,im"."""
    arr = m.toarray() if sparse.issparse(m) else np.asarray(m, dtype=complex)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# dense complex matrix v1 shape={arr.shape[0]}x{arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(f"{float(v.real)!r},{float(v.imag)!r}" for v in row))
            fh.write("\n")


def read_dense_matrix(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("# dense complex matrix v1"):
            raise ConfigError(f"{path}: not a v1 dense matrix dump")
        rows = []
        for line in fh:
            pairs = [tok.split(",") for tok in line.split()]
            rows.append([complex(float(re), float(im)) for re, im in pairs])
    return np.array(rows, dtype=complex)
