"""Propagation of pulse programs: dense density-matrix path and a
matrix-free random-state (typicality) estimator.

The initial state is the deviation density matrix of the driven species,
rho0 = I_zT, normalized so that M_z(0) = Tr(rho0 I_zT)/Tr(I_zT^2) = 1.
Segment propagators are cached and reused; pulse propagators for any
transverse phase are derived from a single cached exponential by
conjugation with (diagonal) z rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigh_tridiagonal

from . import hamiltonian as ham
from .sequence import Delay, Pulse, PulseProgram, Sample
from .spinsys import CapacityError, ConfigError, SpinSystem

DENSE_CAP = 4096
UNITARITY_TOL = 1e-10
HERMITICITY_CHECK_TOL = 1e-8
MZ_BOUND_TOL = 1e-9
DEFAULT_REPLICAS = 8


class OperatorError(ValueError):
    """An operator fails a structural check (e.g. not Hermitian)."""


class EngineError(RuntimeError):
    """Internal inconsistency in the propagation machinery."""


class KrylovError(RuntimeError):
    """A Krylov exponential step failed to converge."""


def propagator(h, t: float) -> np.ndarray:
    """U = exp(-i H t) for Hermitian H via eigendecomposition.

    Raises OperatorError if H is not Hermitian to 1e-8 (max element), and
    ValueError for negative times (invert externally via U.conj().T).
    """
    if t < 0 or not math.isfinite(t):
        raise ValueError(f"propagation time must be >= 0, got {t}")
    h = h.toarray() if sparse.issparse(h) else np.asarray(h, dtype=complex)
    if ham.hermiticity_defect(h) > HERMITICITY_CHECK_TOL:
        raise OperatorError("propagator input is not Hermitian")
    if t == 0.0:
        return np.eye(h.shape[0], dtype=complex)
    evals, vecs = np.linalg.eigh(h)
    phases = np.exp(-1j * evals * t)
    return (vecs * phases) @ vecs.conj().T


class PropagatorCache:
    """Unitary segment cache with insert-time unitarity validation."""

    def __init__(self, tol: float = UNITARITY_TOL):
        self.tol = tol
        self._store: dict = {}

    def get_or_build(self, key, builder):
        entry = self._store.get(key)
        if entry is not None:
            stored_key, u = entry
            if stored_key != key:
                raise EngineError(f"propagator cache integrity violation for {key!r}")
            return u
        u = builder()
        defect = unitarity_defect(u)
        if defect > self.tol:
            raise EngineError(f"cached propagator fails unitarity ({defect:.2e}) for {key!r}")
        self._store[key] = (key, u)
        return u

    def __len__(self):
        return len(self._store)


def unitarity_defect(u: np.ndarray) -> float:
    d = u.shape[0]
    return float(np.max(np.abs(u.conj().T @ u - np.eye(d))))


@dataclass(frozen=True)
class InitialState:
    """Polarized-z deviation state of one species: rho0 = I_zT / norm."""

    species: str
    norm: float  # Tr(I_zT^2)


@dataclass(frozen=True)
class StaticField:
    """Constant rf term applied during every segment (cw decoupling)."""

    species: str
    amplitude: float          # rad/s
    phase: float              # rad; y by convention for decoupling


def cw_decoupling_field(system: SpinSystem, amplitude: float, species: str = "H",
                        phase: float = math.pi / 2) -> StaticField:
    """Validated cw decoupling field on a spectator species."""
    if not system.species_indices(species):
        raise ConfigError(f"cw decoupling references absent species {species!r}")
    if amplitude < 0:
        raise ConfigError("cw amplitude must be >= 0")
    return StaticField(species, float(amplitude), float(phase))


@dataclass
class EvolutionRecord:
    """Stroboscopic normalized z magnetization with metadata.

    ``cycles`` starts at 0 with M_z(0) = 1 by normalization; ``stderr`` is
    present only for the statistical estimator.  Exact records obey
    |M_z| <= 1 to numerical tolerance; statistical estimates obey the bound
    only within their reported error bars (the random-state estimator is
    unbiased but not pointwise bounded at finite dimension).
    """

    cycles: np.ndarray
    times: np.ndarray
    mz: np.ndarray
    stderr: np.ndarray | None
    meta: dict

    def __post_init__(self):
        self.cycles = np.asarray(self.cycles, dtype=int)
        self.times = np.asarray(self.times, dtype=float)
        self.mz = np.asarray(self.mz, dtype=float)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
        if not (len(self.cycles) == len(self.times) == len(self.mz)):
            raise ValueError("record columns must have equal length")
        if np.any(np.diff(self.cycles) < 0):
            raise ValueError("record samples must be ordered by cycle index")
        slack = 0.0 if self.stderr is None else 5.0 * self.stderr
        if np.max(np.abs(self.mz) - slack) > 1.0 + MZ_BOUND_TOL:
            raise ValueError("normalized |M_z| exceeds 1 beyond numerical tolerance")

    def __len__(self):
        return len(self.cycles)


RECORD_FORMAT_VERSION = 1


def record_to_csv_text(record: EvolutionRecord) -> str:
    lines = [f"# format_version={RECORD_FORMAT_VERSION}"]
    for key in sorted(record.meta):
        lines.append(f"# {key}={record.meta[key]}")
    has_err = record.stderr is not None
    lines.append("N,t_seconds,Mz,Mz_stderr" if has_err else "N,t_seconds,Mz")
    for i in range(len(record)):
        row = f"{int(record.cycles[i])},{float(record.times[i])!r},{float(record.mz[i])!r}"
        if has_err:
            row += f",{float(record.stderr[i])!r}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_record_csv(record: EvolutionRecord, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(record_to_csv_text(record))


def read_record_csv(path) -> EvolutionRecord:
    meta: dict = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append(line.split(","))
    if header is None or header[:3] != ["N", "t_seconds", "Mz"]:
        raise ConfigError(f"{path}: not an evolution-record CSV")
    if int(meta.get("format_version", -1)) != RECORD_FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported record format_version")
    has_err = len(header) == 4
    cycles = np.array([int(r[0]) for r in rows])
    times = np.array([float(r[1]) for r in rows])
    mz = np.array([float(r[2]) for r in rows])
    stderr = np.array([float(r[3]) for r in rows]) if has_err else None
    return EvolutionRecord(cycles, times, mz, stderr, meta)


class Evolver:
    """Builds the segment Hamiltonians for one cluster and runs programs.

    One Evolver may serve many programs on the same system (same term
    selection and cw field); segment propagators are shared across runs
    through the cache.
    """

    def __init__(
        self,
        system: SpinSystem,
        *,
        zeeman: bool = True,
        homonuclear: bool = True,
        hetero: tuple[str, ...] | None = None,
        static_rf: tuple[StaticField, ...] = (),
        dense_cap: int = DENSE_CAP,
    ):
        self.system = system
        self.ops = ham.spin_operators(system.spins)
        self.dim = self.ops.dim
        self.dense_cap = dense_cap
        self.terms = ham.build_internal(
            system, zeeman=zeeman, homonuclear=homonuclear, hetero=hetero
        )
        h = self.terms.total
        for f in static_rf:
            h = h + ham.build_rf(system, f.phase, f.amplitude, f.species).matrix
        self.h_static = h.tocsr()
        self.static_rf = tuple(static_rf)
        self._static_species = {f.species for f in static_rf if f.amplitude != 0.0}
        self._fingerprint = ham.matrix_fingerprint(self.h_static)

        driven_idx = system.species_indices(system.driven)
        self.mz_driven = self.ops.total_z_diagonal(driven_idx)
        self.norm = float(np.sum(self.mz_driven**2))
        if self.norm == 0.0:
            raise ConfigError("driven species carries no z polarization")
        self.initial_state = InitialState(system.driven, self.norm)

        self._cache = PropagatorCache()
        self._eig_cache: dict = {}
        self._sparse_cache: dict = {}

    # -- dense segment unitaries ------------------------------------------

    def _require_dense(self):
        if self.dim > self.dense_cap:
            raise CapacityError(
                f"dimension {self.dim} exceeds dense cap {self.dense_cap}; "
                "use the typicality path"
            )

    def _eig(self, key, matrix_builder):
        if key not in self._eig_cache:
            h = matrix_builder()
            if ham.hermiticity_defect(h) > HERMITICITY_CHECK_TOL:
                raise OperatorError(f"segment Hamiltonian {key!r} is not Hermitian")
            self._eig_cache[key] = np.linalg.eigh(h)
        return self._eig_cache[key]

    def _z_phase_vector(self, species: str, phase: float) -> np.ndarray:
        mz = self.ops.total_z_diagonal(self.system.species_indices(species))
        return np.exp(-1j * phase * mz)

    def _delay_unitary(self, duration: float) -> np.ndarray:
        key = ("delay", self._fingerprint, float(duration))

        def build():
            if duration == 0.0:
                return np.eye(self.dim, dtype=complex)
            evals, vecs = self._eig(("static",), lambda: self.h_static.toarray())
            return (vecs * np.exp(-1j * evals * duration)) @ vecs.conj().T

        return self._cache.get_or_build(key, build)

    def _ideal_pulse_unitary(self, pulse: Pulse) -> np.ndarray:
        key = ("ideal", pulse.species, float(pulse.angle), float(pulse.phase))

        def build():
            base = self._cache.get_or_build(
                ("ideal-base", pulse.species, float(pulse.angle)),
                lambda: self._ideal_pulse_base(pulse.species, pulse.angle),
            )
            if pulse.phase == 0.0:
                return base
            dvec = self._z_phase_vector(pulse.species, pulse.phase)
            return (dvec[:, None] * base) * dvec.conj()[None, :]

        return self._cache.get_or_build(key, build)

    def _ideal_pulse_base(self, species: str, angle: float) -> np.ndarray:
        # exact product of per-site rotations about x: exp(+i angle I_x_i)
        idx = set(self.system.species_indices(species))
        u = np.eye(1, dtype=complex)
        for i, d in enumerate(self.ops.dims):
            if i in idx:
                factor = _site_rotation(self.system.spins[i], angle, 0.0)
            else:
                factor = np.eye(d, dtype=complex)
            u = np.kron(u, factor)
        return u

    def _finite_pulse_unitary(self, pulse: Pulse) -> np.ndarray:
        key = (
            "pulse", self._fingerprint, pulse.species,
            float(pulse.amplitude), float(pulse.duration), float(pulse.phase),
        )

        def build():
            if pulse.species in self._static_species:
                # z-rotation trick invalid when a static field drives the
                # same species; exponentiate the segment directly
                rf = ham.build_rf(self.system, pulse.phase, pulse.amplitude, pulse.species)
                return propagator(self.h_static + rf.matrix, pulse.duration)
            base_key = ("pulse-base", self._fingerprint, pulse.species, float(pulse.amplitude))
            evals, vecs = self._eig(
                base_key,
                lambda: (
                    self.h_static
                    + ham.build_rf(self.system, 0.0, pulse.amplitude, pulse.species).matrix
                ).toarray(),
            )
            ux = (vecs * np.exp(-1j * evals * pulse.duration)) @ vecs.conj().T
            if pulse.phase == 0.0:
                return ux
            dvec = self._z_phase_vector(pulse.species, pulse.phase)
            return (dvec[:, None] * ux) * dvec.conj()[None, :]

        return self._cache.get_or_build(key, build)

    def segment_unitary(self, event) -> np.ndarray:
        """Dense unitary for one Delay or Pulse event."""
        self._require_dense()
        if isinstance(event, Delay):
            return self._delay_unitary(event.duration)
        if isinstance(event, Pulse):
            if event.is_ideal:
                return self._ideal_pulse_unitary(event)
            return self._finite_pulse_unitary(event)
        raise ConfigError(f"no unitary for event {event!r}")

    # -- program execution -------------------------------------------------

    def run_dense(self, program: PulseProgram, *, meta: dict | None = None) -> EvolutionRecord:
        """Evolve the deviation density matrix and sample M_z at markers."""
        self._require_dense()
        rho = np.diag(self.mz_driven).astype(complex)
        cycles, times, values = [0], [0.0], [1.0]
        t = 0.0
        for event in program.events:
            if isinstance(event, Sample):
                val = float(np.real(np.sum(np.diagonal(rho) * self.mz_driven)) / self.norm)
                cycles.append(event.index)
                times.append(t)
                values.append(val)
                continue
            u = self.segment_unitary(event)
            rho = u @ rho @ u.conj().T
            t += getattr(event, "duration", 0.0)
        record_meta = self._base_meta(program, "dense")
        if meta:
            record_meta.update(meta)
        return EvolutionRecord(np.array(cycles), np.array(times), np.array(values), None, record_meta)

    def run_typicality(
        self,
        program: PulseProgram,
        *,
        replicas: int = DEFAULT_REPLICAS,
        seed: int = 0,
        meta: dict | None = None,
    ) -> EvolutionRecord:
        """Random-state estimate of the dense record, with standard errors.

        Draws ``replicas`` normalized complex Gaussian states |psi>, forms
        |phi> = I_zT |psi>, co-propagates both, and records
        <psi|I_zT|phi> / <phi0|phi0> at each sample marker.  Per-replica
        seeds derive deterministically from ``seed``.
        """
        if replicas < 2:
            raise ConfigError("typicality needs at least 2 replicas to estimate error")
        per_replica = []
        cycles, times = [0], [0.0]
        for r in range(replicas):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(r,)))
            psi = rng.standard_normal(self.dim) + 1j * rng.standard_normal(self.dim)
            psi /= np.linalg.norm(psi)
            phi = self.mz_driven * psi
            norm0 = float(np.real(np.vdot(phi, phi)))
            vals = [1.0]
            t = 0.0
            first = r == 0
            for event in program.events:
                if isinstance(event, Sample):
                    vals.append(float(np.real(np.vdot(psi, self.mz_driven * phi)) / norm0))
                    if first:
                        cycles.append(event.index)
                        times.append(t)
                    continue
                psi = self._apply_segment(event, psi)
                phi = self._apply_segment(event, phi)
                t += getattr(event, "duration", 0.0)
            per_replica.append(vals)
        arr = np.array(per_replica)
        mean = arr.mean(axis=0)
        stderr = arr.std(axis=0, ddof=1) / math.sqrt(replicas)
        # clip the guaranteed exact first point against roundoff
        mean[0], stderr[0] = 1.0, 0.0
        record_meta = self._base_meta(program, "typicality")
        record_meta.update({"seed": seed, "replicas": replicas, "rng": "numpy-pcg64-seedseq"})
        if meta:
            record_meta.update(meta)
        return EvolutionRecord(np.array(cycles), np.array(times), mean, stderr, record_meta)

    def _base_meta(self, program: PulseProgram, method: str) -> dict:
        return {
            "kind": program.kind,
            "mode": program.mode,
            "method": method,
            "floquet_period": program.floquet_period,
            "dim": self.dim,
            "terms": "+".join(self.terms.labels),
        }

    # -- state-vector segment application ----------------------------------

    def _apply_segment(self, event, state: np.ndarray) -> np.ndarray:
        if self.dim <= self.dense_cap:
            return self.segment_unitary(event) @ state
        if isinstance(event, Delay):
            if event.duration == 0.0:
                return state
            return self._krylov_expmv(self.h_static, event.duration, state)
        if isinstance(event, Pulse):
            if event.is_ideal:
                return self._apply_ideal_pulse(event, state)
            if event.species in self._static_species:
                rf = ham.build_rf(self.system, event.phase, event.amplitude, event.species)
                return self._krylov_expmv(self.h_static + rf.matrix, event.duration, state)
            key = ("pulse-h", self._fingerprint, event.species, float(event.amplitude))
            if key not in self._sparse_cache:
                rf = ham.build_rf(self.system, 0.0, event.amplitude, event.species)
                self._sparse_cache[key] = (self.h_static + rf.matrix).tocsr()
            hbase = self._sparse_cache[key]
            if event.phase == 0.0:
                return self._krylov_expmv(hbase, event.duration, state)
            dvec = self._z_phase_vector(event.species, event.phase)
            return dvec * self._krylov_expmv(hbase, event.duration, dvec.conj() * state)
        raise ConfigError(f"cannot apply event {event!r}")

    def _apply_ideal_pulse(self, pulse: Pulse, state: np.ndarray) -> np.ndarray:
        dims = self.ops.dims
        idx = self.system.species_indices(pulse.species)
        out = state
        for i in idx:
            u = _site_rotation(self.system.spins[i], pulse.angle, pulse.phase)
            pre = int(np.prod(dims[:i])) if i else 1
            post = int(np.prod(dims[i + 1:])) if i + 1 < len(dims) else 1
            out = out.reshape(pre, dims[i], post)
            out = np.einsum("ij,ajb->aib", u, out).reshape(-1)
        return out

    def _krylov_expmv(self, h: sparse.spmatrix, t: float, v: np.ndarray) -> np.ndarray:
        hnorm = _sparse_inf_norm(h)
        return krylov_expmv(h, t, v, hnorm=hnorm)


def _site_rotation(spin: float, angle: float, phase: float) -> np.ndarray:
    """exp(+i angle I_phase) for a single site (the -w1 I_phi convention)."""
    sm = ham.small_spin_matrices(spin)
    iphi = math.cos(phase) * sm["x"] + math.sin(phase) * sm["y"]
    if spin == 0.5:
        return math.cos(angle / 2.0) * np.eye(2) + 2j * math.sin(angle / 2.0) * iphi
    evals, vecs = np.linalg.eigh(iphi)
    return (vecs * np.exp(1j * angle * evals)) @ vecs.conj().T


def _sparse_inf_norm(h) -> float:
    return float(np.max(np.abs(h).sum(axis=1)))


def krylov_expmv(
    h: sparse.spmatrix,
    t: float,
    v: np.ndarray,
    *,
    tol: float = 1e-12,
    max_krylov: int = 64,
    hnorm: float | None = None,
) -> np.ndarray:
    """exp(-i h t) v for Hermitian sparse h via Lanczos with substepping.

    The time interval is split so each substep satisfies |h| dt <= ~20;
    within a substep the Lanczos subspace is grown until the standard
    last-coefficient error estimate drops below ``tol`` (relative).
    Raises KrylovError with diagnostics when the subspace cap is reached.
    """
    if t == 0.0 or np.linalg.norm(v) == 0.0:
        return v.copy()
    if hnorm is None:
        hnorm = _sparse_inf_norm(h)
    nsub = max(1, int(math.ceil(abs(t) * hnorm / 20.0)))
    dt = t / nsub
    out = v
    for _ in range(nsub):
        out = _lanczos_step(h, dt, out, tol, max_krylov)
    return out


def _lanczos_step(h, dt, v, tol, max_krylov) -> np.ndarray:
    beta0 = np.linalg.norm(v)
    basis = [v / beta0]
    alphas: list[float] = []
    betas: list[float] = []
    for j in range(max_krylov):
        w = h @ basis[j]
        alpha = float(np.real(np.vdot(basis[j], w)))
        w = w - alpha * basis[j]
        if j > 0:
            w = w - betas[-1] * basis[j - 1]
        # full reorthogonalization: cheap at these subspace sizes
        for b in basis:
            w = w - np.vdot(b, w) * b
        alphas.append(alpha)
        beta = float(np.linalg.norm(w))
        coeff = _tridiag_expm_col(alphas, betas, dt)
        err = beta * abs(coeff[-1]) * abs(dt)
        if beta <= tol * beta0 or err <= tol:
            return beta0 * np.ascontiguousarray(np.column_stack(basis) @ coeff)
        betas.append(beta)
        basis.append(w / beta)
    raise KrylovError(
        f"Lanczos exponential did not converge: subspace {max_krylov}, "
        f"|h|*dt = {_sparse_inf_norm(h) * abs(dt):.3g}; reduce the step size"
    )


def _tridiag_expm_col(alphas, betas, dt) -> np.ndarray:
    """First column of exp(-i dt T) for the real tridiagonal Lanczos matrix."""
    a = np.asarray(alphas, dtype=float)
    if len(a) == 1:
        return np.array([np.exp(-1j * dt * a[0])])
    b = np.asarray(betas[: len(a) - 1], dtype=float)
    evals, vecs = eigh_tridiagonal(a, b)
    return vecs @ (np.exp(-1j * dt * evals) * vecs[0, :].conj())


def run_program_dense(
    system: SpinSystem,
    program: PulseProgram,
    *,
    meta: dict | None = None,
    **evolver_kwargs,
) -> EvolutionRecord:
    """One-shot dense run (constructs a throwaway Evolver)."""
    return Evolver(system, **evolver_kwargs).run_dense(program, meta=meta)


def run_program_typicality(
    system: SpinSystem,
    program: PulseProgram,
    *,
    replicas: int = DEFAULT_REPLICAS,
    seed: int = 0,
    meta: dict | None = None,
    **evolver_kwargs,
) -> EvolutionRecord:
    """One-shot typicality run (constructs a throwaway Evolver)."""
    return Evolver(system, **evolver_kwargs).run_typicality(
        program, replicas=replicas, seed=seed, meta=meta
    )
