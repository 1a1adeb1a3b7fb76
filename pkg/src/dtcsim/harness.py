"""Experiment orchestration: config files, presets, sweeps, and file output.

A run is driven by an ExperimentConfig (INI-style file with sections),
executes one or more simulation points (serially or in a process pool),
and writes records, spectra, fits and a manifest into the output
directory.  Per-point seeds derive deterministically from the master seed
and the point index, so parallel and serial execution produce
byte-identical files; wall-clock timestamps live only in the manifest.
"""

from __future__ import annotations

import configparser
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, engine, sequence, spinsys

CONFIG_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1
PI = math.pi

PRESET_NAMES = ("fig1", "fig2", "fig3", "fig4")


class BudgetError(RuntimeError):
    """Estimated runtime exceeds the per-point budget."""


def _cfg_error(section: str, key: str, msg: str):
    raise spinsys.ConfigError(f"{section}.{key}: {msg}")


@dataclass
class ExperimentConfig:
    """Resolved experiment description (all frequencies in rad/s internally).

    Angle lists are given in units of pi in files and converted here; tau
    values are seconds.
    """

    # cluster
    geometry: str = ""
    radius: float = 1e-9
    max_sites: int = 16
    dim_cap: int = spinsys.DEFAULT_DIM_CAP
    driven: str = "P"
    h1: str = "off"                  # off (drop couplings) | on | cw
    include_n: bool = False
    coupling_scale: float = 1.0
    offset_hz: float = 0.0
    center_index: int = 0
    # drive
    mode: str = "finite"
    omega1_hz: float = 68e3
    t_p: float = 7.5e-6
    thetas_pi: tuple[float, ...] = (0.995,)
    taus: tuple[float, ...] = (12.5e-6,)
    n_cycles: int = 128
    # echo / phase pair specifics
    echo_forward: tuple[int, ...] = (2, 6, 10)
    echo_reverse_max: int = 0        # 0 -> 2*N + 2
    pairs: tuple[str, ...] = ("xx", "yy", "xy")
    # engine
    method: str = "dense"
    replicas: int = engine.DEFAULT_REPLICAS
    seed: int = 0
    cw_hz: float = 18e3
    dense_cap: int = engine.DENSE_CAP
    # analysis
    window_start: int = 0
    window_length: int = 0           # 0 -> longest even window
    cutoff: float = 0.1
    # output / execution
    out_dir: str = "out"
    workers: int = 1
    budget_s: float = 600.0
    force: bool = False
    preset: str = "custom"

    @property
    def omega1(self) -> float:
        return 2 * PI * self.omega1_hz

    @property
    def offset(self) -> float:
        return 2 * PI * self.offset_hz

    @property
    def thetas(self) -> tuple[float, ...]:
        return tuple(t * PI for t in self.thetas_pi)

    def pulse_params(self) -> sequence.PulseParams:
        return sequence.PulseParams(
            amplitude=self.omega1, fixed_duration=self.t_p, species=self.driven
        )

    def validate(self):
        if not self.geometry:
            _cfg_error("cluster", "geometry", "a geometry file is required")
        if self.mode not in ("delta", "finite"):
            _cfg_error("drive", "mode", f"must be delta or finite, got {self.mode!r}")
        if self.h1 not in ("off", "on", "cw"):
            _cfg_error("engine", "h1", f"must be off, on or cw, got {self.h1!r}")
        if self.method not in ("dense", "typicality"):
            _cfg_error("engine", "method", f"must be dense or typicality, got {self.method!r}")
        if not self.taus:
            _cfg_error("drive", "taus_s", "tau list must not be empty")
        if not self.thetas_pi:
            _cfg_error("drive", "thetas_pi", "theta list must not be empty")
        for name, value in (
            ("drive.omega1_hz", self.omega1_hz),
            ("drive.t_p_s", self.t_p),
            ("cluster.radius_m", self.radius),
            ("cluster.coupling_scale", self.coupling_scale),
        ):
            if value <= 0:
                section, key = name.split(".")
                _cfg_error(section, key, f"must be positive, got {value}")
        for t in self.taus:
            if t < 0:
                _cfg_error("drive", "taus_s", f"tau must be >= 0, got {t}")
        if self.n_cycles < 1:
            _cfg_error("drive", "n_cycles", "must be >= 1")
        if self.replicas < 2 and self.method == "typicality":
            _cfg_error("engine", "replicas", "typicality needs >= 2 replicas")
        return self


def _parse_float_list(text: str, section: str, key: str) -> tuple[float, ...]:
    text = text.strip()
    if text.startswith("lin:"):
        try:
            start, stop, count = text[4:].split(":")
            return tuple(np.linspace(float(start), float(stop), int(count)))
        except ValueError as exc:
            _cfg_error(section, key, f"bad linspace spec {text!r}: {exc}")
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        _cfg_error(section, key, f"bad number list {text!r}: {exc}")


_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse an INI experiment config; relative geometry paths resolve
    against the config file's directory."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise spinsys.ConfigError(f"cannot read config file {path}")
    if parser.has_option("format", "version"):
        version = parser.getint("format", "version")
        if version != CONFIG_FORMAT_VERSION:
            raise spinsys.ConfigError(f"{path}: unsupported config version {version}")
    cfg = ExperimentConfig()
    base = Path(path).parent

    def get(section, key, cast, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            _cfg_error(section, key, f"cannot parse {raw!r}: {exc}")

    def as_bool(raw):
        if raw.strip().lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return _BOOL[raw.strip().lower()]

    geometry = get("cluster", "geometry", str, cfg.geometry)
    if geometry:
        geometry = str((base / geometry).resolve()) if not os.path.isabs(geometry) else geometry
    cfg = replace(
        cfg,
        geometry=geometry,
        radius=get("cluster", "radius_m", float, cfg.radius),
        max_sites=get("cluster", "max_sites", int, cfg.max_sites),
        dim_cap=get("cluster", "dim_cap", int, cfg.dim_cap),
        driven=get("cluster", "driven", str, cfg.driven),
        h1=get("cluster", "h1", str, get("engine", "h1", str, cfg.h1)),
        include_n=get("cluster", "include_n", as_bool, cfg.include_n),
        coupling_scale=get("cluster", "coupling_scale", float, cfg.coupling_scale),
        offset_hz=get("cluster", "offset_hz", float, cfg.offset_hz),
        center_index=get("cluster", "center_index", int, cfg.center_index),
        mode=get("drive", "mode", str, cfg.mode),
        omega1_hz=get("drive", "omega1_hz", float, cfg.omega1_hz),
        t_p=get("drive", "t_p_s", float, cfg.t_p),
        thetas_pi=get("drive", "thetas_pi", lambda s: _parse_float_list(s, "drive", "thetas_pi"), cfg.thetas_pi),
        taus=get("drive", "taus_s", lambda s: _parse_float_list(s, "drive", "taus_s"), cfg.taus),
        n_cycles=get("drive", "n_cycles", int, cfg.n_cycles),
        echo_forward=get("drive", "echo_forward", lambda s: tuple(int(x) for x in s.replace(",", " ").split()), cfg.echo_forward),
        echo_reverse_max=get("drive", "echo_reverse_max", int, cfg.echo_reverse_max),
        pairs=get("drive", "pairs", lambda s: tuple(s.replace(",", " ").lower().split()), cfg.pairs),
        method=get("engine", "method", str, cfg.method),
        replicas=get("engine", "replicas", int, cfg.replicas),
        seed=get("engine", "seed", int, cfg.seed),
        cw_hz=get("engine", "cw_hz", float, cfg.cw_hz),
        dense_cap=get("engine", "dense_cap", int, cfg.dense_cap),
        window_start=get("analysis", "window_start", int, cfg.window_start),
        window_length=get("analysis", "window_length", int, cfg.window_length),
        cutoff=get("analysis", "cutoff", float, cfg.cutoff),
        out_dir=get("output", "directory", str, cfg.out_dir),
        workers=get("output", "workers", int, cfg.workers),
        budget_s=get("output", "budget_s", float, cfg.budget_s),
    )
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg = replace(cfg, **{key: value})
    return cfg.validate()


def preset_config(name: str, overrides: dict | None = None) -> ExperimentConfig:
    """Load one of the packaged experiment presets."""
    if name not in PRESET_NAMES + ("envelope",):
        raise spinsys.ConfigError(
            f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}"
        )
    ref = resources.files("dtcsim") / "presets" / f"{name}.cfg"
    with resources.as_file(ref) as path:
        cfg = load_config(path, overrides)
    return replace(cfg, preset=name)


def build_system(cfg: ExperimentConfig) -> spinsys.SpinSystem:
    geometry = spinsys.load_geometry(cfg.geometry)
    include = {cfg.driven}
    if cfg.h1 != "off" and "H" in geometry.species:
        include.add("H")
    if cfg.include_n and "N" in geometry.species:
        include.add("N")
    return spinsys.build_cluster(
        geometry,
        cfg.radius,
        driven=cfg.driven,
        include=include,
        max_sites=cfg.max_sites,
        dim_cap=cfg.dim_cap,
        center_index=cfg.center_index,
        offset=cfg.offset,
        coupling_scale=cfg.coupling_scale,
    )


def make_evolver(cfg: ExperimentConfig, system: spinsys.SpinSystem) -> engine.Evolver:
    static = ()
    if cfg.h1 == "cw":
        static = (engine.cw_decoupling_field(system, 2 * PI * cfg.cw_hz),)
    return engine.Evolver(system, static_rf=static, dense_cap=cfg.dense_cap)


def point_seed(master_seed: int, index: int) -> int:
    """Deterministic, order-independent per-point seed."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def estimate_point_seconds(dim: int, segments: int, method: str, replicas: int) -> float:
    """Coarse runtime model used by the budget guard (dense matmul bound)."""
    if method == "dense":
        flops = 2.0 * segments * 8.0 * float(dim) ** 3
    else:
        flops = replicas * 2.0 * segments * 8.0 * float(dim) ** 2
    return flops / 15e9 + 0.5


# ---------------------------------------------------------------------------
# Point execution (module-level for pickling into worker processes)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunPoint:
    index: int
    kind: str                  # dtc | echo | phase_pair
    tau: float
    theta: float
    n_cycles: int
    extra: tuple = ()          # (n_forward,) for echo; (alpha, beta) for pairs


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover - threadpoolctl ships with sklearn here
        import contextlib

        return contextlib.nullcontext()


def _run_point(cfg: ExperimentConfig, point: RunPoint) -> engine.EvolutionRecord:
    """Build the system, run one program, return the record (pure)."""
    with _limit_threads():
        system = build_system(cfg)
        ev = make_evolver(cfg, system)
        pulse = cfg.pulse_params()
        if point.kind == "dtc":
            program = sequence.dtc_program(point.tau, point.theta, point.n_cycles, cfg.mode, pulse)
        elif point.kind == "echo":
            (n_forward,) = point.extra
            program = sequence.echo_program(
                point.tau, point.theta, n_forward, point.n_cycles, cfg.mode, pulse
            )
        elif point.kind == "phase_pair":
            alpha, beta = point.extra
            program = sequence.phase_pair_program(
                point.tau, alpha, beta, point.n_cycles, cfg.mode, pulse
            )
        else:
            raise spinsys.ConfigError(f"unknown point kind {point.kind!r}")
        seed = point_seed(cfg.seed, point.index)
        meta = {
            "tau": point.tau,
            "theta": point.theta,
            "point_index": point.index,
            "preset": cfg.preset,
            "h1": cfg.h1,
        }
        if point.extra:
            meta["extra"] = "/".join(str(x) for x in point.extra)
        if cfg.method == "dense":
            rec = ev.run_dense(program, meta=meta)
            rec.meta["seed"] = seed
            return rec
        return ev.run_typicality(program, replicas=cfg.replicas, seed=seed, meta=meta)


def _execute_points(cfg: ExperimentConfig, points, failures: list) -> dict[int, engine.EvolutionRecord]:
    """Run points serially or in a pool; identical results either way."""
    results: dict[int, engine.EvolutionRecord] = {}
    if cfg.workers <= 1:
        for pt in points:
            try:
                results[pt.index] = _run_point(cfg, pt)
            except (spinsys.CapacityError, engine.KrylovError) as exc:
                failures.append({"point_index": pt.index, "error": str(exc)})
        return results
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        futures = {pt.index: pool.submit(_run_point, cfg, pt) for pt in points}
        for pt in points:
            try:
                results[pt.index] = futures[pt.index].result()
            except (spinsys.CapacityError, engine.KrylovError) as exc:
                failures.append({"point_index": pt.index, "error": str(exc)})
    return results


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _record_text(record: engine.EvolutionRecord) -> str:
    return engine.record_to_csv_text(record)


def _spectrum_text(spec: analysis.Spectrum, meta: dict) -> str:
    return analysis.spectrum_csv_text(spec, meta)


def _json_text(payload: dict) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=analysis._json_default) + "\n"


def _window(cfg: ExperimentConfig, record) -> tuple[int, int] | None:
    if cfg.window_length:
        return (cfg.window_start, cfg.window_length)
    return None


def _tag(point: RunPoint) -> str:
    bits = [f"p{point.index:03d}", point.kind, f"tau{point.tau:.6g}", f"th{point.theta / PI:.4f}pi"]
    if point.extra:
        bits.append("-".join(str(x) for x in point.extra))
    return "_".join(bits)


# ---------------------------------------------------------------------------
# Experiment families
# ---------------------------------------------------------------------------


def _budget_check(cfg: ExperimentConfig, system_dim: int, n_points: int, segments: int):
    est = estimate_point_seconds(system_dim, segments, cfg.method, cfg.replicas)
    if est > cfg.budget_s and not cfg.force:
        raise BudgetError(
            f"estimated {est:.0f}s per point (dim {system_dim}, {n_points} points) "
            f"exceeds the {cfg.budget_s:.0f}s budget; re-run with force enabled"
        )


def run_experiment(cfg: ExperimentConfig, kind: str | None = None) -> dict:
    """Dispatch a config to its experiment family and write all outputs.

    Returns the manifest dict.  ``kind`` overrides the preset's natural
    family (simulate | sweep | echo | phasepair).
    """
    cfg.validate()
    kind = kind or {"fig1": "simulate", "fig2": "sweep", "fig3": "echo", "fig4": "phasepair"}.get(
        cfg.preset, "simulate"
    )
    if kind == "simulate":
        return simulate(cfg)
    if kind == "sweep":
        return sweep(cfg)
    if kind == "echo":
        return echo(cfg)
    if kind == "phasepair":
        return phasepair(cfg)
    raise spinsys.ConfigError(f"unknown experiment kind {kind!r}")


def _manifest_skeleton(cfg: ExperimentConfig, kind: str) -> dict:
    cfg_dict = asdict(cfg)
    return {
        "format_version": MANIFEST_FORMAT_VERSION,
        "kind": kind,
        "preset": cfg.preset,
        "master_seed": cfg.seed,
        "created_unix": time.time(),
        "config": cfg_dict,
        "artifacts": [],
        "failures": [],
    }


def _finish(out: Path, manifest: dict) -> dict:
    atomic_write_text(out / "manifest.json", _json_text(manifest))
    return manifest


def simulate(cfg: ExperimentConfig) -> dict:
    """One DTC record per (tau, theta) pair, with its spectrum."""
    out = Path(cfg.out_dir)
    manifest = _manifest_skeleton(cfg, "simulate")
    system = build_system(cfg)
    pairs = [(tau, theta) for tau, theta in zip_longest_grid(cfg.taus, cfg.thetas)]
    points = [
        RunPoint(i, "dtc", tau, theta, cfg.n_cycles) for i, (tau, theta) in enumerate(pairs)
    ]
    _budget_check(cfg, system.dim, len(points), 2 * cfg.n_cycles)
    records = _execute_points(cfg, points, manifest["failures"])
    summary_rows = []
    for pt in points:
        if pt.index not in records:
            continue
        rec = records[pt.index]
        tag = _tag(pt)
        rec_path = out / "records" / f"{tag}.csv"
        atomic_write_text(rec_path, _record_text(rec))
        spec = analysis.spectrum(rec, _window(cfg, rec))
        frac = analysis.crystalline_fraction(spec)
        spec_path = out / "spectra" / f"{tag}.csv"
        atomic_write_text(spec_path, _spectrum_text(spec, {"tau": pt.tau, "theta": pt.theta}))
        manifest["artifacts"].extend(
            [
                {"path": str(rec_path.relative_to(out)), "kind": "record",
                 "params": {"tau": pt.tau, "theta": pt.theta}, "seed": rec.meta.get("seed")},
                {"path": str(spec_path.relative_to(out)), "kind": "spectrum",
                 "params": {"tau": pt.tau, "theta": pt.theta}},
            ]
        )
        summary_rows.append(
            {"tau": pt.tau, "theta": pt.theta, "crystalline_fraction": frac,
             "decay_cycles": _finite_or_str(analysis.decay_time(rec))}
        )
    atomic_write_text(out / "summary.json", _json_text({
        "format_version": analysis.ANALYSIS_FORMAT_VERSION,
        "kind": "simulate", "rows": summary_rows,
    }))
    manifest["artifacts"].append({"path": "summary.json", "kind": "summary", "params": {}})
    return _finish(out, manifest)


def zip_longest_grid(taus, thetas):
    """Pair tau and theta lists: equal lengths zip 1:1, otherwise the grid."""
    if len(taus) == len(thetas):
        return list(zip(taus, thetas))
    return [(tau, theta) for tau in taus for theta in thetas]


def _finite_or_str(x: float):
    return x if math.isfinite(x) else "inf"


def sweep(cfg: ExperimentConfig) -> dict:
    """theta x tau grid -> crystalline fractions, Gaussian fits, boundary table."""
    out = Path(cfg.out_dir)
    manifest = _manifest_skeleton(cfg, "sweep")
    system = build_system(cfg)
    w_scale = spinsys.interaction_scale(system, (cfg.driven, cfg.driven)) if len(
        system.species_indices(cfg.driven)
    ) > 1 else 0.0
    points = []
    index = 0
    for tau in cfg.taus:
        for theta in cfg.thetas:
            points.append(RunPoint(index, "dtc", tau, theta, cfg.n_cycles))
            index += 1
    _budget_check(cfg, system.dim, len(points), 2 * cfg.n_cycles)
    records = _execute_points(cfg, points, manifest["failures"])

    entries = []
    for it, tau in enumerate(cfg.taus):
        thetas, fracs = [], []
        for jt, theta in enumerate(cfg.thetas):
            idx = it * len(cfg.thetas) + jt
            if idx not in records:
                continue
            spec = analysis.spectrum(records[idx], _window(cfg, records[idx]))
            thetas.append(theta)
            fracs.append(analysis.crystalline_fraction(spec))
        thetas = np.array(thetas)
        fracs = np.array(fracs)
        frac_path = out / "fractions" / f"frac_tau{it:02d}.csv"
        atomic_write_text(frac_path, _fraction_text(tau, thetas, fracs))
        manifest["artifacts"].append(
            {"path": str(frac_path.relative_to(out)), "kind": "fractions", "params": {"tau": tau}}
        )
        if len(thetas) >= 5:
            try:
                fit = analysis.fit_gaussian(thetas, fracs)
                width = analysis.region_half_width(fit, cfg.cutoff)
                entries.append(analysis.CrystalFitEntry(tau, thetas, fracs, fit, width))
            except analysis.FitError as exc:
                entries.append(analysis.CrystalFitEntry(tau, thetas, fracs, None, None, str(exc)))
        else:
            entries.append(
                analysis.CrystalFitEntry(tau, thetas, fracs, None, None, "fewer than 5 points")
            )
    crystal = analysis.CrystalFit(tuple(entries), cfg.cutoff)
    fits_path = out / "fits" / "fits.csv"
    atomic_write_text(fits_path, _fits_text(crystal, w_scale))
    manifest["artifacts"].append({"path": str(fits_path.relative_to(out)), "kind": "fits", "params": {}})
    atomic_write_text(out / "summary.json", _json_text({
        "format_version": analysis.ANALYSIS_FORMAT_VERSION,
        "kind": "sweep",
        "w_scale_rad_s": w_scale,
        "rows": [
            {
                "tau": e.tau,
                "amplitude": None if e.fit is None else e.fit.amplitude,
                "center": None if e.fit is None else e.fit.center,
                "sigma": None if e.fit is None else e.fit.sigma,
                "residual": None if e.fit is None else e.fit.residual,
                "width": e.width,
                "wtau_reference": w_scale * e.tau,
                "note": e.note,
            }
            for e in crystal.entries
        ],
    }))
    manifest["artifacts"].append({"path": "summary.json", "kind": "summary", "params": {}})
    return _finish(out, manifest)


def _fraction_text(tau, thetas, fracs) -> str:
    return analysis.fraction_csv_text(tau, thetas, fracs)


def _fits_text(crystal: analysis.CrystalFit, w_scale: float) -> str:
    return analysis.fit_csv_text(crystal, w_scale)


def echo(cfg: ExperimentConfig) -> dict:
    """Echo family: for each forward count N, sweep the unwrapping count N'.

    Each (N, N') pair is an independent run of the full sequence, exactly
    like the experiment; the echo record for N collects the final sample of
    each run versus N'.
    """
    out = Path(cfg.out_dir)
    manifest = _manifest_skeleton(cfg, "echo")
    system = build_system(cfg)
    theta = cfg.thetas[0]
    tau = cfg.taus[0]
    points = []
    index = 0
    layout = []
    for n_forward in cfg.echo_forward:
        nmax = cfg.echo_reverse_max or (2 * n_forward + 2)
        for n_rev in range(nmax + 1):
            points.append(RunPoint(index, "echo", tau, theta, n_rev, (n_forward,)))
            layout.append((n_forward, n_rev, index))
            index += 1
    # also the plain forward reference out to N + N'
    ref_cycles = max(cfg.echo_forward) + (cfg.echo_reverse_max or (2 * max(cfg.echo_forward) + 2))
    ref_point = RunPoint(index, "dtc", tau, theta, ref_cycles)
    points.append(ref_point)
    _budget_check(cfg, system.dim, len(points), 2 * (max(cfg.echo_forward) * 3 + 4))
    records = _execute_points(cfg, points, manifest["failures"])

    summary = {"format_version": analysis.ANALYSIS_FORMAT_VERSION, "kind": "echo",
               "tau": tau, "theta": theta, "families": []}
    for n_forward in cfg.echo_forward:
        rows = [(n_rev, idx) for nf, n_rev, idx in layout if nf == n_forward]
        nrevs, values, endtimes = [], [], []
        for n_rev, idx in rows:
            if idx not in records:
                continue
            nrevs.append(n_rev)
            values.append(float(records[idx].mz[-1]))
            endtimes.append(float(records[idx].times[-1]))
        arr_n = np.array(nrevs)
        arr_v = np.array(values)
        tagname = f"echo_N{n_forward:02d}"
        path = out / "records" / f"{tagname}.csv"
        rec = engine.EvolutionRecord(
            arr_n,
            np.array(endtimes),
            arr_v,
            None,
            {
                "kind": "echo_scan", "tau": tau, "theta": theta,
                "n_forward": n_forward, "mode": cfg.mode,
                "method": cfg.method, "preset": cfg.preset,
                "floquet_period": tau + cfg.pulse_params().nominal_duration(theta, cfg.mode),
            },
        )
        atomic_write_text(path, _record_text(rec))
        manifest["artifacts"].append(
            {"path": str(path.relative_to(out)), "kind": "echo_record",
             "params": {"tau": tau, "theta": theta, "n_forward": n_forward}}
        )
        peak = analysis.echo_peak(arr_n, arr_v, n_forward) if len(arr_n) >= 3 else None
        summary["families"].append(
            {
                "n_forward": n_forward,
                "peak": None if peak is None else
                {"location": peak.location, "amplitude": peak.amplitude, "offset": peak.offset},
            }
        )
    if ref_point.index in records:
        ref = records[ref_point.index]
        path = out / "records" / "forward_reference.csv"
        atomic_write_text(path, _record_text(ref))
        manifest["artifacts"].append(
            {"path": str(path.relative_to(out)), "kind": "record",
             "params": {"tau": tau, "theta": theta}, "seed": ref.meta.get("seed")}
        )
    atomic_write_text(out / "summary.json", _json_text(summary))
    manifest["artifacts"].append({"path": "summary.json", "kind": "summary", "params": {}})
    return _finish(out, manifest)


def phasepair(cfg: ExperimentConfig) -> dict:
    """Two-pulse phase pairs ({X,X}, {Y,Y}, {X,Y}) with decay-time summary."""
    out = Path(cfg.out_dir)
    manifest = _manifest_skeleton(cfg, "phasepair")
    system = build_system(cfg)
    tau = cfg.taus[0]
    points = []
    for i, pair in enumerate(cfg.pairs):
        if len(pair) != 2 or any(c not in "xy" for c in pair):
            _cfg_error("drive", "pairs", f"bad pair spec {pair!r}")
        points.append(RunPoint(i, "phase_pair", tau, PI, cfg.n_cycles, (pair[0], pair[1])))
    _budget_check(cfg, system.dim, len(points), 4 * cfg.n_cycles)
    records = _execute_points(cfg, points, manifest["failures"])
    rows = []
    for pt in points:
        if pt.index not in records:
            continue
        rec = records[pt.index]
        pair = "".join(pt.extra)
        path = out / "records" / f"pair_{pair}.csv"
        atomic_write_text(path, _record_text(rec))
        manifest["artifacts"].append(
            {"path": str(path.relative_to(out)), "kind": "record",
             "params": {"tau": tau, "pair": pair}, "seed": rec.meta.get("seed")}
        )
        rows.append({"pair": pair, "decay_blocks": _finite_or_str(analysis.decay_time(rec))})
    atomic_write_text(out / "summary.json", _json_text({
        "format_version": analysis.ANALYSIS_FORMAT_VERSION,
        "kind": "phasepair", "tau": tau, "rows": rows,
    }))
    manifest["artifacts"].append({"path": "summary.json", "kind": "summary", "params": {}})
    return _finish(out, manifest)


def analyze(record_paths, out_dir, window: tuple[int, int] | None = None) -> dict:
    """Re-run the analysis pipeline on stored record CSVs."""
    out = Path(out_dir)
    manifest = {"format_version": MANIFEST_FORMAT_VERSION, "kind": "analyze",
                "created_unix": time.time(), "artifacts": [], "failures": []}
    rows = []
    for path in record_paths:
        rec = engine.read_record_csv(path)
        name = Path(path).stem
        spec = analysis.spectrum(rec, window)
        spec_path = out / "spectra" / f"{name}.csv"
        atomic_write_text(spec_path, _spectrum_text(spec, {"source": Path(path).name}))
        manifest["artifacts"].append(
            {"path": str(spec_path.relative_to(out)), "kind": "spectrum", "params": {"source": str(path)}}
        )
        rows.append({
            "source": str(path),
            "crystalline_fraction": analysis.crystalline_fraction(spec),
            "decay_cycles": _finite_or_str(analysis.decay_time(rec)),
        })
    atomic_write_text(out / "summary.json", _json_text({
        "format_version": analysis.ANALYSIS_FORMAT_VERSION, "kind": "analyze", "rows": rows,
    }))
    manifest["artifacts"].append({"path": "summary.json", "kind": "summary", "params": {}})
    atomic_write_text(out / "manifest.json", _json_text(manifest))
    return manifest


def envelope_csv(epsilon: float, n_max: int, path):
    env = analysis.cosine_power_envelope(epsilon, n_max)
    lines = [f"# format_version={analysis.ANALYSIS_FORMAT_VERSION}",
             f"# epsilon={float(epsilon)!r}", "N,envelope"]
    for n, v in zip(env.cycles, env.values):
        lines.append(f"{int(n)},{float(v)!r}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")
