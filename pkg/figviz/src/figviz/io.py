"""Readers for the simulator's documented CSV/JSON output formats.

figviz deliberately knows nothing about the simulator internals: it parses
only the stable on-disk formats (format_version 1) and fails loudly when a
file is missing a column or carries an unsupported version.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUPPORTED_FORMAT_VERSIONS = {1}


class SchemaError(ValueError):
    """Input file does not match the documented schema."""


class VersionError(ValueError):
    """Input file declares an unsupported format_version."""


def _check_version(raw, path):
    if raw is None:
        raise SchemaError(f"{path}: missing format_version header")
    try:
        version = int(raw)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: malformed format_version {raw!r}")
    if version not in SUPPORTED_FORMAT_VERSIONS:
        raise VersionError(
            f"{path}: format_version {version} is not supported by this figviz "
            f"(supported: {sorted(SUPPORTED_FORMAT_VERSIONS)}); upgrade figviz "
            "or re-export the data"
        )


def _read_csv_table(path) -> tuple[dict, list[str], list[list[str]]]:
    meta: dict = {}
    header: list[str] | None = None
    rows: list[list[str]] = []
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
                header = [c.strip() for c in line.split(",")]
                continue
            rows.append(line.split(","))
    if header is None:
        raise SchemaError(f"{path}: no column header found")
    _check_version(meta.get("format_version"), path)
    return meta, header, rows


def _column(header, rows, name, path, cast=float) -> np.ndarray:
    if name not in header:
        raise SchemaError(f"{path}: missing required column {name!r}")
    k = header.index(name)
    try:
        return np.array([cast(r[k]) if r[k] != "" else np.nan for r in rows])
    except (ValueError, IndexError) as exc:
        raise SchemaError(f"{path}: bad value in column {name!r}: {exc}")


@dataclass
class RecordTable:
    """Stroboscopic magnetization record."""

    path: str
    cycles: np.ndarray
    times: np.ndarray
    mz: np.ndarray
    stderr: np.ndarray | None
    meta: dict = field(default_factory=dict)


@dataclass
class SpectrumTable:
    path: str
    nu_tilde: np.ndarray
    power: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class FitTable:
    path: str
    tau: np.ndarray
    amplitude: np.ndarray
    center: np.ndarray
    sigma: np.ndarray
    width: np.ndarray
    wtau_reference: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class FractionTable:
    path: str
    tau: float
    theta: np.ndarray
    fraction: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class EnvelopeTable:
    path: str
    cycles: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)


def read_record(path) -> RecordTable:
    meta, header, rows = _read_csv_table(path)
    stderr = None
    if "Mz_stderr" in header:
        stderr = _column(header, rows, "Mz_stderr", path)
    return RecordTable(
        str(path),
        _column(header, rows, "N", path, cast=lambda s: int(float(s))),
        _column(header, rows, "t_seconds", path),
        _column(header, rows, "Mz", path),
        stderr,
        meta,
    )


def read_spectrum(path) -> SpectrumTable:
    meta, header, rows = _read_csv_table(path)
    return SpectrumTable(
        str(path),
        _column(header, rows, "nu_tilde", path),
        _column(header, rows, "power", path),
        meta,
    )


def read_fits(path) -> FitTable:
    meta, header, rows = _read_csv_table(path)
    return FitTable(
        str(path),
        _column(header, rows, "tau", path),
        _column(header, rows, "A", path),
        _column(header, rows, "theta0", path),
        _column(header, rows, "sigma", path),
        _column(header, rows, "width", path),
        _column(header, rows, "wtau_reference", path),
        meta,
    )


def read_fractions(path) -> FractionTable:
    meta, header, rows = _read_csv_table(path)
    if "tau" not in meta:
        raise SchemaError(f"{path}: fraction table lacks the tau header")
    return FractionTable(
        str(path),
        float(meta["tau"]),
        _column(header, rows, "theta", path),
        _column(header, rows, "f", path),
        meta,
    )


def read_envelope(path) -> EnvelopeTable:
    meta, header, rows = _read_csv_table(path)
    return EnvelopeTable(
        str(path),
        _column(header, rows, "N", path, cast=lambda s: int(float(s))),
        _column(header, rows, "envelope", path),
        meta,
    )


def read_summary(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    _check_version(doc.get("format_version"), path)
    return doc


# dispatch on one distinctive column per kind, so a corrupted file is still
# routed to its reader and the error names the genuinely missing column
_HEADER_KINDS = (
    ("t_seconds", read_record),
    ("nu_tilde", read_spectrum),
    ("wtau_reference", read_fits),
    ("f", read_fractions),
    ("envelope", read_envelope),
)


def classify_and_read(path):
    """Dispatch a CSV/JSON input to its reader by its header columns."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such input file")
    if path.suffix == ".json":
        return read_summary(path)
    _, header, _ = _read_csv_table(path)
    for marker, reader in _HEADER_KINDS:
        if marker in header:
            return reader(path)
    raise SchemaError(f"{path}: unrecognized column header {header!r}")
