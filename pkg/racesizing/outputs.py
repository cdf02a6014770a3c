"""Run directories: fixed file names, CSV/JSON writers and a checksummed manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from importlib import metadata
from pathlib import Path

import numpy as np
from django.utils import timezone

from . import __version__
from .battery import BatteryModelKind
from .exceptions import ProvenanceError
from .solution import TRAJECTORY_FIELDS, TRAJECTORY_HEADER, Formulation, RaceSolution, SolveStatus

logger = logging.getLogger(__name__)

TRAJECTORY_FILE = "trajectory.csv"
REPORT_FILE = "report.json"
SIZING_FILE = "sizing.csv"
MANIFEST_FILE = "manifest.json"

SIZING_HEADER = ["Np", "race_time_s", "status", "terminal_soc"]
LIBRARIES = ("Django", "numpy", "scipy", "casadi", "cvxpy", "clarabel", "PyYAML", "reportlab")


def _number(value) -> str:
    if value is None:
        return ""
    value = float(value)
    return "nan" if math.isnan(value) else repr(value)


def run_directory(base: str | Path, command: str, fingerprint: str) -> Path:
    stamp = timezone.now().strftime("%Y%m%dT%H%M%S%f")
    path = Path(base) / f"{command}-{stamp}-{fingerprint[:8]}"
    path.mkdir(parents=True, exist_ok=False)
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if not math.isfinite(value) else value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (SolveStatus, Formulation, BatteryModelKind)):
        return value.value
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_rows(path: Path, rows) -> Path:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for row in rows:
            writer.writerow(row)
    return path


def trajectory_rows(solution: RaceSolution):
    yield TRAJECTORY_HEADER
    for row in solution.rows():
        yield [_number(value) for value in row]


def sizing_rows(curve):
    yield SIZING_HEADER
    for e in curve.entries:
        yield [e.N_p, _number(e.race_time), e.status.value, _number(e.terminal_soc)]


def sizing_file(label: str, first: bool) -> str:
    return SIZING_FILE if first else f"sizing-{label.replace(':', '-')}.csv"


def solution_report(solution: RaceSolution, report, terminal_soc: float | None = None) -> dict:
    return {
        "formulation": solution.formulation,
        "model": solution.model,
        "N_p": solution.N_p,
        "total_mass_kg": solution.M,
        "race_time_s": solution.race_time,
        "terminal_soc": solution.terminal_soc if terminal_soc is None else terminal_soc,
        "solve": report.as_dict(),
    }


def _optional_float(value) -> float:
    return math.nan if value is None else float(value)


def read_trajectory(path: Path, report: dict) -> RaceSolution:
    with path.open("r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != TRAJECTORY_HEADER:
            raise ProvenanceError(f"{path}: unexpected trajectory header")
        rows = list(reader)
    columns = {}
    for j, name in enumerate(TRAJECTORY_FIELDS):
        cells = [row[j] for row in rows]
        columns[name] = None if all(c == "" for c in cells) else np.array([float(c) for c in cells])
    return RaceSolution(
        formulation=Formulation(report["formulation"]),
        model=BatteryModelKind(report["model"]),
        race_time=_optional_float(report.get("race_time_s")),
        status=SolveStatus(report["solve"]["status"]),
        N_p=report.get("N_p"),
        M=_optional_float(report.get("total_mass_kg")),
        **columns,
    )


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def library_versions() -> dict[str, str | None]:
    versions = {}
    for name in LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_manifest(run_dir: Path, *, command: str, config, options: dict, files: list[str]) -> Path:
    """Record everything needed to repeat the run, plus a sha256 of each output file."""
    manifest = {
        "command": command,
        "created_at": timezone.now().isoformat(),
        "scenario": str(config.path) if config.path is not None else None,
        "fingerprint": config.fingerprint(),
        "config": config.resolved(),
        "options": options,
        "code_version": __version__,
        "libraries": library_versions(),
        "files": {name: file_digest(run_dir / name) for name in sorted(files)},
    }
    return write_json(run_dir / MANIFEST_FILE, manifest)


def read_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / MANIFEST_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ProvenanceError(f"{path}: cannot read manifest ({exc.strerror or exc})") from exc
    except json.JSONDecodeError as exc:
        raise ProvenanceError(f"{path}: manifest is not valid JSON") from exc


def verify_files(run_dir: Path, manifest: dict) -> None:
    for name, digest in manifest.get("files", {}).items():
        path = run_dir / name
        if not path.exists():
            raise ProvenanceError(f"{path}: listed in the manifest but missing")
        if file_digest(path) != digest:
            raise ProvenanceError(f"{path}: checksum mismatch")


def read_solution(run_dir: str | Path, fingerprint: str | None = None) -> tuple[RaceSolution, dict, dict]:
    """Load a solve run after verifying checksums and, if given, the scenario fingerprint."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    if TRAJECTORY_FILE not in manifest.get("files", {}):
        raise ProvenanceError(f"{run_dir}: not a solve run (no {TRAJECTORY_FILE} in the manifest)")
    verify_files(run_dir, manifest)
    if fingerprint is not None and manifest.get("fingerprint") != fingerprint:
        raise ProvenanceError(
            f"{run_dir}: scenario fingerprint mismatch ({manifest.get('fingerprint', '?')[:12]} != {fingerprint[:12]})"
        )
    report = json.loads((run_dir / REPORT_FILE).read_text(encoding="utf-8"))
    solution = read_trajectory(run_dir / TRAJECTORY_FILE, report)
    logger.debug("loaded %s solution from %s", solution.formulation.value, run_dir)
    return solution, report, manifest
