"""
Scenario files: YAML with one mapping per section, validated section by section.

    track:       {synth: synth-A, n_laps: 3}
    vehicle:     {v0_mps: 20}
    pack:        {n_p: 24, initial_soc: 1.0}
    solver:      {formulation: convex, model: vn-r}
    sizing:      {np_min: 10, np_max: 30}

Every key is optional except the track source. Paths resolve relative to the scenario
file; a bare name (no suffix, no directory) falls back to the bundled data directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from django.conf import settings

from .battery import BatteryModelKind, CellParams, OcvCurve, PackConfig, PackParams, RcPair, derive_pack
from .exceptions import ConfigurationError, UnsupportedCombinationError
from .forms import SECTION_FORMS
from .powertrain import PowertrainParams
from .sizing import SizingScenario, model_label, parse_model_spec
from .solution import Formulation
from .solver import SolveSettings
from .track import TrackProfile, load_synth_spec, load_track, resample, tile_laps
from .transcription import DiscretizationConfig
from .vehicle import VehicleParams
from .yamlio import line_for, load_yaml

logger = logging.getLogger(__name__)

_CELL_SCALARS = {
    "q_cell_ah": "q_cell",
    "m_cell_kg": "m_cell",
    "v_n": "v_n",
    "v_min": "v_min",
    "v_max": "v_max",
    "i_min": "i_min",
    "i_max": "i_max",
    "r0_cell_ohm": "r0_cell",
}
_CELL_KEYS = set(_CELL_SCALARS) | {"name", "ocv", "rc_sets"}


def bundled_path(value: str, kind: str, base_dir: Path | None = None) -> Path:
    """Resolve a data reference: a path relative to `base_dir`, else a bundled `<kind>/<name>.yaml`."""
    candidate = Path(value)
    if not candidate.is_absolute() and base_dir is not None:
        relative = base_dir / candidate
        if relative.exists():
            return relative
    if candidate.exists():
        return candidate
    if not candidate.suffix and len(candidate.parts) == 1:
        bundled = Path(settings.RACESIZING_DATA_DIR) / kind / f"{value}.yaml"
        if bundled.exists():
            return bundled
    return (base_dir / candidate) if base_dir is not None and not candidate.is_absolute() else candidate


def load_cell(path: str | Path) -> CellParams:
    path = Path(path)
    data, lines = load_yaml(path)
    if not isinstance(data, dict):
        raise ConfigurationError("cell file must be a mapping", path=path, line=line_for(lines, ()))
    unknown = sorted(set(data) - _CELL_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown key {unknown[0]!r}", path=path, line=line_for(lines, (unknown[0],)))

    values = {}
    for key, attr in _CELL_SCALARS.items():
        if key not in data:
            raise ConfigurationError(f"missing key {key!r}", path=path, line=line_for(lines, ()))
        try:
            values[attr] = float(data[key])
        except (TypeError, ValueError):
            raise ConfigurationError(f"{key} must be a number", path=path, line=line_for(lines, (key,))) from None

    table = data.get("ocv")
    try:
        if table is None:
            ocv = OcvCurve.constant(values["v_n"])
        else:
            rows = np.asarray(table, dtype=float)
            if rows.ndim != 2 or rows.shape[1] != 2:
                raise ConfigurationError("ocv must be a list of [soc, volts] pairs", path=path, line=line_for(lines, ("ocv",)))
            ocv = OcvCurve(zeta=rows[:, 0], v_oc=rows[:, 1])
    except (TypeError, ValueError):
        raise ConfigurationError("ocv rows must be numbers", path=path, line=line_for(lines, ("ocv",))) from None
    except ConfigurationError as exc:
        raise ConfigurationError(exc.message, path=path, line=line_for(lines, ("ocv",))) from exc

    rc_pairs = {}
    for name, pair in (data.get("rc_sets") or {}).items():
        where = line_for(lines, ("rc_sets", name))
        if not isinstance(pair, dict) or set(pair) != {"r1_ohm", "c1_f"}:
            raise ConfigurationError(f"RC set {name!r} needs exactly r1_ohm and c1_f", path=path, line=where)
        rc_pairs[str(name)] = RcPair(r1=float(pair["r1_ohm"]), c1=float(pair["c1_f"]))

    try:
        return CellParams(ocv=ocv, rc_pairs=rc_pairs, name=str(data.get("name", path.stem)), **values)
    except ConfigurationError as exc:
        raise ConfigurationError(exc.message, path=path, line=line_for(lines, ())) from exc


def _canonical(value):
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.ndarray):
        return [_canonical(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Validated scenario sections plus the file they came from."""

    values: dict[str, dict]
    path: Path | None = None
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def name(self) -> str:
        return self.path.stem if self.path is not None else "scenario"

    @property
    def base_dir(self) -> Path | None:
        return self.path.parent if self.path is not None else None

    def section(self, name: str) -> dict:
        return self.values[name]

    def _error(self, message: str, keypath: tuple) -> ConfigurationError:
        return ConfigurationError(message, path=self.path, line=line_for(self.lines, keypath))

    def with_overrides(
        self,
        *,
        model: str | None = None,
        formulation: str | None = None,
        n_p: int | None = None,
        ds: float | None = None,
        initial_soc: float | None = None,
        n_laps: int | None = None,
        np_range: tuple[int, int] | None = None,
    ) -> "ScenarioConfig":
        values = {key: dict(section) for key, section in self.values.items()}
        if model is not None:
            parse_model_spec(model)
            values["solver"]["model"] = model
        if formulation is not None:
            values["solver"]["formulation"] = Formulation(formulation).value
        if n_p is not None:
            if int(n_p) < 1:
                raise ConfigurationError(f"--np must be positive, got {n_p}")
            values["pack"]["n_p"] = int(n_p)
        if ds is not None:
            if not ds > 0:
                raise ConfigurationError(f"--ds must be positive, got {ds}")
            values["discretization"]["ds_m"] = float(ds)
        if initial_soc is not None:
            if not 0 < initial_soc <= 1:
                raise ConfigurationError("initial SoC must lie in (0, 1]")
            values["pack"]["initial_soc"] = float(initial_soc)
        if n_laps is not None:
            values["track"]["n_laps"] = int(n_laps)
        if np_range is not None:
            lo, hi = (int(n) for n in np_range)
            if lo < 1 or hi < lo:
                raise ConfigurationError(f"N_p range must be non-empty and positive, got {lo}..{hi}")
            values["sizing"]["np_min"], values["sizing"]["np_max"] = lo, hi
        return replace(self, values=values)

    # Physical inputs

    @cached_property
    def lap(self) -> TrackProfile:
        track = self.values["track"]
        if track["synth"]:
            return load_synth_spec(bundled_path(track["synth"], "tracks", self.base_dir))
        return load_track(bundled_path(track["file"], "tracks", self.base_dir))

    def race_track(self) -> TrackProfile:
        """The lap resampled to ds and tiled to n_laps."""
        ds = self.values["discretization"]["ds_m"]
        try:
            lap = resample(self.lap, ds)
        except ConfigurationError as exc:
            raise self._error(exc.message, ("discretization", "ds_m")) from exc
        return tile_laps(lap, self.values["track"]["n_laps"])

    @cached_property
    def cell(self) -> CellParams:
        return load_cell(bundled_path(self.values["cell"]["file"], "cells", self.base_dir))

    def vehicle(self) -> VehicleParams:
        v = self.values["vehicle"]
        try:
            return VehicleParams(
                M_v=v["mass_kg"], R_w=v["wheel_radius_m"], C_drag=v["c_drag"], C_down=v["c_down"],
                C_roll=v["c_roll"], mu_x=v["mu_x"], mu_y=v["mu_y"], g=v["gravity_mps2"],
                v0=v["v0_mps"], v_floor=v["v_floor_mps"], v_cap=v["v_cap_mps"],
            )
        except ConfigurationError as exc:
            raise self._error(exc.message, ("vehicle",)) from exc

    def powertrain(self) -> PowertrainParams:
        p = self.values["powertrain"]
        return PowertrainParams(eta=p["eta"], beta_eta=p["beta_eta"], brake_torque_max=p.get("brake_torque_max_nm"))

    def discretization(self) -> DiscretizationConfig:
        d = self.values["discretization"]
        return DiscretizationConfig(ds=d["ds_m"], v_bar=d["v_bar_mps"], F_bar=d["f_bar_n"])

    def solve_settings(self, verbose: bool = False) -> SolveSettings:
        s = self.values["solver"]
        return SolveSettings(
            tol_feas=s.get("tol_feas"),
            tol_opt=s.get("tol_opt"),
            max_iter=s["max_iter"],
            nlp_method=s["nlp_method"],
            trust_region_initial=s["trust_region_initial"],
            merit_weight=s["merit_weight"],
            tol_accept=s["tol_accept"],
            verbose=verbose,
        )

    # Problem choice

    @property
    def formulation(self) -> Formulation:
        return Formulation(self.values["solver"]["formulation"])

    @property
    def model(self) -> BatteryModelKind:
        return parse_model_spec(self.values["solver"]["model"])[0]

    @property
    def rc_set(self) -> str | None:
        model, rc_set = parse_model_spec(self.values["solver"]["model"])
        if model is not BatteryModelKind.VSOC_RC:
            return None
        # An explicit ":<set>" on the model wins over cell.rc_set
        spec = self.values["solver"]["model"]
        return rc_set if ":" in spec else self.values["cell"]["rc_set"]

    @property
    def model_label(self) -> str:
        return model_label(self.model, self.rc_set)

    @property
    def n_p(self) -> int:
        return int(self.values["pack"]["n_p"])

    @property
    def n_s(self) -> int:
        pack = self.values["pack"]
        if pack.get("n_s"):
            return int(pack["n_s"])
        return PackConfig.series_for_voltage(pack["v_max_pack_v"], self.cell.v_max)

    @property
    def initial_soc(self) -> float:
        return float(self.values["pack"]["initial_soc"])

    @property
    def power_limits(self) -> dict:
        pack = self.values["pack"]
        return {"P_b_min": pack["p_b_min_w"], "P_b_max": pack["p_b_max_w"]}

    @property
    def model_specs(self) -> list[str]:
        return list(self.values["sizing"].get("model_specs") or [])

    def check_combination(self) -> None:
        if self.formulation is Formulation.CONVEX and self.model is not BatteryModelKind.VN_R:
            raise UnsupportedCombinationError(
                f"unsupported combination: convex formulation with {self.model.label}; the convex path needs Vn-R",
                path=self.path,
                line=line_for(self.lines, ("solver", "model")),
            )

    def pack(self, N_p: int | None = None) -> PackParams:
        cfg = PackConfig(N_s=self.n_s, N_p=N_p if N_p is not None else self.n_p, alpha=self.values["pack"]["alpha"])
        return derive_pack(self.cell, cfg, self.power_limits, rc_set=self.rc_set)

    def sizing_scenario(
        self, model_spec: str | None = None, formulation: Formulation | None = None, verbose: bool = False
    ) -> SizingScenario:
        if model_spec is None:
            model, rc_set = self.model, self.rc_set
        else:
            model, rc_set = parse_model_spec(model_spec)
            if model is BatteryModelKind.VSOC_RC and ":" not in model_spec:
                rc_set = self.values["cell"]["rc_set"]
        if formulation is None:
            formulation = self.formulation
            if model is not BatteryModelKind.VN_R:
                formulation = Formulation.NONCONVEX
        sizing = self.values["sizing"]
        return SizingScenario(
            track=self.race_track(),
            cell=self.cell,
            N_s=self.n_s,
            Np_range=(sizing["np_min"], sizing["np_max"]),
            Np_step=sizing["np_step"],
            alpha=self.values["pack"]["alpha"],
            model=model,
            formulation=formulation,
            vehicle=self.vehicle(),
            powertrain=self.powertrain(),
            disc=self.discretization(),
            power_limits=self.power_limits,
            rc_set=rc_set,
            initial_soc=self.initial_soc,
            settings=self.solve_settings(verbose),
            warm_start=bool(self.values["solver"]["warm_start"]),
        )

    # Provenance

    def resolved(self) -> dict:
        """Every input that influences a solve, in canonical form."""
        track = self.race_track()
        digest = hashlib.sha256()
        for column in (track.s, track.rho, track.theta):
            digest.update(np.ascontiguousarray(column, dtype="<f8").tobytes())
        cell = self.cell
        values = {
            key: {k: v for k, v in section.items() if k != "model_specs"} for key, section in self.values.items()
        }
        return _canonical(
            {
                "sections": values,
                "track": {"name": track.name, "nodes": track.n_nodes, "sha256": digest.hexdigest()},
                "cell": {
                    "name": cell.name,
                    **{attr: getattr(cell, attr) for attr in _CELL_SCALARS.values()},
                    "ocv": [cell.ocv.zeta, cell.ocv.v_oc],
                    "rc_sets": {k: [p.r1, p.c1] for k, p in sorted(cell.rc_pairs.items())},
                },
                "n_s": self.n_s,
            }
        )

    def fingerprint(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = bundled_path(str(path), "scenarios")
    data, lines = load_yaml(path)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("scenario must be a mapping of sections", path=path, line=line_for(lines, ()))

    unknown = sorted(set(data) - set(SECTION_FORMS))
    if unknown:
        raise ConfigurationError(f"unknown section {unknown[0]!r}", path=path, line=line_for(lines, (unknown[0],)))

    values: dict[str, dict] = {}
    for name, form_class in SECTION_FORMS.items():
        raw = data.get(name) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"section {name!r} must be a mapping", path=path, line=line_for(lines, (name,)))
        raw = dict(raw)
        extra = sorted(set(raw) - form_class.keys())
        if extra:
            raise ConfigurationError(
                f"unknown key {name}.{extra[0]}", path=path, line=line_for(lines, (name, extra[0]))
            )
        if isinstance(raw.get("models"), list):
            raw["models"] = ",".join(str(m) for m in raw["models"])
        form = form_class.with_defaults(raw)
        if not form.is_valid():
            key, errors = next(iter(form.errors.items()))
            keypath = (name,) if key == "__all__" else (name, key)
            raise ConfigurationError(f"{name}.{key}: {' '.join(errors)}", path=path, line=line_for(lines, keypath))
        values[name] = form.cleaned_data

    logger.debug("loaded scenario %s", path)
    return ScenarioConfig(values=values, path=path, lines=lines)
