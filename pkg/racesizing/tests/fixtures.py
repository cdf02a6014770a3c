"""Small builders shared by the test modules."""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from django.conf import settings

from ..battery import BatteryModelKind, OcvCurve, PackConfig, derive_pack
from ..powertrain import PowertrainParams
from ..scenario import load_cell
from ..sizing import DEFAULT_POWER_LIMITS, SizingScenario
from ..solution import Formulation
from ..track import Segment, load_synth_spec, synth_track
from ..transcription import DiscretizationConfig, assemble
from ..vehicle import VehicleParams

N_S = 209


def vtc6():
    return load_cell(Path(settings.RACESIZING_DATA_DIR) / "cells" / "vtc6.yaml")


def synth_a():
    return load_synth_spec(Path(settings.RACESIZING_DATA_DIR) / "tracks" / "synth-A.yaml")


def constant_ocv(cell):
    return replace(cell, ocv=OcvCurve.constant(cell.v_n))


def reference_pack(N_p: int = 24, rc_set: str | None = None, cell=None, limits=None):
    return derive_pack(
        cell or vtc6(), PackConfig(N_s=N_S, N_p=N_p, alpha=0.8), limits or DEFAULT_POWER_LIMITS, rc_set=rc_set
    )


def straight(length: float, ds: float):
    return synth_track([Segment("straight", length)], step=ds, name="straight")


def corner_track(ds: float = 15.0):
    """300 m: straight, a 40 m radius left-hander, straight."""
    return synth_track(
        [Segment("straight", 120.0), Segment("arc", 60.0, radius=40.0), Segment("straight", 120.0)],
        step=ds,
        name="corner",
    )


def problem(
    formulation=Formulation.CONVEX,
    model=BatteryModelKind.VN_R,
    track=None,
    ds: float = 15.0,
    pack=None,
    v0: float = 20.0,
    initial_soc: float = 1.0,
):
    track = track if track is not None else corner_track(ds)
    rc_set = "rc3" if BatteryModelKind(model) is BatteryModelKind.VSOC_RC else None
    return assemble(
        formulation,
        track,
        VehicleParams(v0=v0),
        pack if pack is not None else reference_pack(rc_set=rc_set),
        model,
        PowertrainParams(),
        DiscretizationConfig(ds=ds),
        initial_soc=initial_soc,
    )


def tiny_problem(formulation=Formulation.NONCONVEX, nodes: int = 3, ds: float = 10.0, pack=None, **kwargs):
    return problem(formulation, track=straight(ds * (nodes - 1), ds), ds=ds, pack=pack, **kwargs)


def scenario(track=None, ds: float = 15.0, v0: float = 20.0, **kwargs) -> SizingScenario:
    kwargs.setdefault("power_limits", dict(DEFAULT_POWER_LIMITS))
    return SizingScenario(
        track=track if track is not None else corner_track(ds),
        cell=kwargs.pop("cell", None) or vtc6(),
        N_s=N_S,
        vehicle=VehicleParams(v0=v0),
        disc=DiscretizationConfig(ds=ds),
        **kwargs,
    )
