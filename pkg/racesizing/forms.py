"""Per-section validation of scenario files. Field names are the YAML keys; units are in help_text."""
from __future__ import annotations

from django import forms
from django.conf import settings

from .battery import BatteryModelKind
from .exceptions import ConfigurationError
from .solution import Formulation
from .sizing import parse_model_spec
from .solver import NLP_METHODS


def _default_ds():
    return settings.RACESIZING_DEFAULT_DS


def _default_np_min():
    return settings.RACESIZING_NP_RANGE[0]


def _default_np_max():
    return settings.RACESIZING_NP_RANGE[1]


class SectionForm(forms.Form):
    """A scenario section. Missing keys take the field's `initial` value."""

    section = ""

    @classmethod
    def keys(cls) -> set[str]:
        return set(cls.base_fields)

    @classmethod
    def with_defaults(cls, raw: dict | None) -> "SectionForm":
        data = {}
        for name, field in cls.base_fields.items():
            initial = field.initial() if callable(field.initial) else field.initial
            if initial is not None:
                data[name] = initial
        data.update(raw or {})
        return cls(data=data)


class TrackForm(SectionForm):
    section = "track"

    synth = forms.CharField(required=False, help_text="Synthetic segment spec: YAML path or bundled name (e.g. synth-A)")
    file = forms.CharField(required=False, help_text="Track CSV (s_m,curvature_1pm,slope_rad), path relative to the scenario")
    n_laps = forms.IntegerField(min_value=1, initial=1, help_text="Laps in the race horizon")

    def clean(self):
        cleaned = super().clean()
        synth = (cleaned.get("synth") or "").strip()
        path = (cleaned.get("file") or "").strip()
        if bool(synth) == bool(path):
            self.add_error("synth", "Give exactly one of track.synth or track.file.")
        cleaned["synth"], cleaned["file"] = synth, path
        return cleaned


class VehicleForm(SectionForm):
    section = "vehicle"

    mass_kg = forms.FloatField(min_value=1.0, initial=426.0, help_text="Vehicle mass without battery [kg]")
    wheel_radius_m = forms.FloatField(min_value=0.05, initial=0.3454, help_text="Wheel radius [m]")
    c_drag = forms.FloatField(min_value=0.0, initial=0.3927, help_text="Drag coefficient, force = c_drag v^2 [kg/m]")
    c_down = forms.FloatField(min_value=0.0, initial=0.9526, help_text="Downforce coefficient [kg/m]")
    c_roll = forms.FloatField(min_value=0.0, initial=0.015, help_text="Rolling resistance coefficient [-]")
    mu_x = forms.FloatField(min_value=0.01, max_value=3.0, initial=1.2, help_text="Longitudinal friction coefficient [-]")
    mu_y = forms.FloatField(min_value=0.01, max_value=3.0, initial=1.2, help_text="Lateral friction coefficient [-]")
    gravity_mps2 = forms.FloatField(min_value=0.1, initial=9.81, help_text="Gravitational acceleration [m/s^2]")
    v0_mps = forms.FloatField(min_value=0.0, initial=1.0, help_text="Speed at s = 0 [m/s]")
    v_floor_mps = forms.FloatField(min_value=0.01, initial=1.0, help_text="Lower speed bound [m/s]")
    v_cap_mps = forms.FloatField(min_value=1.0, initial=100.0, help_text="Upper speed bound [m/s]")

    def clean(self):
        cleaned = super().clean()
        v0, floor, cap = cleaned.get("v0_mps"), cleaned.get("v_floor_mps"), cleaned.get("v_cap_mps")
        if None not in (v0, floor) and v0 < floor:
            self.add_error("v0_mps", "Initial speed must be at least the speed floor.")
        if None not in (floor, cap) and cap <= floor:
            self.add_error("v_cap_mps", "Speed cap must exceed the speed floor.")
        return cleaned


class CellForm(SectionForm):
    section = "cell"

    file = forms.CharField(initial="vtc6", help_text="Cell YAML: path relative to the scenario or bundled name")
    rc_set = forms.CharField(initial="auto", help_text="RC pair name, or 'auto' for the longest time constant")


class PackForm(SectionForm):
    section = "pack"

    n_s = forms.IntegerField(required=False, min_value=1, help_text="Cells in series; default floor(v_max_pack_v / cell v_max)")
    v_max_pack_v = forms.FloatField(min_value=1.0, initial=878.0, help_text="Maximum pack voltage [V]")
    n_p = forms.IntegerField(min_value=1, initial=24, help_text="Parallel strings for single solves")
    alpha = forms.FloatField(min_value=0.01, max_value=1.0, initial=0.8, help_text="Packaging factor, cell mass / pack mass [-]")
    p_b_min_w = forms.FloatField(max_value=0.0, initial=-600e3, help_text="Minimum battery power (charging) [W]")
    p_b_max_w = forms.FloatField(min_value=0.0, initial=350e3, help_text="Maximum battery power (discharging) [W]")
    initial_soc = forms.FloatField(min_value=0.0, max_value=1.0, initial=1.0, help_text="State of charge at s = 0 [-]")

    def clean_initial_soc(self):
        value = self.cleaned_data["initial_soc"]
        if value <= 0:
            raise forms.ValidationError("Initial SoC must be positive.")
        return value


class PowertrainForm(SectionForm):
    section = "powertrain"

    eta = forms.FloatField(min_value=0.01, max_value=0.999, initial=0.87, help_text="Average battery-to-wheel efficiency [-]")
    beta_eta = forms.FloatField(min_value=1e-3, initial=5.0, help_text="tanh sharpness of the smoothed efficiency [1/A]")
    brake_torque_max_nm = forms.FloatField(required=False, min_value=0.0, help_text="Mechanical brake torque bound [N m]")


class SolverForm(SectionForm):
    section = "solver"

    formulation = forms.ChoiceField(
        choices=[(f.value, f.value) for f in Formulation], initial=Formulation.CONVEX.value,
        help_text="convex (second-order cone) or nonconvex (NLP)",
    )
    model = forms.CharField(initial=BatteryModelKind.VN_R.value, help_text="vn-r, vsoc-r, vsoc-rc or vsoc-rc:<set>")
    nlp_method = forms.ChoiceField(choices=[(m, m) for m in NLP_METHODS], initial="ipopt")
    tol_feas = forms.FloatField(required=False, min_value=0.0, help_text="Feasibility tolerance; default 1e-8 conic, 1e-6 NLP")
    tol_opt = forms.FloatField(required=False, min_value=0.0, help_text="Optimality tolerance; default 1e-8 conic, 1e-6 NLP")
    tol_accept = forms.FloatField(min_value=0.0, initial=1e-5, help_text="Largest scaled violation accepted as optimal")
    max_iter = forms.IntegerField(min_value=1, initial=500)
    trust_region_initial = forms.FloatField(min_value=0.0, initial=1.0, help_text="Initial SCP trust radius (scaled units)")
    merit_weight = forms.FloatField(min_value=0.0, initial=1e3, help_text="SCP l1 penalty weight on constraint violation")
    warm_start = forms.BooleanField(required=False, initial=True, help_text="Start NLP solves from the mapped convex optimum")

    def clean(self):
        cleaned = super().clean()
        for name in ("tol_feas", "tol_opt", "tol_accept"):
            if cleaned.get(name) is not None and cleaned[name] <= 0:
                self.add_error(name, "Tolerance must be positive.")
        # The formulation/model pairing is checked after command-line overrides are applied
        spec = cleaned.get("model")
        if spec:
            try:
                parse_model_spec(spec)
            except ConfigurationError as exc:
                self.add_error("model", exc.message)
        return cleaned


class DiscretizationForm(SectionForm):
    section = "discretization"

    ds_m = forms.FloatField(min_value=0.0, initial=_default_ds, help_text="Spatial step [m]; must divide the lap length")
    v_bar_mps = forms.FloatField(min_value=0.0, initial=1.0, help_text="Cone normalization speed [m/s]")
    f_bar_n = forms.FloatField(min_value=0.0, initial=1.0, help_text="Cone normalization force [N]")

    def clean(self):
        cleaned = super().clean()
        for name in ("ds_m", "v_bar_mps", "f_bar_n"):
            if cleaned.get(name) is not None and cleaned[name] <= 0:
                self.add_error(name, "Must be positive.")
        return cleaned


class SizingForm(SectionForm):
    section = "sizing"

    np_min = forms.IntegerField(min_value=1, initial=_default_np_min, help_text="Smallest N_p of the sweep")
    np_max = forms.IntegerField(min_value=1, initial=_default_np_max, help_text="Largest N_p of the sweep")
    np_step = forms.IntegerField(min_value=1, initial=1)
    models = forms.CharField(required=False, help_text="Comma-separated model specs compared by the size command")

    def clean(self):
        cleaned = super().clean()
        lo, hi = cleaned.get("np_min"), cleaned.get("np_max")
        if None not in (lo, hi) and hi < lo:
            self.add_error("np_max", "np_max must be at least np_min.")
        specs = [m.strip() for m in (cleaned.get("models") or "").split(",") if m.strip()]
        for spec in specs:
            try:
                parse_model_spec(spec)
            except ConfigurationError as exc:
                self.add_error("models", exc.message)
        cleaned["model_specs"] = specs
        return cleaned


SECTION_FORMS: dict[str, type[SectionForm]] = {
    form.section: form
    for form in (TrackForm, VehicleForm, CellForm, PackForm, PowertrainForm, SolverForm, DiscretizationForm, SizingForm)
}
