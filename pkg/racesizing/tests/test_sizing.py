from dataclasses import replace

from django.test import SimpleTestCase, tag

from ..battery import BatteryModelKind
from ..exceptions import ConfigurationError, EmptyOptimumError, UnsupportedCombinationError
from ..scenario import load_scenario
from ..sizing import (
    SizingCurve,
    SizingEntry,
    compare_curves,
    grid_search,
    model_label,
    parse_model_spec,
    race_time,
    terminal_soc,
    widened,
)
from ..solution import Formulation, SolveStatus
from .fixtures import scenario, straight
from .oracles import ORACLES


def entry(N_p, t, status=SolveStatus.OPTIMAL):
    return SizingEntry(N_p=N_p, race_time=t, status=status, terminal_soc=0.0)


class ModelSpecTests(SimpleTestCase):
    def test_parse(self):
        self.assertEqual(parse_model_spec("vn-r"), (BatteryModelKind.VN_R, None))
        self.assertEqual(parse_model_spec(" vsoc-r "), (BatteryModelKind.VSOC_R, None))
        self.assertEqual(parse_model_spec("vsoc-rc"), (BatteryModelKind.VSOC_RC, "auto"))
        self.assertEqual(parse_model_spec("vsoc-rc:rc1"), (BatteryModelKind.VSOC_RC, "rc1"))

    def test_parse_errors(self):
        with self.assertRaisesMessage(ConfigurationError, "unknown battery model"):
            parse_model_spec("thevenin")
        with self.assertRaisesMessage(ConfigurationError, "has no RC pair"):
            parse_model_spec("vsoc-r:rc2")

    def test_labels(self):
        self.assertEqual(model_label(BatteryModelKind.VN_R, None), "vn-r")
        self.assertEqual(model_label(BatteryModelKind.VSOC_RC, "rc3"), "vsoc-rc:rc3")


class SizingScenarioTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(UnsupportedCombinationError):
            scenario(model=BatteryModelKind.VSOC_R, formulation=Formulation.CONVEX)
        with self.assertRaises(ConfigurationError):
            scenario(Np_range=(20, 10))
        with self.assertRaises(ConfigurationError):
            scenario(Np_range=(0, 10))
        with self.assertRaises(ConfigurationError):
            scenario(Np_step=0)
        with self.assertRaises(ConfigurationError):
            scenario(initial_soc=0.0)

    def test_sweep_values_and_defaults(self):
        s = scenario(Np_range=(12, 28), Np_step=4)
        self.assertEqual(s.n_p_values(), [12, 16, 20, 24, 28])
        rc = scenario(model=BatteryModelKind.VSOC_RC, formulation=Formulation.NONCONVEX)
        self.assertEqual(rc.rc_set, "auto")
        self.assertEqual(rc.pack_for(24).rc_set, "rc3")
        self.assertIsNone(scenario().pack_for(24).R1)

    def test_with_model_picks_the_formulation(self):
        s = scenario()
        self.assertIs(s.with_model(BatteryModelKind.VSOC_R).formulation, Formulation.NONCONVEX)
        self.assertIs(s.with_model(BatteryModelKind.VN_R).formulation, Formulation.CONVEX)
        self.assertEqual(s.with_model(BatteryModelKind.VSOC_RC, "rc1").label, "vsoc-rc:rc1")


class SizingCurveTests(SimpleTestCase):
    def test_entries_are_sorted_and_ties_go_to_the_smaller_pack(self):
        curve = SizingCurve(entries=(entry(30, 100.0), entry(10, 101.0), entry(20, 100.0)))
        self.assertEqual([e.N_p for e in curve.entries], [10, 20, 30])
        self.assertEqual(curve.argmin_Np, 20)
        self.assertTrue(curve.is_interior_minimum())

    def test_argmin_ignores_non_optimal_entries(self):
        curve = SizingCurve(
            entries=(entry(10, 90.0, SolveStatus.INFEASIBLE), entry(20, 100.0), entry(30, 99.0))
        )
        self.assertEqual(curve.argmin_Np, 30)
        self.assertFalse(curve.is_interior_minimum())
        self.assertIsNone(SizingCurve(entries=(entry(10, 1.0, SolveStatus.MAX_ITER),)).argmin_Np)
        self.assertIsNone(curve.entry(15))

    def test_compare_curves(self):
        curves = {
            "vn-r": SizingCurve(entries=(entry(10, 100.0), entry(20, 99.0))),
            "vsoc-r": SizingCurve(entries=(entry(10, 101.0), entry(20, 98.0)), label="vsoc-r"),
        }
        result = compare_curves(curves)
        self.assertEqual(result["models"], ["vn-r", "vsoc-r"])
        self.assertEqual(result["argmin_Np"], {"vn-r": 20, "vsoc-r": 20})
        self.assertEqual([row["ordered"] for row in result["per_Np"]], [True, False])
        self.assertFalse(result["ordered_everywhere"])

        curves["vsoc-r"] = SizingCurve(entries=(entry(10, 101.0), entry(20, 99.0 - 1e-9)))
        self.assertTrue(compare_curves(curves)["ordered_everywhere"])


class GridSearchTests(SimpleTestCase):
    def test_single_point_sweep(self):
        s = scenario(Np_range=(24, 24))
        curve = grid_search(s)
        self.assertEqual(len(curve.entries), 1)
        self.assertEqual(curve.argmin_Np, 24)
        best = curve.best
        self.assertGreater(best.race_time, 0.0)
        self.assertGreater(best.terminal_soc, 0.0)
        self.assertLess(best.terminal_soc, 1.0)
        self.assertAlmostEqual(best.M_b, s.pack_for(24).M_b)

    def test_race_time_is_reproducible(self):
        s = scenario()
        first, solution, _ = race_time(s, 20)
        second, _, _ = race_time(s, 20)
        self.assertEqual(first, second)
        self.assertEqual(solution.race_time, first)
        self.assertAlmostEqual(terminal_soc(solution, s.pack_for(20)), solution.E_b[-1] / s.pack_for(20).E_b_max)

    def test_generous_pack_matches_the_widened_pack(self):
        # Nothing on the battery side binds on a short straight, so widening further changes nothing
        base = scenario(track=straight(150.0, 15.0), v0=10.0)
        generous = widened(base, 10.0)
        t_generous, _, r1 = race_time(generous, 24)
        t_widened, _, r2 = race_time(widened(base, 100.0), 24)
        self.assertEqual((r1.status, r2.status), (SolveStatus.OPTIMAL, SolveStatus.OPTIMAL))
        self.assertLessEqual(abs(t_generous - t_widened) / t_widened, ORACLES["widened-battery"].tolerance)

    def test_mass_alone_never_makes_the_car_faster(self):
        s = widened(scenario(Np_range=(10, 30), Np_step=10))
        curve = grid_search(s)
        times = [e.race_time for e in curve.entries]
        self.assertEqual(len(times), 3)
        for lighter, heavier in zip(times, times[1:]):
            self.assertGreaterEqual(heavier, lighter - 1e-7)

    def test_empty_optimum_carries_the_curve(self):
        s = scenario(Np_range=(20, 22), power_limits={"P_b_min": -600e3, "P_b_max": -1e3})
        with self.assertRaises(EmptyOptimumError) as cm:
            grid_search(s)
        curve = cm.exception.curve
        self.assertEqual([e.N_p for e in curve.entries], [20, 21, 22])
        self.assertFalse(curve.feasible)


@tag("slow")
class EnergyLimitedSweepTests(SimpleTestCase):
    """Three laps of synth-A with the start charge set so that N_p = 20 just empties the pack."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        config = load_scenario("energy-limited")
        full = config.with_overrides(initial_soc=1.0).sizing_scenario()
        _, solution, report = race_time(full, 20)
        assert report.status is SolveStatus.OPTIMAL, report.message
        used = 1.0 - terminal_soc(solution, full.pack_for(20))
        cls.scenario = replace(full, initial_soc=used)

    def test_interior_minimum_with_an_empty_pack(self):
        curve = grid_search(self.scenario)
        self.assertEqual(self.scenario.n_p_values(), [12, 16, 20, 24, 28])
        self.assertTrue(curve.is_interior_minimum(), [(e.N_p, e.race_time, e.status.value) for e in curve.entries])
        self.assertLessEqual(curve.best.terminal_soc, ORACLES["terminal-soc"].tolerance)
        margin = ORACLES["interior-minimum"].tolerance
        for end in (curve.entries[0], curve.entries[-1]):
            if end.is_optimal:
                self.assertGreater(end.race_time, curve.best.race_time + margin, end.N_p)

    def test_model_complexity_ordering(self):
        tol = ORACLES["model-ordering"].tolerance
        times = {}
        for spec in ("vn-r", "vsoc-r", "vsoc-rc:rc1", "vsoc-rc:rc3"):
            model, rc_set = parse_model_spec(spec)
            t, _, report = race_time(self.scenario.with_model(model, rc_set), 20)
            self.assertEqual(report.status, SolveStatus.OPTIMAL, spec)
            times[spec] = t
        self.assertGreaterEqual(times["vsoc-r"], times["vn-r"] * (1 - tol))
        self.assertGreaterEqual(times["vsoc-rc:rc3"], times["vsoc-r"] * (1 - tol))
        self.assertGreaterEqual(times["vsoc-rc:rc3"], times["vsoc-rc:rc1"] * (1 - tol))
