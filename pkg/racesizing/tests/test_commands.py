import csv
import json
import re
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings, tag

from ..models import Run
from ..outputs import MANIFEST_FILE, REPORT_FILE, TRAJECTORY_FILE, file_digest
from ..scenario import load_scenario
from ..solution import TRAJECTORY_HEADER
from .oracles import ORACLES

CORNER = """\
name: corner
step_m: 15.0
segments:
  - {kind: straight, length_m: 120}
  - {kind: arc, length_m: 60, radius_m: 40}
  - {kind: straight, length_m: 120}
"""

HILL = """\
name: hill
step_m: 15.0
segments:
  - {kind: straight, length_m: 300, slope_rad: 0.2}
"""

SCENARIO = """\
track:
  synth: corner.yaml
vehicle:
  v0_mps: 20.0
pack:
  n_p: 24
discretization:
  ds_m: 15.0
sizing:
  np_min: 23
  np_max: 24
"""


@override_settings(RACESIZING_RECORD_RUNS=True)
class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.out = self.dir / "runs"
        (self.dir / "corner.yaml").write_text(CORNER, encoding="utf-8")
        (self.dir / "hill.yaml").write_text(HILL, encoding="utf-8")
        self.scenario = self.scenario_file("scenario.yaml", SCENARIO)

    def tearDown(self):
        self.tmp.cleanup()

    def scenario_file(self, name: str, text: str) -> str:
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    def call(self, command: str, *args, **kwargs) -> tuple[str, str]:
        stdout, stderr = StringIO(), StringIO()
        call_command(command, *args, "--out", str(self.out), stdout=stdout, stderr=stderr, **kwargs)
        return stdout.getvalue(), stderr.getvalue()

    def run_dir(self, command: str) -> Path:
        dirs = sorted(self.out.glob(f"{command}-*"))
        self.assertEqual(len(dirs), 1, dirs)
        return dirs[0]

    def assertExitCode(self, code: int, command: str, *args) -> CommandError:
        with self.assertRaises(CommandError) as cm:
            self.call(command, *args)
        self.assertEqual(cm.exception.returncode, code, str(cm.exception))
        return cm.exception


class SolveCommandTests(CommandTestCase):
    def test_convex_solve_writes_the_run_directory(self):
        _, err = self.call("solve", self.scenario)
        run_dir = self.run_dir("solve")
        fingerprint = load_scenario(self.scenario).fingerprint()
        self.assertRegex(run_dir.name, rf"^solve-\d{{8}}T\d+-{fingerprint[:8]}$")
        self.assertIn("race time", err)

        with (run_dir / TRAJECTORY_FILE).open(newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], TRAJECTORY_HEADER)
        self.assertEqual(len(rows), 1 + 21)
        # Convex runs carry no current or SoC columns
        self.assertEqual(rows[1][TRAJECTORY_HEADER.index("Ib_A")], "")
        self.assertNotEqual(rows[1][TRAJECTORY_HEADER.index("Eb_J")], "")

        report = json.loads((run_dir / REPORT_FILE).read_text())
        self.assertEqual(report["formulation"], "convex")
        self.assertEqual(report["N_p"], 24)
        self.assertEqual(report["solve"]["status"], "optimal")
        self.assertGreater(report["race_time_s"], 0.0)
        self.assertLess(report["terminal_soc"], 1.0)

        manifest = json.loads((run_dir / MANIFEST_FILE).read_text())
        self.assertEqual(manifest["command"], "solve")
        self.assertEqual(manifest["fingerprint"], fingerprint)
        self.assertEqual(set(manifest["files"]), {TRAJECTORY_FILE, REPORT_FILE})
        self.assertEqual(manifest["files"][REPORT_FILE], file_digest(run_dir / REPORT_FILE))
        self.assertIn("casadi", manifest["libraries"])

        run = Run.objects.get()
        self.assertEqual((run.command, run.status), (Run.Command.SOLVE, Run.Status.OPTIMAL))
        self.assertAlmostEqual(run.objective, report["race_time_s"])
        self.assertEqual(run.output_dir, str(run_dir))
        entry = run.entries.get()
        self.assertEqual((entry.n_p, entry.model, entry.formulation), (24, "vn-r", "convex"))

    def test_nonconvex_overrides_are_recorded(self):
        self.call("solve", self.scenario, "--model", "vsoc-r", "--formulation", "nonconvex", "--np", "20")
        run_dir = self.run_dir("solve")
        report = json.loads((run_dir / REPORT_FILE).read_text())
        self.assertEqual((report["formulation"], report["model"], report["N_p"]), ("nonconvex", "vsoc-r", 20))
        self.assertEqual(report["solve"]["solver"], "ipopt")
        manifest = json.loads((run_dir / MANIFEST_FILE).read_text())
        self.assertEqual(
            manifest["options"]["overrides"], {"model": "vsoc-r", "formulation": "nonconvex", "n_p": 20}
        )
        self.assertNotEqual(manifest["fingerprint"], load_scenario(self.scenario).fingerprint())

    def test_stats_are_printed_as_json(self):
        out, _ = self.call("solve", self.scenario, "--stats")
        stats = json.loads(out)
        self.assertEqual(stats["problem"]["variables"], 21 * 7)
        self.assertEqual(stats["solve"]["status"], "optimal")

    def test_configuration_errors_exit_with_1(self):
        exc = self.assertExitCode(1, "solve", self.scenario, "--model", "vsoc-r")
        self.assertIn("unsupported combination", str(exc))
        self.assertFalse(self.out.exists())

        missing = self.scenario_file("missing.yaml", SCENARIO.replace("corner.yaml", "nowhere.yaml"))
        self.assertExitCode(1, "solve", missing)
        self.assertExitCode(1, "solve", self.scenario, "--ds", "7")
        self.assertExitCode(1, "solve", str(self.dir / "absent.yaml"))
        self.assertFalse(Run.objects.exists())


class DiagnoseCommandTests(CommandTestCase):
    def solve(self, *args) -> Path:
        self.call("solve", self.scenario, *args)
        return self.run_dir("solve")

    def test_convex_diagnostics(self):
        solution = self.solve()
        self.call("diagnose", str(solution), self.scenario)
        run_dir = self.run_dir("diagnose")
        for name in ("diagnostics.json", "envelopes.csv", "resimulation.csv", "resistance.csv", "efficiency.csv", "brake_recovery.csv"):
            self.assertTrue((run_dir / name).exists(), name)
        summary = json.loads((run_dir / "diagnostics.json").read_text())
        self.assertEqual(summary["formulation"], "convex")
        self.assertEqual(summary["laps"], 1)
        self.assertIn("lethargy", summary["tightness"])
        self.assertTrue(summary["resimulation"]["completed"])
        self.assertLessEqual(summary["brake_recovery"]["max_Nm"], 1e-6 * 1e4)
        self.assertEqual(Run.objects.filter(command=Run.Command.DIAGNOSE).count(), 1)

    def test_nonconvex_diagnostics_skip_the_convex_analyses(self):
        solution = self.solve("--formulation", "nonconvex", "--model", "vsoc-r")
        _, err = self.call("diagnose", str(solution), self.scenario)
        run_dir = self.run_dir("diagnose")
        self.assertIn("skipping tightness", err)
        self.assertFalse((run_dir / "resistance.csv").exists())
        summary = json.loads((run_dir / "diagnostics.json").read_text())
        self.assertNotIn("tightness", summary)
        self.assertIn("resimulation", summary)

    def test_tampered_output_is_refused(self):
        solution = self.solve()
        with (solution / TRAJECTORY_FILE).open("a") as handle:
            handle.write("0,0,0,0,0,0,0,0,0,0,0,0,0\n")
        exc = self.assertExitCode(1, "diagnose", str(solution), self.scenario)
        self.assertIn("checksum mismatch", str(exc))

    def test_scenario_fingerprint_must_match(self):
        solution = self.solve()
        other = self.scenario_file("other.yaml", SCENARIO.replace("v0_mps: 20.0", "v0_mps: 21.0"))
        exc = self.assertExitCode(1, "diagnose", str(solution), other)
        self.assertIn("fingerprint mismatch", str(exc))

    def test_not_a_run_directory(self):
        self.assertExitCode(1, "diagnose", str(self.dir), self.scenario)


class SizeCommandTests(CommandTestCase):
    def test_single_point_sweep(self):
        self.call("size", self.scenario, "--np-range", "24", "24")
        run_dir = self.run_dir("size")
        with (run_dir / "sizing.csv").open(newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["Np", "race_time_s", "status", "terminal_soc"])
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1][:1] + rows[1][2:3], ["24", "optimal"])
        report = json.loads((run_dir / REPORT_FILE).read_text())
        curve = report["curves"]["vn-r"]
        self.assertEqual(curve["argmin_Np"], 24)
        self.assertFalse(curve["interior_minimum"])
        self.assertNotIn("comparison", report)
        run = Run.objects.get()
        self.assertEqual(run.status, Run.Status.OPTIMAL)
        self.assertEqual(run.entries.count(), 1)

    def test_model_comparison_with_pdf(self):
        self.call("size", self.scenario, "--models", "vn-r,vsoc-r", "--pdf")
        run_dir = self.run_dir("size")
        for name in ("sizing.csv", "sizing-vsoc-r.csv", "sizing.pdf", REPORT_FILE, MANIFEST_FILE):
            self.assertTrue((run_dir / name).exists(), name)
        self.assertTrue((run_dir / "sizing.pdf").read_bytes().startswith(b"%PDF"))
        report = json.loads((run_dir / REPORT_FILE).read_text())
        self.assertEqual(report["comparison"]["models"], ["vn-r", "vsoc-r"])
        self.assertEqual([row["N_p"] for row in report["comparison"]["per_Np"]], [23, 24])
        self.assertEqual(report["curves"]["vsoc-r"]["formulation"], "nonconvex")
        self.assertEqual(Run.objects.get().entries.count(), 4)

    def test_no_feasible_pack_exits_with_2(self):
        # Uphill with no discharge power: the car stalls before the line
        hill = self.scenario_file(
            "hill-scenario.yaml",
            SCENARIO.replace("corner.yaml", "hill.yaml").replace("  n_p: 24\n", "  n_p: 24\n  p_b_max_w: 0\n"),
        )
        exc = self.assertExitCode(2, "size", hill, "--np-range", "24", "24")
        self.assertIn("no model produced a feasible pack", str(exc))
        self.assertEqual(Run.objects.get().status, Run.Status.INFEASIBLE)
        self.assertTrue((self.run_dir("size") / "sizing.csv").exists())


class SweepDsCommandTests(CommandTestCase):
    def test_single_step(self):
        self.call("sweep_ds", self.scenario, "--ds-list", "15")
        run_dir = self.run_dir("sweep_ds")
        with (run_dir / "sweep_ds.csv").open(newline="") as handle:
            rows = list(csv.reader(handle))
        self.assertEqual(rows[0][:4], ["ds_m", "t_convex_s", "t_nonconvex_s", "gap_rel"])
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[1][4:6], ["optimal", "optimal"])
        report = json.loads((run_dir / REPORT_FILE).read_text())
        self.assertEqual(len(report["rows"]), 1)
        self.assertLess(abs(report["rows"][0]["gap_rel"]), 1e-2)
        self.assertEqual(Run.objects.get().entries.count(), 2)

    def test_vsoc_scenario_is_rejected(self):
        vsoc = self.scenario_file(
            "vsoc.yaml", SCENARIO + "solver:\n  formulation: nonconvex\n  model: vsoc-r\n"
        )
        exc = self.assertExitCode(1, "sweep_ds", vsoc, "--ds-list", "15")
        self.assertIn("needs Vn-R", str(exc))

    def test_step_that_does_not_divide_the_lap(self):
        self.assertExitCode(1, "sweep_ds", self.scenario, "--ds-list", "15,7")
        self.assertFalse(self.out.exists())


@tag("slow")
class SweepDsReferenceTests(CommandTestCase):
    def test_gap_shrinks_with_the_step_on_synth_a(self):
        self.call("sweep_ds", "synth-A")
        report = json.loads((self.run_dir("sweep_ds") / REPORT_FILE).read_text())
        self.assertEqual([row["ds_m"] for row in report["rows"]], [60.0, 30.0, 15.0])
        self.assertTrue(report["gap_strictly_decreasing"], [row["gap_rel"] for row in report["rows"]])
        self.assertLessEqual(abs(report["rows"][-1]["gap_rel"]), ORACLES["convex-nonconvex-gap"].tolerance)
        step = ORACLES["ds-convergence"].tolerance
        gaps = [abs(row["gap_rel"]) for row in report["rows"]]
        p95 = [row["speed_difference_mps"]["p95"] for row in report["rows"]]
        for coarse, fine in zip(gaps, gaps[1:]):
            self.assertLess(fine, coarse - step, gaps)
        for coarse, fine in zip(p95, p95[1:]):
            self.assertLess(fine, coarse - step, p95)


class RunsCommandTests(CommandTestCase):
    def runs(self, *args) -> tuple[str, str]:
        stdout, stderr = StringIO(), StringIO()
        call_command("runs", *args, stdout=stdout, stderr=stderr)
        return stdout.getvalue(), stderr.getvalue()

    def test_empty_registry(self):
        out, err = self.runs()
        self.assertEqual(out, "")
        self.assertIn("No runs recorded.", err)

    def test_lists_runs_and_entries(self):
        self.call("solve", self.scenario)
        out, _ = self.runs("--entries")
        self.assertIn("solve", out)
        self.assertIn("vn-r", out)
        self.assertIn("N_p=24", out)
        self.assertTrue(re.search(r"Optimal\s", out))
        out, err = self.runs("--command", "size")
        self.assertEqual(out, "")
        self.assertIn("No runs recorded.", err)

    @override_settings(RACESIZING_RECORD_RUNS=False)
    def test_recording_can_be_switched_off(self):
        self.call("solve", self.scenario)
        self.assertFalse(Run.objects.exists())
        self.assertTrue(self.run_dir("solve").exists())
