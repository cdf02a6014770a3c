from django.conf import settings
from django.core.management.base import CommandError

from racesizing.exceptions import EmptyOptimumError
from racesizing.management.base import EXIT_INFEASIBLE, RaceSizingCommand, add_problem_arguments, run_status
from racesizing.models import Run
from racesizing.outputs import REPORT_FILE, sizing_file, sizing_rows, write_json, write_rows
from racesizing.reports import write_sizing_pdf
from racesizing.sizing import compare_curves, grid_search

PDF_FILE = "sizing.pdf"


def curve_summary(curve) -> dict:
    best = curve.best
    return {
        "formulation": curve.formulation.value,
        "argmin_Np": curve.argmin_Np,
        "best_race_time_s": best.race_time if best is not None else None,
        "terminal_soc_at_argmin": best.terminal_soc if best is not None else None,
        "interior_minimum": curve.is_interior_minimum(),
        "entries": [
            {
                "N_p": e.N_p,
                "race_time_s": e.race_time,
                "status": e.status.value,
                "terminal_soc": e.terminal_soc,
                "battery_mass_kg": e.M_b,
                "iterations": e.iterations,
                "wall_time_s": e.wall_time,
            }
            for e in curve.entries
        ],
    }


class Command(RaceSizingCommand):
    help = "Sweep the number of parallel strings N_p and report the race-time sizing curve of each model."

    command_name = "size"
    override_options = ("formulation", "ds", "np_range")

    def add_command_arguments(self, parser):
        add_problem_arguments(parser, model=False)
        parser.add_argument("--models", default=None, help="Comma-separated model specs, e.g. vn-r,vsoc-r,vsoc-rc:rc3")
        parser.add_argument("--np-range", type=int, nargs=2, metavar=("MIN", "MAX"), default=None)
        parser.add_argument("--jobs", type=int, default=None, help="Concurrent inner solves")
        parser.add_argument("--pdf", action="store_true", help="Also write sizing.pdf")

    def run(self, **options):
        config, overrides = self.load_config(options)
        jobs = options["jobs"] or settings.RACESIZING_DEFAULT_JOBS
        if options["models"]:
            specs = [m.strip() for m in options["models"].split(",") if m.strip()]
        else:
            specs = config.model_specs or [config.values["solver"]["model"]]

        scenarios = [config.sizing_scenario(spec, verbose=options["verbose"]) for spec in specs]
        run_dir, recorder = self.open_run(options, config)

        curves = {}
        for scenario in scenarios:
            lo, hi = scenario.Np_range
            self.stderr.write(f"{scenario.label} ({scenario.formulation.value}): N_p {lo}..{hi}, {jobs} job(s)")
            try:
                curve = grid_search(scenario, jobs=jobs)
            except EmptyOptimumError as exc:
                self.stderr.write(self.style.WARNING(str(exc)))
                curve = exc.curve
            curves[scenario.label] = curve
            for e in curve.entries:
                recorder.entry(
                    n_p=e.N_p,
                    model=scenario.label,
                    formulation=scenario.formulation.value,
                    ds=scenario.disc.ds,
                    race_time=e.race_time,
                    status=run_status(e.status),
                    terminal_soc=e.terminal_soc,
                )

        files = []
        for i, (label, curve) in enumerate(curves.items()):
            name = sizing_file(label, first=i == 0)
            write_rows(run_dir / name, sizing_rows(curve))
            files.append(name)
        summary = {
            "scenario": config.name,
            "fingerprint": config.fingerprint(),
            "curves": {label: curve_summary(curve) for label, curve in curves.items()},
        }
        if len(curves) > 1:
            summary["comparison"] = compare_curves(curves)
        write_json(run_dir / REPORT_FILE, summary)
        files.append(REPORT_FILE)
        if options["pdf"]:
            write_sizing_pdf(
                run_dir / PDF_FILE, curves, title=f"Battery sizing: {config.name}",
                subtitle=f"N_s = {config.n_s}, ds = {config.values['discretization']['ds_m']:g} m",
            )
            files.append(PDF_FILE)
        self.close_run(run_dir, config, overrides, files, {"models": specs, "jobs": jobs})

        feasible = {label: c for label, c in curves.items() if c.argmin_Np is not None}
        if not feasible:
            recorder.finish(Run.Status.INFEASIBLE, output_dir=str(run_dir))
            raise CommandError("no model produced a feasible pack in the N_p range", returncode=EXIT_INFEASIBLE)
        best = min(c.best.race_time for c in feasible.values())
        recorder.finish(Run.Status.OPTIMAL, objective=best, output_dir=str(run_dir))
        for label, curve in curves.items():
            if curve.argmin_Np is None:
                self.stderr.write(self.style.WARNING(f"{label}: no feasible N_p"))
            else:
                self.stderr.write(self.style.SUCCESS(
                    f"{label}: argmin N_p = {curve.argmin_Np}, race time {curve.best.race_time:.4f} s"
                ))
