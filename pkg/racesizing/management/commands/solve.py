import json

from racesizing.management.base import RaceSizingCommand, add_problem_arguments, run_status
from racesizing.outputs import REPORT_FILE, TRAJECTORY_FILE, solution_report, trajectory_rows, write_json, write_rows
from racesizing.sizing import race_time, terminal_soc
from racesizing.transcription import assemble


class Command(RaceSizingCommand):
    help = "Solve one minimum-race-time problem; writes trajectory.csv, report.json and manifest.json."

    command_name = "solve"
    override_options = ("model", "formulation", "np", "ds")

    def add_command_arguments(self, parser):
        add_problem_arguments(parser)
        parser.add_argument("--np", type=int, default=None, help="Parallel strings N_p")
        parser.add_argument("--stats", action="store_true", help="Print problem statistics and the solve report as JSON")

    def run(self, **options):
        config, overrides = self.load_config(options)
        config.check_combination()
        scenario = config.sizing_scenario(verbose=options["verbose"])
        pack = scenario.pack_for(config.n_p)
        self.stderr.write(
            f"{scenario.label} {scenario.formulation.value}: N_s={pack.N_s} N_p={pack.N_p} "
            f"M_b={pack.M_b:.1f} kg, {scenario.track.n_nodes} nodes"
        )

        run_dir, recorder = self.open_run(options, config)
        t, solution, report = race_time(scenario, config.n_p)
        soc_end = terminal_soc(solution, pack)

        write_rows(run_dir / TRAJECTORY_FILE, trajectory_rows(solution))
        write_json(run_dir / REPORT_FILE, solution_report(solution, report, soc_end))
        self.close_run(run_dir, config, overrides, [TRAJECTORY_FILE, REPORT_FILE])

        recorder.entry(
            n_p=config.n_p,
            model=scenario.label,
            formulation=scenario.formulation.value,
            ds=scenario.disc.ds,
            race_time=t,
            status=run_status(report.status),
            terminal_soc=soc_end,
        )
        recorder.finish(run_status(report.status), objective=t, output_dir=str(run_dir))

        if options["stats"]:
            problem = assemble(
                scenario.formulation, scenario.track, scenario.vehicle, pack, scenario.model,
                scenario.powertrain, scenario.disc, initial_soc=scenario.initial_soc,
            )
            self.stdout.write(json.dumps({"problem": problem.stats(), "solve": report.as_dict()}, indent=2, default=str))

        self.exit_for(report.status, f"race time {t:.4f} s, terminal SoC {soc_end:.4f}, {report.iterations} iterations")
