import numpy as np

from racesizing.management.base import RaceSizingCommand
from racesizing.models import Run
from racesizing.outputs import read_manifest, read_solution, write_json, write_rows
from racesizing.postprocess import (
    brake_recovery,
    envelopes,
    equivalent_efficiency,
    equivalent_resistance,
    resimulate,
    tightness,
)
from racesizing.scenario import load_scenario
from racesizing.solution import Formulation
from racesizing.transcription import assemble

SUMMARY_FILE = "diagnostics.json"
ENVELOPE_FILE = "envelopes.csv"
RESIM_FILE = "resimulation.csv"
RESISTANCE_FILE = "resistance.csv"
EFFICIENCY_FILE = "efficiency.csv"
BRAKE_FILE = "brake_recovery.csv"


def _cell(value) -> str:
    value = float(value)
    return "" if np.isnan(value) else repr(value)


class Command(RaceSizingCommand):
    help = "Run the post-optimal diagnostics on a solve run: tightness, R0*, efficiency, envelopes, re-simulation."

    command_name = "diagnose"

    def add_arguments(self, parser):
        parser.add_argument("solution", help="Run directory written by the solve command")
        super().add_arguments(parser)

    def add_command_arguments(self, parser):
        parser.add_argument("--refinement", type=int, default=10, help="Re-simulation substeps per interval")

    def run(self, **options):
        manifest = read_manifest(options["solution"])
        overrides = manifest.get("options", {}).get("overrides", {})
        config = load_scenario(options["scenario"]).with_overrides(**overrides)
        solution, report, _ = read_solution(options["solution"], fingerprint=config.fingerprint())

        track = config.race_track()
        vehicle, powertrain = config.vehicle(), config.powertrain()
        pack = config.pack(solution.N_p)
        problem = assemble(
            solution.formulation, track, vehicle, pack, solution.model, powertrain,
            config.discretization(), initial_soc=config.initial_soc,
        )
        run_dir, recorder = self.open_run(options, config)
        files = []
        summary = {"solution": str(options["solution"]), "formulation": solution.formulation.value}

        if solution.formulation is Formulation.CONVEX:
            resistance = equivalent_resistance(solution, pack)
            efficiency = equivalent_efficiency(solution, vehicle)
            t_br = brake_recovery(solution, powertrain, vehicle)
            summary["tightness"] = tightness(solution, problem).summary()
            summary["equivalent_resistance"] = resistance.summary()
            summary["equivalent_efficiency"] = efficiency.summary(powertrain.eta)
            summary["brake_recovery"] = {
                "max_Nm": float(np.max(t_br)),
                "limit_Nm": 1e-6 * float(np.max(np.abs(solution.T_w))),
            }
            write_rows(run_dir / RESISTANCE_FILE, [["s_m", "R0_star_ohm", "included"]] + [
                [repr(float(s)), _cell(r), int(inc)]
                for s, r, inc in zip(resistance.s, resistance.R0_star, resistance.included)
            ])
            write_rows(run_dir / EFFICIENCY_FILE, [["P_b_W", "P_wheel_W", "eta_star", "traction"]] + [
                [repr(float(pb)), repr(float(pw)), _cell(eta), int(tr)]
                for pb, pw, eta, tr in zip(efficiency.P_b, efficiency.P_wheel, efficiency.eta_star, efficiency.traction)
            ])
            write_rows(run_dir / BRAKE_FILE, [["s_m", "Tbr_star_Nm"]] + [
                [repr(float(s)), repr(float(t))] for s, t in zip(solution.s, t_br)
            ])
            files += [RESISTANCE_FILE, EFFICIENCY_FILE, BRAKE_FILE]
        else:
            self.stderr.write(self.style.WARNING(
                "non-convex solution: skipping tightness, equivalent resistance, efficiency and brake recovery"
            ))

        laps = envelopes(solution, track, pack)
        write_rows(run_dir / ENVELOPE_FILE, [[
            "lap", "Ib_min_A", "Ib_max_A", "Vb_min_V", "Vb_max_V", "soc_start", "soc_end", "lap_time_s", "energy_J",
        ]] + [
            [e.lap, e.I_min, e.I_max, e.V_min, e.V_max, e.soc_start, e.soc_end, e.lap_time, e.energy_used] for e in laps
        ])
        summary["laps"] = len(laps)

        defects = resimulate(solution, problem.context, refinement=options["refinement"])
        write_rows(run_dir / RESIM_FILE, [["s_m", "v_mps", "v_sim_mps", "soc_sim"]] + [
            [repr(float(s)), repr(float(v)), _cell(vs), _cell(zs)]
            for s, v, vs, zs in zip(solution.s, solution.v, defects.v_sim, defects.zeta_sim)
        ])
        summary["resimulation"] = defects.summary()
        if not defects.completed:
            self.stderr.write(self.style.WARNING(f"re-simulation incomplete: {defects.message}"))

        write_json(run_dir / SUMMARY_FILE, summary)
        files += [ENVELOPE_FILE, RESIM_FILE, SUMMARY_FILE]
        self.close_run(run_dir, config, overrides, files, {"solution": str(options["solution"])})
        recorder.finish(Run.Status.OPTIMAL, objective=solution.race_time, output_dir=str(run_dir))
        self.stderr.write(self.style.SUCCESS(
            f"diagnostics written; speed RMS defect {100 * defects.speed_rms_relative:.3f} %"
        ))
