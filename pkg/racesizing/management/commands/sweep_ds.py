from concurrent.futures import ProcessPoolExecutor

from django.conf import settings

from racesizing.battery import BatteryModelKind
from racesizing.exceptions import UnsupportedCombinationError
from racesizing.management.base import RaceSizingCommand, run_status, worst_status
from racesizing.outputs import REPORT_FILE, write_json, write_rows
from racesizing.postprocess import QUANTILES, quantiles, speed_difference
from racesizing.sizing import race_time
from racesizing.solution import Formulation, SolveStatus

SWEEP_FILE = "sweep_ds.csv"
SWEEP_HEADER = ["ds_m", "t_convex_s", "t_nonconvex_s", "gap_rel", "status_convex", "status_nonconvex"] + [
    f"dv_p{q}_mps" for q in QUANTILES
]


def solve_pair(config, n_p: int) -> dict:
    """Both formulations of the Vn-R problem on one grid."""
    convex = config.sizing_scenario(formulation=Formulation.CONVEX)
    nonconvex = config.sizing_scenario(formulation=Formulation.NONCONVEX)
    t_c, sol_c, rep_c = race_time(convex, n_p)
    t_n, sol_n, rep_n = race_time(nonconvex, n_p)
    both = rep_c.status is SolveStatus.OPTIMAL and rep_n.status is SolveStatus.OPTIMAL
    gap = (t_n - t_c) / t_c if both else None
    dv = quantiles(speed_difference(sol_c, sol_n)) if both else {f"p{q}": None for q in QUANTILES}
    return {
        "ds_m": convex.disc.ds,
        "t_convex_s": t_c,
        "t_nonconvex_s": t_n,
        "gap_rel": gap,
        "status_convex": rep_c.status,
        "status_nonconvex": rep_n.status,
        "speed_difference_mps": dv,
    }


class Command(RaceSizingCommand):
    help = "Solve the convex and non-convex Vn-R problems over a list of spatial steps and tabulate the gap."

    command_name = "sweep_ds"
    override_options = ("np",)

    def add_command_arguments(self, parser):
        parser.add_argument("--ds-list", default="60,30,15", help="Comma-separated spatial steps [m]")
        parser.add_argument("--np", type=int, default=None, help="Parallel strings N_p")
        parser.add_argument("--jobs", type=int, default=None, help="Concurrent step sizes")

    def run(self, **options):
        config, overrides = self.load_config(options)
        if config.model is not BatteryModelKind.VN_R:
            raise UnsupportedCombinationError(
                f"unsupported combination: the ds sweep compares both formulations and needs Vn-R, got {config.model.label}",
                path=config.path,
            )
        ds_list = [float(v) for v in options["ds_list"].split(",") if v.strip()]
        jobs = options["jobs"] or settings.RACESIZING_DEFAULT_JOBS
        configs = [config.with_overrides(ds=ds) for ds in ds_list]
        # A ds that does not divide the lap fails here, before any solve
        for cfg in configs:
            cfg.race_track()
        run_dir, recorder = self.open_run(options, config)

        if jobs > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
                rows = list(pool.map(solve_pair, configs, [config.n_p] * len(configs)))
        else:
            rows = [solve_pair(cfg, config.n_p) for cfg in configs]

        table = [SWEEP_HEADER]
        for row in rows:
            table.append(
                [row["ds_m"], row["t_convex_s"], row["t_nonconvex_s"], row["gap_rel"],
                 row["status_convex"].value, row["status_nonconvex"].value]
                + [row["speed_difference_mps"][f"p{q}"] for q in QUANTILES]
            )
            for formulation, key in ((Formulation.CONVEX, "convex"), (Formulation.NONCONVEX, "nonconvex")):
                recorder.entry(
                    n_p=config.n_p, model=BatteryModelKind.VN_R.value, formulation=formulation.value,
                    ds=row["ds_m"], race_time=row[f"t_{key}_s"], status=run_status(row[f"status_{key}"]),
                    terminal_soc=None,
                )
            self.stderr.write(
                f"ds={row['ds_m']:g} m: convex {row['t_convex_s']:.4f} s, non-convex {row['t_nonconvex_s']:.4f} s"
            )
        gaps = [abs(r["gap_rel"]) for r in rows if r["gap_rel"] is not None]
        ordered = sorted(rows, key=lambda r: -r["ds_m"])
        decreasing = len(gaps) == len(rows) and all(
            abs(b["gap_rel"]) < abs(a["gap_rel"]) for a, b in zip(ordered, ordered[1:])
        )
        write_rows(run_dir / SWEEP_FILE, ([("" if v is None else v) for v in line] for line in table))
        write_json(run_dir / REPORT_FILE, {"N_p": config.n_p, "rows": rows, "gap_strictly_decreasing": decreasing})
        self.close_run(run_dir, config, overrides, [SWEEP_FILE, REPORT_FILE], {"ds_list": ds_list, "jobs": jobs})

        status = worst_status([r["status_convex"] for r in rows] + [r["status_nonconvex"] for r in rows])
        recorder.finish(run_status(status), objective=max(gaps) if gaps else None, output_dir=str(run_dir))
        if status is SolveStatus.OPTIMAL:
            self.stderr.write(f"|gap| strictly decreasing with ds: {decreasing}")
        self.exit_for(status, f"ds sweep over {len(rows)} step(s) finished")
