"""Shared plumbing of the racesizing commands: scenario loading, run directories and exit codes."""
from __future__ import annotations

import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from ..exceptions import DomainError, EmptyOptimumError, RaceSizingError, WarmStartError
from ..models import Run, RunRecorder
from ..outputs import run_directory, write_manifest
from ..scenario import ScenarioConfig, load_scenario
from ..solution import Formulation, SolveStatus

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3

STATUS_EXIT = {
    SolveStatus.OPTIMAL: EXIT_OK,
    SolveStatus.INFEASIBLE: EXIT_INFEASIBLE,
    SolveStatus.MAX_ITER: EXIT_NUMERICAL,
    SolveStatus.NUMERICAL_FAILURE: EXIT_NUMERICAL,
}


def worst_status(statuses) -> SolveStatus:
    """The status with the largest exit code; numerical failure ranks above infeasible."""
    statuses = list(statuses)
    for status in (SolveStatus.NUMERICAL_FAILURE, SolveStatus.MAX_ITER, SolveStatus.INFEASIBLE):
        if status in statuses:
            return status
    return SolveStatus.OPTIMAL


class RaceSizingCommand(BaseCommand):
    """Base for commands that read a scenario file and write one run directory."""

    command_name = ""
    # Overrides this command accepts and records in the manifest, by argparse dest
    override_options: tuple[str, ...] = ()

    def add_arguments(self, parser):
        parser.add_argument("scenario", help="Scenario YAML file or bundled scenario name")
        parser.add_argument("--out", default=None, help="Directory that receives the run directory")
        parser.add_argument("--verbose", action="store_true", help="Debug logging and solver console output")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        if options["verbose"]:
            logging.getLogger("racesizing").setLevel(logging.DEBUG)
        try:
            return self.run(**options)
        except EmptyOptimumError as exc:
            raise CommandError(str(exc), returncode=EXIT_INFEASIBLE) from exc
        except (DomainError, WarmStartError) as exc:
            raise CommandError(str(exc), returncode=EXIT_NUMERICAL) from exc
        except RaceSizingError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc

    def run(self, **options):
        raise NotImplementedError

    def overrides(self, options: dict) -> dict:
        mapping = {"np": "n_p"}
        return {
            mapping.get(name, name): options[name]
            for name in self.override_options
            if options.get(name) is not None
        }

    def load_config(self, options: dict) -> tuple[ScenarioConfig, dict]:
        overrides = self.overrides(options)
        config = load_scenario(options["scenario"])
        return config.with_overrides(**overrides), overrides

    def open_run(self, options: dict, config: ScenarioConfig) -> tuple[Path, RunRecorder]:
        fingerprint = config.fingerprint()
        base = options.get("out") or settings.RACESIZING_RUNS_DIR
        run_dir = run_directory(base, self.command_name, fingerprint)
        recorder = RunRecorder(self.command_name, str(config.path or ""), fingerprint)
        self.stderr.write(f"{self.command_name}: {config.name} -> {run_dir}")
        return run_dir, recorder

    def close_run(self, run_dir: Path, config: ScenarioConfig, overrides: dict, files: list[str], extra: dict | None = None):
        options = {"overrides": overrides, **(extra or {})}
        write_manifest(run_dir, command=self.command_name, config=config, options=options, files=files)

    def exit_for(self, status: SolveStatus, message: str) -> None:
        code = STATUS_EXIT[SolveStatus(status)]
        if code == EXIT_OK:
            self.stderr.write(self.style.SUCCESS(message))
            return
        self.stderr.write(self.style.ERROR(message))
        raise CommandError(f"{message} (status {SolveStatus(status).value})", returncode=code)


def add_problem_arguments(parser, *, model: bool = True) -> None:
    if model:
        parser.add_argument("--model", default=None, help="vn-r, vsoc-r, vsoc-rc or vsoc-rc:<set>")
    parser.add_argument("--formulation", choices=[f.value for f in Formulation], default=None)
    parser.add_argument("--ds", type=float, default=None, help="Spatial step [m]")


def run_status(status: SolveStatus) -> str:
    return Run.Status(SolveStatus(status).value)
