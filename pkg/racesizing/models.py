from __future__ import annotations

import logging
import math

from django.conf import settings
from django.db import DatabaseError, models, transaction
from django.utils import timezone

logger = logging.getLogger(__name__)


class Run(models.Model):
    class Command(models.TextChoices):
        SOLVE = "solve", "Solve"
        SIZE = "size", "Size"
        SWEEP_DS = "sweep_ds", "ds sweep"
        DIAGNOSE = "diagnose", "Diagnose"

    class Status(models.TextChoices):
        RUNNING = "running", "Running"
        OPTIMAL = "optimal", "Optimal"
        INFEASIBLE = "infeasible", "Infeasible"
        MAX_ITER = "max-iter", "Iteration limit"
        NUMERICAL_FAILURE = "numerical-failure", "Numerical failure"
        ERROR = "error", "Error"

    command = models.CharField(max_length=20, choices=Command.choices)
    scenario = models.CharField(max_length=500, blank=True, default="")
    fingerprint = models.CharField(max_length=64, db_index=True)
    output_dir = models.CharField(max_length=500, blank=True, default="")
    status = models.CharField(max_length=20, choices=Status.choices, default=Status.RUNNING)
    # Race time of a solve, best race time of a sizing sweep
    objective = models.FloatField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at", "-id"]
        indexes = [
            models.Index(fields=["command"], name="racesizing__command_3f1a2b_idx"),
            models.Index(fields=["status"], name="racesizing__status_8c4d1e_idx"),
        ]

    def __str__(self) -> str:
        return f"{self.command} {self.fingerprint[:8]} ({self.status})"


class RunEntry(models.Model):
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name="entries")
    n_p = models.PositiveIntegerField()
    model = models.CharField(max_length=30)
    formulation = models.CharField(max_length=20)
    ds = models.FloatField()
    race_time = models.FloatField(null=True, blank=True)
    status = models.CharField(max_length=20, choices=Run.Status.choices)
    terminal_soc = models.FloatField(null=True, blank=True)

    class Meta:
        ordering = ["run", "model", "n_p"]

    def __str__(self) -> str:
        return f"{self.model} N_p={self.n_p}: {self.status}"


def _finite(value) -> float | None:
    return None if value is None or not math.isfinite(value) else float(value)


class RunRecorder:
    """Best-effort registry writes: a missing or unmigrated database only logs a warning."""

    def __init__(self, command: str, scenario: str, fingerprint: str, enabled: bool | None = None):
        self.enabled = settings.RACESIZING_RECORD_RUNS if enabled is None else enabled
        self.run: Run | None = None
        if self.enabled:
            self._guard(self._start, command=command, scenario=scenario, fingerprint=fingerprint)

    def _start(self, **fields) -> None:
        self.run = Run.objects.create(**fields)

    def _guard(self, action, **kwargs) -> None:
        try:
            with transaction.atomic():
                action(**kwargs)
        except DatabaseError as exc:
            logger.warning("run registry unavailable, not recording: %s", exc)
            self.run = None

    def entry(self, *, n_p, model, formulation, ds, race_time, status, terminal_soc) -> None:
        if self.run is None:
            return
        self._guard(
            lambda: RunEntry.objects.create(
                run=self.run,
                n_p=n_p,
                model=model,
                formulation=formulation,
                ds=ds,
                race_time=_finite(race_time),
                status=status,
                terminal_soc=_finite(terminal_soc),
            )
        )

    def finish(self, status: str, *, objective: float | None = None, output_dir: str = "") -> None:
        if self.run is None:
            return
        run = self.run
        run.status = status
        run.objective = _finite(objective)
        run.output_dir = output_dir
        run.finished_at = timezone.now()
        self._guard(lambda: run.save(update_fields=["status", "objective", "output_dir", "finished_at"]))
