from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from django.utils import timezone

from racesizing.models import Run


class Command(BaseCommand):
    help = "List recent runs from the run registry."

    def add_arguments(self, parser):
        parser.add_argument("--limit", type=int, default=20)
        parser.add_argument("--command", dest="run_command", choices=Run.Command.values, default=None)
        parser.add_argument("--entries", action="store_true", help="Also list the inner solves of each run")

    def handle(self, *args, **options):
        qs = Run.objects.all()
        if options["run_command"]:
            qs = qs.filter(command=options["run_command"])
        try:
            runs = list(qs.prefetch_related("entries")[: options["limit"]])
        except DatabaseError as exc:
            raise CommandError(f"run registry unavailable: {exc}. Run `python manage.py migrate` first.", returncode=1)

        if not runs:
            self.stderr.write(self.style.WARNING("No runs recorded."))
            return
        for run in runs:
            when = timezone.localtime(run.created_at).strftime("%Y-%m-%d %H:%M:%S")
            objective = "-" if run.objective is None else f"{run.objective:.4f}"
            self.stdout.write(
                f"{run.pk:>5}  {when}  {run.command:<9} {run.get_status_display():<18} {objective:>12}  "
                f"{run.fingerprint[:12]}  {run.output_dir or '-'}"
            )
            if options["entries"]:
                for e in run.entries.all():
                    time = "-" if e.race_time is None else f"{e.race_time:.4f}"
                    self.stdout.write(
                        f"        {e.model:<12} {e.formulation:<10} N_p={e.n_p:<3} ds={e.ds:g}  {e.status:<18} {time}"
                    )
