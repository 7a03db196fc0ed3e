"""
Shared plumbing for the experiment commands.

Every command reads a JSON recipe, validates it with its serializer, runs a
function from ``coupling.services.recipes`` and writes the returned frames
as CSV files into the output directory. Failures exit with::

    2  validation error
    3  numerical failure
    4  interaction budget exceeded
"""

import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import APIException

from coupling.constants import EXIT_CODES
from coupling.services.sde_engine import resolve_threads
from coupling.utils import load_config, write_csv_atomic


class ExperimentCommand(BaseCommand):
    serializer_class = None
    recipe = None

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="Path to the JSON recipe.")
        parser.add_argument("--seed", type=int, default=None, help="Overrides the recipe seed.")
        parser.add_argument("--out", default=None, help="Output directory (default COUPLING_OUTPUT_DIR).")
        parser.add_argument(
            "--threads",
            type=int,
            default=None,
            help="Worker threads, 0 = one per CPU (default COUPLING_THREADS). Never changes results.",
        )

    def handle(self, *args, **options):
        config_path = Path(options["config"])
        try:
            config = load_config(config_path)
            if options["seed"] is not None:
                config["seed"] = options["seed"]

            serializer = self.serializer_class(data=config, context={"base_dir": config_path.parent})
            if not serializer.is_valid():
                raise CommandError(
                    f"Invalid config {config_path}: {json.dumps(serializer.errors)}",
                    returncode=EXIT_CODES[400],
                )

            threads = options["threads"]
            threads = resolve_threads(settings.COUPLING_THREADS if threads is None else threads)
            outputs = self.recipe(serializer.validated_data, threads=threads)
        except APIException as exc:
            raise CommandError(
                f"{exc.default_code}: {exc.detail}",
                returncode=EXIT_CODES.get(exc.status_code, 1),
            ) from exc

        out_dir = Path(options["out"] or settings.COUPLING_OUTPUT_DIR)
        for filename, frame in outputs.items():
            path = write_csv_atomic(frame, out_dir / filename)
            self.stdout.write(f"Wrote {path} ({len(frame)} row(s)).")
        self.stdout.write(self.style.SUCCESS(f"{self.name_for_output()} finished: {len(outputs)} file(s)."))

    def name_for_output(self) -> str:
        return type(self).__module__.rsplit(".", 1)[-1]
