"""
Simulate the original, simplified or market model and summarize terminal levels.

Writes path_summary.csv, plus paths.csv when the recipe sets ``dump_paths``.

Usage::

    python manage.py simulate --config recipes/simulate.json [--seed N] [--out DIR] [--threads N]
"""

from coupling.management.base import ExperimentCommand
from coupling.serializers import SimulateSerializer
from coupling.services.recipes import run_simulate


class Command(ExperimentCommand):
    help = "Simulate a model family and write terminal statistics."
    serializer_class = SimulateSerializer
    recipe = staticmethod(run_simulate)
