"""
Worst-of prices and smiles under the original, simplified and market models.

Usage::

    python manage.py worst_of --config recipes/worst_of.json [--seed N] [--out DIR] [--threads N]
"""

from coupling.management.base import ExperimentCommand
from coupling.serializers import WorstOfSerializer
from coupling.services.recipes import run_worst_of


class Command(ExperimentCommand):
    help = "Compare worst-of prices and smiles across the three models."
    serializer_class = WorstOfSerializer
    recipe = staticmethod(run_worst_of)
