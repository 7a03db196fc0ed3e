"""
Theoretical bounds and the coupled convergence study for an equal-weight basket.

Usage::

    python manage.py theorems --config recipes/theorem_rate.json [--seed N] [--out DIR] [--threads N]
"""

from coupling.management.base import ExperimentCommand
from coupling.serializers import TheoremsSerializer
from coupling.services.recipes import run_theorems


class Command(ExperimentCommand):
    help = "Write bound reports and the convergence study."
    serializer_class = TheoremsSerializer
    recipe = staticmethod(run_theorems)
