"""
Dupire local volatility from a synthetic or file-based call-price surface.

Usage::

    python manage.py dupire --config recipes/dupire.json [--seed N] [--out DIR] [--threads N]
"""

from coupling.management.base import ExperimentCommand
from coupling.serializers import DupireSerializer
from coupling.services.recipes import run_dupire


class Command(ExperimentCommand):
    help = "Build a Dupire local volatility surface."
    serializer_class = DupireSerializer
    recipe = staticmethod(run_dupire)
