"""
Implied volatility smile of one underlying of a simulated model.

Usage::

    python manage.py smile --config recipes/smile.json [--seed N] [--out DIR] [--threads N]
"""

from coupling.management.base import ExperimentCommand
from coupling.serializers import SmileSerializer
from coupling.services.recipes import run_smile


class Command(ExperimentCommand):
    help = "Write the implied volatility smile of a simulated underlying."
    serializer_class = SmileSerializer
    recipe = staticmethod(run_smile)
