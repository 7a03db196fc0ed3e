"""
Calibrate the idiosyncratic volatility with the interacting particle system.

A ``stock`` block runs the single-stock system (and the independent second
stage when ``independent_paths`` > 0); a ``basket`` block runs the
calibrated original model. Writes eta surfaces, coverage and the per-step report.

Usage::

    python manage.py calibrate --config recipes/toy_calibration.json [--seed N] [--out DIR] [--threads N]
"""

from coupling.management.base import ExperimentCommand
from coupling.serializers import CalibrateSerializer
from coupling.services.recipes import run_calibrate


class Command(ExperimentCommand):
    help = "Calibrate eta surfaces by particle simulation."
    serializer_class = CalibrateSerializer
    recipe = staticmethod(run_calibrate)
