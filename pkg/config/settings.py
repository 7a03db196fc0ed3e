"""
Django settings for the index/stock coupling toolchain.

The project has no web surface: Django hosts the management commands,
the DRF serializers used to validate run configs and the logging setup.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "coupling-local-only-not-a-secret")

DEBUG = False

ALLOWED_HOSTS: list[str] = []


# Application definition

INSTALLED_APPS = [
    "rest_framework",
    "coupling",
]

# No database: simulations are pure functions of (config, seed).
DATABASES: dict = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "plain"},
    },
    "loggers": {
        "coupling": {
            "handlers": ["console"],
            "level": os.environ.get("COUPLING_LOG_LEVEL", "INFO"),
        },
    },
}

# ---------------------------------------------------------------------------
# Coupling toolchain
# ---------------------------------------------------------------------------
# 0 = one worker per CPU. Results never depend on this value.
COUPLING_THREADS = int(os.environ.get("COUPLING_THREADS", "0"))

# Ceiling on M * N * n for the interacting (M+1)-dimensional particle system.
COUPLING_INTERACTION_BUDGET = float(os.environ.get("COUPLING_INTERACTION_BUDGET", "2e8"))

COUPLING_OUTPUT_DIR = os.environ.get("COUPLING_OUTPUT_DIR", str(BASE_DIR / "out"))
