"""
Django settings for config project.

The project has no web surface: Django supplies the app registry, the
management commands that drive the experiments and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


SECRET_KEY = os.getenv("SECRET_KEY", "django-insecure-gma-bench")

DEBUG = os.getenv("DEBUG", "True").lower() in ("true", "1", "yes")

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    # Local apps
    "channel.apps.ChannelConfig",
    "learner.apps.LearnerAppConfig",
    "harness.apps.HarnessConfig",
    "baselines.apps.BaselinesConfig",
    "bench.apps.BenchConfig",
]


# Database
# Nothing is persisted through the ORM; the test runner still expects one.

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": BASE_DIR / "db.sqlite3",
    }
}


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# Experiments
GMA_OUTPUT_DIR = Path(os.getenv("GMA_OUTPUT_DIR", str(BASE_DIR / "runs")))
GMA_WORKERS = int(os.getenv("GMA_WORKERS", "1"))
GMA_PROGRESS = os.getenv("GMA_PROGRESS", "True").lower() in ("true", "1", "yes")


# Logging
GMA_LOG_LEVEL = os.getenv("GMA_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        app: {"handlers": ["console"], "level": GMA_LOG_LEVEL, "propagate": False}
        for app in ("channel", "learner", "harness", "baselines", "bench")
    },
}
