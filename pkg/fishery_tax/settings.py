"""
Django settings for the fishery_tax project.

The project has no web surface: Django provides configuration, the run-history
database, logging and the `fishtax` management command.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/
"""

from pathlib import Path
from decouple import config
import dj_database_url

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default="django-insecure-fishtax-local-only-0c7c1b1e9d")

DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    "django.contrib.contenttypes",
    "fishery",
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

DATABASE_URL = config('DATABASE_URL', default=None)

if DATABASE_URL:
    DATABASES = {
        'default': dj_database_url.parse(DATABASE_URL)
    }
else:
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


# Solver defaults (overridden per scenario by the config's "solver" section)

FISHTAX_GRID_NODES = config('FISHTAX_GRID_NODES', default=4097, cast=int)
FISHTAX_REVENUE_NODES = config('FISHTAX_REVENUE_NODES', default=4097, cast=int)
FISHTAX_X_MIN = config('FISHTAX_X_MIN', default=1e-3, cast=float)
FISHTAX_RESIDUAL_TOL = config('FISHTAX_RESIDUAL_TOL', default=1e-6, cast=float)
FISHTAX_ARRIVAL_TOL = config('FISHTAX_ARRIVAL_TOL', default=1e-6, cast=float)
FISHTAX_OUTPUT_DIR = config('FISHTAX_OUTPUT_DIR', default=str(BASE_DIR / 'results'))
FISHTAX_LOG_LEVEL = config('FISHTAX_LOG_LEVEL', default='INFO')


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'fishery': {
            'handlers': ['console'],
            'level': FISHTAX_LOG_LEVEL,
            'propagate': False,
        },
    },
}
