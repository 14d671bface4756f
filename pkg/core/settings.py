"""
Django settings for the cdf-toolkit project.

The project has no web surface: Django hosts the apps, the management
command that drives experiments, the template engine used for reports and
the test runner. Nothing here touches a database.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


def _env_flag(name, default=False):
    value = os.environ.get(name)
    if value is None:
        return default
    return value.strip().lower() in ("1", "true", "yes", "on")


# Only the test client and signing would use it; nothing here is served.
SECRET_KEY = os.environ.get('CDF_SECRET_KEY', 'cdf-toolkit-not-served')

DEBUG = _env_flag("CDF_DEBUG")

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'dsp',
    'nncore',
    'networks',
    'synthdata',
    'cascade',
    'reconstruct',
    'evaluation',
    'experiments',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'autoescape': False,
        },
    },
]

# No ORM models: artifacts are files in the experiment workspace.
DATABASES = {}


# Toolkit defaults. Experiment YAML files override everything except these.

CDF = {
    'WORKSPACE': Path(os.environ.get('CDF_WORKSPACE', BASE_DIR / 'work')),
    'SHOW_PROGRESS': _env_flag('CDF_SHOW_PROGRESS', default=True),
    'RUN_SLOW_TESTS': _env_flag('CDF_SLOW_TESTS'),
    'VERSION_FALLBACK': '0.1.0',
    'FEATURE_WORKERS': int(os.environ.get('CDF_FEATURE_WORKERS', '4')),
}


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

CDF_LOG_LEVEL = os.environ.get('CDF_LOG_LEVEL', 'INFO')

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
        app: {
            'handlers': ['console'],
            'level': CDF_LOG_LEVEL,
            'propagate': False,
        }
        for app in (
            'dsp',
            'nncore',
            'networks',
            'synthdata',
            'cascade',
            'reconstruct',
            'evaluation',
            'experiments',
        )
    },
}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True
