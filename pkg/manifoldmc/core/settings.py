"""
Django settings for the manifoldmc project.

The project has no web surface: Django provides the management-command CLI,
settings loading, logging configuration and the test runner for the
`manifolds` app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from dotenv import load_dotenv
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from .env if it exists
load_dotenv(BASE_DIR / ".env")

SECRET_KEY = os.environ.get("SECRET_KEY", "unsafe-secret-key")

DEBUG = os.environ.get("DEBUG", "False") == "True"


# Application definition

INSTALLED_APPS = [
    'manifolds',
]

# No database: every command and test works on in-memory numpy state.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# ========================================
# MANIFOLDS RUN SETTINGS
# ========================================

MANIFOLDS = {
    # Default output directory when neither --out nor run.out is given
    'OUTPUT_DIR': Path(os.environ.get('MANIFOLDS_OUTPUT_DIR', BASE_DIR / 'runs')),
    # Worker threads used when validate fans out over several suites
    'WORKERS': int(os.environ.get('MANIFOLDS_WORKERS', '4')),
    # Example configs shipped with the project
    'CONFIG_DIR': BASE_DIR / 'configs',
}

MANIFOLDS_LOG_LEVEL = os.environ.get('MANIFOLDS_LOG_LEVEL', 'INFO').upper()


# ========================================
# LOGGING CONFIGURATION
# ========================================

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '[{levelname}] {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'manifolds': {
            'handlers': ['console'],
            'level': MANIFOLDS_LOG_LEVEL,
            'propagate': False,
        },
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}
