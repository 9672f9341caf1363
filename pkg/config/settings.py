"""
Django settings for the spherical-array DOA estimation project.

Process-level settings come from the environment; a .env file at the
project root is loaded first. Pipeline parameters live in PipelineConfig
files, not here.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

# No web surface is served; the key only satisfies Django's startup checks
SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'doa-local-only')

DEBUG = os.getenv('DJANGO_DEBUG', 'false').lower() == 'true'

ALLOWED_HOSTS = []


INSTALLED_APPS = [
    'doa',
]

DOA_LOG_LEVEL = os.getenv('DOA_LOG_LEVEL', 'DEBUG').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'INFO',
    },
    'loggers': {
        'doa': {
            'handlers': ['console'],
            'level': DOA_LOG_LEVEL,
            'propagate': False,
        },
    },
}


DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.getenv('DOA_DATABASE_PATH', str(BASE_DIR / 'db.sqlite3')),
    }
}


# Worker threads for STFT and SSPIV stages; the --threads flag overrides
DOA_WORKERS = int(os.getenv('DOA_WORKERS', os.cpu_count() or 1))

DOA_GEOMETRY_PATH = os.getenv(
    'DOA_GEOMETRY_PATH',
    str(BASE_DIR / 'doa' / 'data' / 'em32.json'),
)


TIME_ZONE = 'UTC'

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'
