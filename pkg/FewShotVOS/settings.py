"""
Django settings for the FewShotVOS project.

The project has no web surface and no database: Django provides the settings
layer, the logging configuration, the management-command CLI and the test
runner. Everything tunable comes from the environment through python-decouple.
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('SECRET_KEY', default='fewshot-vos-insecure-desk-scale-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    'rest_framework',

    'episodes',
    'prototypes',
    'attention',
    'segmentation',
    'metrics',
    'verify',
    'pipeline',
]

# No tables anywhere: every tensor lives in the HPTN container on disk.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

# Pipeline configuration

HPAN_LOG = config('HPAN_LOG', default='info').lower()
if HPAN_LOG not in ('error', 'info', 'debug'):
    HPAN_LOG = 'info'

HPAN_OUTPUT_DIR = Path(config('HPAN_OUTPUT_DIR', default=str(BASE_DIR / 'out')))
HPAN_SEED = config('HPAN_SEED', default=0, cast=int)
HPAN_JOBS = config('HPAN_JOBS', default=1, cast=int)

# Full-rank attention refuses to run above this many predicted multiply-accumulates.
HPAN_FULL_ATTENTION_MAX_MACS = config('HPAN_FULL_ATTENTION_MAX_MACS', default=10 ** 10, cast=int)

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
    'root': {
        'handlers': ['console'],
        'level': HPAN_LOG.upper(),
    },
}

REST_FRAMEWORK = {
    'UNAUTHENTICATED_USER': None,
}
