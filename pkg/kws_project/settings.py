"""
Django settings for kws_project project.

The project hosts a single app, ``kws``, that runs the few-shot keyword
spotting pipeline from management commands. There is no web surface; the
database only keeps records of experiment runs.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import environ

# Initialize environ
env = environ.Env(
    # set casting, default value
    DEBUG=(bool, False),
    KWS_THREADS=(int, 1),
    KWS_LOG_LEVEL=(str, 'INFO'),
)

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Take environment variables from .env file
environ.Env.read_env(BASE_DIR / '.env')


# Only used for hashing inside Django; nothing here is served.
SECRET_KEY = env('SECRET_KEY', default='kws-local-secret-key-not-for-serving')
DEBUG = env('DEBUG')

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'kws',  # Keyword spotting app
]


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases

if env('DATABASE_URL', default=None):
    DATABASES = {
        'default': env.db()
    }
elif env('DB_NAME', default=None):
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': env('DB_NAME'),
            'USER': env('DB_USER', default=''),
            'PASSWORD': env('DB_PASSWORD', default=''),
            'HOST': env('DB_HOST', default='localhost'),
            'PORT': env('DB_PORT', default='5432'),
            'CONN_MAX_AGE': 60,  # Connection pooling
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'kws.sqlite3',
        }
    }


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'INFO',
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
        'kws': {
            'handlers': ['console'],
            'level': env('KWS_LOG_LEVEL'),
            'propagate': False,
        },
    },
}


# Keyword spotting pipeline defaults; only the thread count reads the environment
KWS = {
    # Pre-processing
    "SAMPLE_RATE": 16000,
    "HIGHPASS_HZ": 50.0,
    "RESAMPLE_TAPS_PER_PHASE": 64,
    "RESAMPLE_KAISER_BETA": 8.0,
    "SILENCE_PEAK": 1e-8,

    # Log-mel spectrogram
    "MEL_BINS": 64,
    "MEL_WINDOW": 1024,
    "MEL_HOP": 256,
    "LOG_FLOOR": 1e-10,

    # HFCC baseline (40 ms / 10 ms at 16 kHz)
    "HFCC_WINDOW": 640,
    "HFCC_HOP": 160,
    "HFCC_FILTERS": 29,
    "HFCC_COEFFICIENTS": 13,
    "HFCC_NFFT": 1024,

    # Channel simulation
    "CHANNEL_DELAY_SECONDS": 0.001,
    "CHANNEL_DOPPLER_HZ": 0.5,
    "CHANNEL_PATHS": 2,
    "CHANNEL_TAP_RATE_HZ": 50.0,
    "SNR_GRID_DB": (-12.0, 30.0, 3.0),

    # Calibration and DTW
    "CALIBRATION_EPSILON": 1e-6,
    "UNIT_NORM_TOLERANCE": 1e-5,
    "STEP_SIZES": ((1, 1), (2, 1), (1, 2)),

    # Detection and evaluation
    "COLLAR_SECONDS": 0.25,
    "OFFSET_RATIO": 0.5,
    "GRID_POINTS": 101,
    "MIN_DURATION_RATIO": 0.5,
    "OFFSET_MODE": "run",
    "OVERLAP_MODE": "trim",

    # Execution
    "THREADS": env('KWS_THREADS'),
}
