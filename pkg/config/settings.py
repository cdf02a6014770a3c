from pathlib import Path
import os

BASE_DIR = Path(__file__).resolve().parent.parent

def env(name: str, default: str | None = None) -> str | None:
    return os.environ.get(name, default)

SECRET_KEY = env("DJANGO_SECRET_KEY", "dev-secret-key-change-this")
DEBUG = env("DJANGO_DEBUG", "1") == "1"

ALLOWED_HOSTS: list[str] = []

INSTALLED_APPS = [
    "racesizing",
]

DATABASES = {
    "default": {
        "ENGINE": env("DB_ENGINE", "django.db.backends.sqlite3"),
        "NAME": env("DB_NAME", str(BASE_DIR / "db.sqlite3")),
    }
}

LANGUAGE_CODE = "en-us"
TIME_ZONE = env("DJANGO_TIME_ZONE", "UTC")
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Human logs go to stderr; stdout is reserved for machine-readable output (--stats)
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s %(message)s"},
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "plain",
        },
    },
    "loggers": {
        "racesizing": {
            "handlers": ["console"],
            "level": env("RACESIZING_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}

# App-level constants
RACESIZING_DATA_DIR = BASE_DIR / "racesizing" / "data"
RACESIZING_RUNS_DIR = Path(env("RACESIZING_RUNS_DIR", str(BASE_DIR / "runs")))
RACESIZING_DEFAULT_DS = float(env("RACESIZING_DEFAULT_DS", "15.0"))
RACESIZING_NP_RANGE = (10, 30)
RACESIZING_DEFAULT_JOBS = int(env("RACESIZING_JOBS", "1"))

# Run registry is best-effort; set to 0 to skip database writes entirely
RACESIZING_RECORD_RUNS = env("RACESIZING_RECORD_RUNS", "1") == "1"
