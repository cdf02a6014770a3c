from django.apps import AppConfig

class RacesizingConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "racesizing"
    verbose_name = "Race sizing"
