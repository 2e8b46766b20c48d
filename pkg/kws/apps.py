from django.apps import AppConfig


class KwsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'kws'
    verbose_name = 'Keyword Spotting'
