from django.apps import AppConfig


class PrototypesConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'prototypes'
    verbose_name = 'Prototype graph attention'
