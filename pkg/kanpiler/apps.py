from django.apps import AppConfig


class KanpilerConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'kanpiler'
    verbose_name = 'Formula compiler'
