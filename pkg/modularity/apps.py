from django.apps import AppConfig


class ModularityConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'modularity'
    verbose_name = 'Modularity detection'
