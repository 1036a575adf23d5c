from django.apps import AppConfig


class SymbolicConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'symbolic'
    verbose_name = 'Symbolic fitting'
