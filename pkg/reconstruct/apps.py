from django.apps import AppConfig


class ReconstructConfig(AppConfig):
    name = 'reconstruct'
    verbose_name = "Log-spectrum reconstruction"
