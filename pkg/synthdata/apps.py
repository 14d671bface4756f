from django.apps import AppConfig


class SynthdataConfig(AppConfig):
    name = 'synthdata'
    verbose_name = "Synthetic emotional-speech corpus"
