from django.apps import AppConfig


class NncoreConfig(AppConfig):
    name = 'nncore'
    verbose_name = "Neural-network engine"
