from django.apps import AppConfig


class NetworksConfig(AppConfig):
    name = 'networks'
    verbose_name = "Phone, speaker and emotion networks"
