from django.apps import AppConfig


class DspConfig(AppConfig):
    name = 'dsp'
    verbose_name = "Signal-processing front-end"
