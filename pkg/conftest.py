"""Configure Django before pytest collects the apps' Django-style tests.py modules."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'core.settings')
django.setup()
