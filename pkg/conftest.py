"""Configura Django antes de recolectar las pruebas con pytest."""
import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "config.settings.local")
django.setup()
