"""
Configuración de la aplicación metascope.

Declara la configuración base de la app para registro en Django.
"""

from django.apps import AppConfig


class MetascopeConfig(AppConfig):
    """Configuración de la app metascope (solo comandos, sin modelos)."""

    name = "metascope"
    verbose_name = "Metalens imaging toolkit"
