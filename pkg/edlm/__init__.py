# -*- coding: utf-8 -*-
"""Энергетическая маскированная диффузионная языковая модель (символьная)."""
__version__ = "0.1.0"
