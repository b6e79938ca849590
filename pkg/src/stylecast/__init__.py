"""Stylized short-video comment generation and automatic comment scoring."""

__version__ = "0.1.0"
