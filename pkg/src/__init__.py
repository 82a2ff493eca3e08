# src/__init__.py
# Package marker; modules are imported as ``from src.<module> import ...``.

__version__ = "0.3.0"
