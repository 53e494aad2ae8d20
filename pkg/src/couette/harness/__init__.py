"""Configuration, experiment commands and the ``couette`` CLI."""
