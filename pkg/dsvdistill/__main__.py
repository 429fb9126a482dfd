"""Module entry point for ``python -m dsvdistill``."""

from .cli import main

main()
