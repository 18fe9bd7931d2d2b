"""Console entry point; the command implementations live in service_cli.cli."""
from .service_cli.cli import main

__all__ = ["main"]
