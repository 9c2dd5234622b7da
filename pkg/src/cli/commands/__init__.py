"""
Pipeline subcommands.

Each module exposes ``register(subparsers)``, which adds its parser and sets
``handler`` to a function taking ``(args, context)`` and returning a JSON-able
summary.
"""

from . import detect, explain, features, generate, ingest, report, train_pattern, train_predictor

COMMANDS = (generate, ingest, features, train_pattern, train_predictor, detect, explain, report)
