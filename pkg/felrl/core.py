# felrl/core.py

import argparse
import logging
import os
import sys

# Import the function that registers all the subcommand modules
from .commands import register_commands
from .errors import ConfigError, FelRlError

# ─────────────────────────────────────────────────────────────────────────────
# Configuration: read from environment variables
# ─────────────────────────────────────────────────────────────────────────────

# Log level for every felrl logger
LOG_LEVEL  = os.getenv("FELRL_LOG_LEVEL", "INFO").upper()
# Root directory under which experiment artifact directories are created
OUTPUT_DIR = os.getenv("FELRL_OUTPUT_DIR", "runs")
# Number of worker processes seeds are fanned out to
WORKERS    = os.getenv("FELRL_WORKERS", "1")

# Reject bad values early, before any run starts:
if not isinstance(logging.getLevelName(LOG_LEVEL), int):
    raise RuntimeError(f"FELRL_LOG_LEVEL must be a logging level name, got {LOG_LEVEL!r}")
if not WORKERS.isdigit() or int(WORKERS) < 1:
    raise RuntimeError(f"FELRL_WORKERS must be a positive integer, got {WORKERS!r}")
WORKERS = int(WORKERS)

# Process exit codes
EXIT_OK      = 0
EXIT_CONFIG  = 2
EXIT_FAILURE = 3

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

# ─────────────────────────────────────────────────────────────────────────────
# Application
# ─────────────────────────────────────────────────────────────────────────────

class FelRlApp:
    """
    The command-line application:
      - Holds the process-level settings (output root, worker count)
      - Builds the argparse tree from the registered subcommand modules
      - Maps errors to exit codes
    """
    def __init__(self, output_dir: str = OUTPUT_DIR, workers: int = WORKERS):
        self.output_dir = output_dir
        self.workers = workers
        self.parser = argparse.ArgumentParser(
            prog="fel_rl",
            description="Model-free and model-based RL for FEL seed-laser tuning.",
        )
        subparsers = self.parser.add_subparsers(dest="command", required=True)
        register_commands(self, subparsers)

    def run(self, argv: list[str] | None = None) -> int:
        args = self.parser.parse_args(argv)
        logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
        try:
            args.handler(args)
        except ConfigError as exc:
            print(f"❌ Config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except FelRlError as exc:
            print(f"❌ Run failed: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        except OSError as exc:
            print(f"❌ File error: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        return EXIT_OK

# ─────────────────────────────────────────────────────────────────────────────
# Instantiate the application
# ─────────────────────────────────────────────────────────────────────────────

# Create exactly one instance of the app
app = FelRlApp()


def main(argv: list[str] | None = None) -> int:
    return app.run(argv)
