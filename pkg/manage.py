#!/usr/bin/env python
"""Lab command line: `run`, `preset`, `analyze`, `compare`, `serve_ps`, `worker` plus Django's own commands."""
import os
import sys


def main():
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "config.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError("Django is not importable; install requirements.txt into the active environment.") from exc
    execute_from_command_line(sys.argv)


if __name__ == "__main__":
    main()
