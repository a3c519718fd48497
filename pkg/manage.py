#!/usr/bin/env python
"""ipwqr command-line utility."""
import sys


def main():
    """Run a subcommand."""
    try:
        from ipwqr.cli import dispatch
    except ImportError as exc:
        raise ImportError(
            "Couldn't import ipwqr. Are its requirements installed and "
            "the project root on your PYTHONPATH?"
        ) from exc
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
