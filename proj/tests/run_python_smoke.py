"""Runs the python smoke tests; exits 77 (skipped) when the module is not installed."""
import sys

try:
    import mpcctv  # noqa: F401
except ImportError as exc:
    print(f"mpcctv python module not importable ({exc}); install with pip install -e . --no-build-isolation")
    sys.exit(77)

import pytest

sys.exit(pytest.main(["-q", sys.argv[1]]))
