import sys
from pathlib import Path

TESTS_DIR = Path(__file__).resolve().parent

# make oracles.py and fixtures importable regardless of invocation directory
if str(TESTS_DIR) not in sys.path:
    sys.path.insert(0, str(TESTS_DIR))
