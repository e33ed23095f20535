import sys
from pathlib import Path

# test-local helper modules (refenc, gen, fixtures) import as plain names
sys.path.insert(0, str(Path(__file__).resolve().parent))
