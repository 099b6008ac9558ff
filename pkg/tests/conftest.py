import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from editraj.seq import tokenize  # noqa: E402


@pytest.fixture
def prot():
    return lambda s: tokenize(s, "protein")


@pytest.fixture
def smi():
    return lambda s: tokenize(s, "smiles")
