import sys
from pathlib import Path

import numpy as np
import pytest

# make the sibling oracle module importable from every test file
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20250821)
