import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from surrogate import write_surrogate  # noqa: E402


@pytest.fixture(scope="session")
def surrogate_paths(tmp_path_factory):
    """IDX train/test files for the MNIST-shaped surrogate dataset."""
    directory = tmp_path_factory.mktemp("surrogate")
    return write_surrogate(str(directory))
