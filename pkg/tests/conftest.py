import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ioparse import numeric as nm


@pytest.fixture(autouse=True)
def double_precision():
    nm.set_dtype("float64")
    yield


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """The bundled synthetic corpus, written once per test session."""
    from ioparse.synth import write_dataset

    directory = tmp_path_factory.mktemp("synth")
    corpus, treebank, embeddings = write_dataset(str(directory), n=2000, seed=13, dim=32)
    return {"corpus": corpus, "treebank": treebank, "embeddings": embeddings}
