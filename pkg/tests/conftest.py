import numpy as np
import pandas as pd
import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.utils.data_loader import Dataset


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def sample_counts():
    """Small correlated zero-inflated table: 120 rows, 3 columns."""
    rng = np.random.default_rng(42)
    latent = rng.multivariate_normal(np.zeros(3), [[1, 0.6, 0.3], [0.6, 1, 0.5], [0.3, 0.5, 1]], 120)
    values = np.where(latent < [-0.5, 0.0, 0.3], 0, np.rint(5 * np.exp(latent)) + 1)
    return Dataset.from_array(values.astype(np.int64), ["otu_a", "otu_b", "otu_c"])


@pytest.fixture
def counts_csv(tmp_path, sample_counts):
    path = tmp_path / "counts.csv"
    sample_counts.to_frame().to_csv(path, index=False)
    return path


@pytest.fixture
def write_csv(tmp_path):
    """Write raw text to a CSV file under tmp_path and return its path."""
    def _write(text: str, name: str = "table.csv"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return _write


@pytest.fixture
def small_frame():
    return pd.DataFrame({"a": [0, 1, 0, 4], "b": [2, 0, 0, 7]})
