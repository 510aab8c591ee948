import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cavprobe.data import Dataset, EmbeddingRecord  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def make_dataset(cells, dim=4, seed=0):
    """Dataset from ``{(genre, gender): count}``, vectors standard normal."""
    rng = np.random.default_rng(seed)
    records = []
    for (genre, gender), count in sorted(cells.items()):
        for j in range(count):
            records.append(EmbeddingRecord(f"{genre}-{gender}-{j}", rng.standard_normal(dim),
                                           genre, gender, None))
    return Dataset(records)


@pytest.fixture
def small_dataset():
    return make_dataset({(g, s): 30 for g in ("rock", "jazz") for s in ("female", "male")})


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
