import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fedkge.data import federated_split
from fedkge.synth import planted_kg, profile_kg


@pytest.fixture(scope="session")
def toy_kg():
    return planted_kg(30, 4, 120, seed=5)


@pytest.fixture(scope="session")
def toy_clients(toy_kg):
    return federated_split(toy_kg, 3, seed=5)


@pytest.fixture(scope="session")
def small_kg():
    return planted_kg(200, 6, 900, seed=9)


@pytest.fixture(scope="session")
def small_clients(small_kg):
    return federated_split(small_kg, 3, seed=9)


def write_triples(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in rows:
            fh.write(f"{h}\t{r}\t{t}\n")


@pytest.fixture
def triple_file(tmp_path):
    def _make(rows, name="triples.txt"):
        path = tmp_path / name
        write_triples(path, rows)
        return str(path)

    return _make
