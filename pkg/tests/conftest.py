import pytest

from medaug.cli import main

TINY = [
    "ontology.embedding_dim=8",
    "ontology.n_heads=2",
    "ontology.epochs=2",
    "relation.embedding_dim=4",
    "relation.epochs=2",
    "predictor.embedding_dim=4",
    "predictor.hidden_dim=4",
    "predictor.patient_dim=4",
    "predictor.epochs=2",
]


def tiny_args():
    return [a for item in TINY for a in ("--set", item)]


@pytest.fixture(scope="session")
def tiny_cohort(tmp_path_factory):
    """A small synthetic cohort directory with ``config.ini``; shared, treat as read-only."""
    d = tmp_path_factory.mktemp("cohort")
    assert main(["gen-synthetic", "-o", str(d), "--patients", "40", "--single-visit-patients", "60", "--seed", "3"]) == 0
    return d
