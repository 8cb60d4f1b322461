import json

import numpy as np
import pytest

from medaug.encoders import EmbeddingSource, NodeEmbeddings
from medaug.exceptions import MissingArtifactError, ParseError
from medaug.persistence import (
    file_digest,
    format_embeddings_text,
    load_checkpoint,
    load_embeddings,
    save_checkpoint,
    save_embeddings,
    write_manifest,
)


def test_embedding_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(3, 4))
    emb = NodeEmbeddings(m, EmbeddingSource.RELATION_AUGMENTED, ("d:1", "d:2", "m:x"))
    save_embeddings(tmp_path / "e.emb", emb)
    back = load_embeddings(tmp_path / "e.emb")
    assert back.matrix.tobytes() == m.tobytes()
    assert back.source == EmbeddingSource.RELATION_AUGMENTED
    assert back.codes == ("d:1", "d:2", "m:x")
    assert (tmp_path / "e.emb").stat().st_size == 32 + 3 * 4 * 8


def test_embedding_text_dump():
    emb = NodeEmbeddings(np.array([[1.0, 2.5]]), EmbeddingSource.ONTOLOGY_AUGMENTED, ("a",))
    assert format_embeddings_text(emb) == "a\t1.0\t2.5\n"


def test_embedding_bad_magic_and_truncation(tmp_path):
    (tmp_path / "x.emb").write_bytes(b"NOTMAGIC" + bytes(24))
    with pytest.raises(ParseError, match="magic"):
        load_embeddings(tmp_path / "x.emb")
    emb = NodeEmbeddings(np.ones((2, 2)), EmbeddingSource.ONTOLOGY_AUGMENTED)
    save_embeddings(tmp_path / "y.emb", emb)
    data = (tmp_path / "y.emb").read_bytes()
    (tmp_path / "y.emb").write_bytes(data[:-8])
    with pytest.raises(ParseError):
        load_embeddings(tmp_path / "y.emb")


def test_missing_artifact_names_producer(tmp_path):
    with pytest.raises(MissingArtifactError, match="pretrain-rel"):
        load_embeddings(tmp_path / "relation.emb", producer="pretrain-rel")
    with pytest.raises(MissingArtifactError, match="train"):
        load_checkpoint(tmp_path / "checkpoint.bin")


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    state = {"w": rng.normal(size=(2, 3)), "b": rng.normal(size=(1, 3)), "a": np.array([[4.0]])}
    save_checkpoint(tmp_path / "c.bin", state, "abc123")
    back, h = load_checkpoint(tmp_path / "c.bin")
    assert h == "abc123"
    assert set(back) == set(state)
    for k in state:
        assert back[k].tobytes() == state[k].tobytes()


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(tmp_path / "c.bin", {"w": np.ones((4, 4))})
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(data[:-1])
    with pytest.raises(ParseError, match="truncated"):
        load_checkpoint(tmp_path / "c.bin")


def test_manifest_lists_digests(tmp_path):
    (tmp_path / "a.txt").write_text("hello")
    path = write_manifest(tmp_path, "build-graphs", "h", 3, [tmp_path / "a.txt"])
    m = json.loads(path.read_text())
    assert path.name == "manifest.build-graphs.json"
    assert m["command"] == "build-graphs" and m["seed"] == 3 and m["config_hash"] == "h"
    assert m["artifacts"] == {"a.txt": file_digest(tmp_path / "a.txt")}
    assert "created" in m
