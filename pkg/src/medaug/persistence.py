"""On-disk formats for embeddings, checkpoints, logs and stage manifests.

Embedding file: 8-byte magic ``KAEMB001``, little-endian uint64 rows and
cols, uint32 source tag, uint32 padding, then float64 row-major data.
A sibling ``<name>.codes`` manifest lists ``index<TAB>code`` per row.

Checkpoint file: 8-byte magic ``KACKPT01``, uint32 length + UTF-8 JSON
header (config hash, parameter names and shapes, in file order), then
each parameter's float64 data.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .encoders import EmbeddingSource, NodeEmbeddings
from .exceptions import MissingArtifactError, ParseError

EMBEDDING_MAGIC = b"KAEMB001"
CHECKPOINT_MAGIC = b"KACKPT01"
_EMB_HEADER = struct.Struct("<8sQQII")


def require(path, producer):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def codes_path(path):
    path = Path(path)
    return path.with_name(path.name + ".codes")


def save_embeddings(path, embeddings):
    path = Path(path)
    m = np.ascontiguousarray(embeddings.matrix, dtype="<f8")
    with path.open("wb") as fh:
        fh.write(_EMB_HEADER.pack(EMBEDDING_MAGIC, m.shape[0], m.shape[1], int(embeddings.source), 0))
        fh.write(m.tobytes())
    codes = embeddings.codes or tuple(str(i) for i in range(m.shape[0]))
    codes_path(path).write_text("".join(f"{i}\t{c}\n" for i, c in enumerate(codes)), encoding="utf-8")


def load_embeddings(path, producer="pretrain-onto"):
    path = require(path, producer)
    data = path.read_bytes()
    if len(data) < _EMB_HEADER.size:
        raise ParseError("truncated embedding header", path=path)
    magic, rows, cols, tag, _ = _EMB_HEADER.unpack_from(data)
    if magic != EMBEDDING_MAGIC:
        raise ParseError("not an embedding file (bad magic)", path=path)
    body = data[_EMB_HEADER.size :]
    if len(body) != rows * cols * 8:
        raise ParseError(f"expected {rows}x{cols} float64 values, found {len(body)} bytes", path=path)
    matrix = np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)
    codes = ()
    cpath = codes_path(path)
    if cpath.exists():
        codes = tuple(line.split("\t", 1)[1] for line in cpath.read_text(encoding="utf-8").splitlines() if line)
    return NodeEmbeddings(matrix, EmbeddingSource(tag), codes)


def format_embeddings_text(embeddings):
    """Tab-separated ``code<TAB>v1<TAB>v2 ...`` lines for inspection."""
    codes = embeddings.codes or tuple(str(i) for i in range(embeddings.matrix.shape[0]))
    return "".join(c + "\t" + "\t".join(repr(float(x)) for x in row) + "\n" for c, row in zip(codes, embeddings.matrix))


def save_checkpoint(path, state, config_hash=""):
    names = sorted(state)
    header = {
        "config_hash": config_hash,
        "parameters": [{"name": n, "shape": list(state[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(state[n], dtype="<f8").tobytes())


def load_checkpoint(path, producer="train"):
    path = require(path, producer)
    data = path.read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ParseError("not a checkpoint file (bad magic)", path=path)
    (n,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12 : 12 + n].decode("utf-8"))
    offset = 12 + n
    state = {}
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        chunk = data[offset : offset + 8 * count]
        if len(chunk) != 8 * count:
            raise ParseError(f"truncated data for {entry['name']}", path=path)
        state[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += 8 * count
    return state, header.get("config_hash", "")


def format_loss_log(values):
    return "".join(f"{epoch}\t{v!r}\n" for epoch, v in enumerate(values, 1))


def format_metrics_log(rows):
    return "".join(f"{e}\t{split}\t{j!r}\t{f!r}\t{p!r}\n" for e, split, j, f, p in rows)


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, command, config_hash, seed, artifacts):
    """Record what a stage produced; the timestamp is the only non-reproducible field."""
    directory = Path(directory)
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "artifacts": {str(Path(a).relative_to(directory)): file_digest(a) for a in sorted(map(str, artifacts))},
    }
    path = directory / f"manifest.{command}.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
