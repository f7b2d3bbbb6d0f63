"""Checkpoint read/write.

Layout of a checkpoint directory::

    <view>.input.txt / <view>.context.txt   header ``view dim V``, then ``node_id v_1 ... v_d``
    <view>.input.bin / <view>.context.bin   same content, length-prefixed binary
    meta.json                               transforms, log-variances, step
    history.csv                             ``step,task,loss,sigma2,weight``
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import IO

import numpy as np

from mvgraph.errors import ConfigError
from mvgraph.fileio import atomic_open
from mvgraph.training.params import (
    AlignmentTransform,
    EmbeddingTable,
    TaskUncertainty,
    TrainedModel,
)

MAGIC = b"MVGE"


def write_vectors_text(fh: IO[str], view: str, ids: list[str], vecs: np.ndarray) -> None:
    fh.write(f"{view} {vecs.shape[1]} {vecs.shape[0]}\n")
    for node, row in zip(ids, vecs):
        fh.write(node + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_vectors_text(fh: IO[str]) -> tuple[str, list[str], np.ndarray]:
    view, dim, n = fh.readline().split()
    dim, n = int(dim), int(n)
    ids, rows = [], []
    for _ in range(n):
        parts = fh.readline().rstrip("\n").split(" ")
        if len(parts) != dim + 1:
            raise ConfigError(f"vector row for view {view} has {len(parts) - 1} values, expected {dim}")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    return view, ids, np.asarray(rows, dtype=np.float64).reshape(n, dim)


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_vectors_binary(fh: IO[bytes], view: str, ids: list[str], vecs: np.ndarray) -> None:
    fh.write(MAGIC + _pack_str(view) + struct.pack("<II", vecs.shape[1], vecs.shape[0]))
    for node, row in zip(ids, vecs):
        fh.write(_pack_str(node))
        fh.write(np.ascontiguousarray(row, dtype="<f8").tobytes())


def read_vectors_binary(fh: IO[bytes]) -> tuple[str, list[str], np.ndarray]:
    def read_str() -> str:
        (n,) = struct.unpack("<I", fh.read(4))
        return fh.read(n).decode("utf-8")

    if fh.read(4) != MAGIC:
        raise ConfigError("not a vector binary file")
    view = read_str()
    dim, n = struct.unpack("<II", fh.read(8))
    ids = []
    vecs = np.empty((n, dim))
    for i in range(n):
        ids.append(read_str())
        vecs[i] = np.frombuffer(fh.read(8 * dim), dtype="<f8")
    return view, ids, vecs


def save_checkpoint(model: TrainedModel, directory: str | Path, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for view, table in model.tables.items():
        for kind, vecs in (("input", table.input_vecs), ("context", table.context_vecs)):
            with atomic_open(directory / f"{view}.{kind}.txt") as fh:
                write_vectors_text(fh, view, table.ids, vecs)
            with atomic_open(directory / f"{view}.{kind}.bin", "wb") as fh:
                write_vectors_binary(fh, view, table.ids, vecs)
    meta = {
        "step": model.step,
        "views": list(model.tables),
        "transforms": {
            name: {"from": t.from_view, "to": t.to_view, "matrix": t.matrix.tolist()}
            for name, t in model.transforms.items()
        },
        "log_var": {name: u.log_var for name, u in model.uncertainties.items()},
        "floor_var": {name: u.floor_var for name, u in model.uncertainties.items()},
    }
    if extra:
        meta["extra"] = extra
    with atomic_open(directory / "meta.json") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with atomic_open(directory / "history.csv") as fh:
        fh.write("step,task,loss,sigma2,weight\n")
        for step, task, loss, s2, w in model.history:
            fh.write(f"{step},{task},{loss!r},{s2!r},{w!r}\n")
    return directory


def load_checkpoint(directory: str | Path) -> TrainedModel:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise ConfigError(f"no checkpoint at {directory}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    tables = {}
    for view in meta["views"]:
        with open(directory / f"{view}.input.bin", "rb") as fh:
            _, ids, inp = read_vectors_binary(fh)
        with open(directory / f"{view}.context.bin", "rb") as fh:
            _, ctx_ids, ctx = read_vectors_binary(fh)
        if ids != ctx_ids:
            raise ConfigError(f"input/context vocab mismatch for view {view}")
        tables[view] = EmbeddingTable(view, ids, inp, ctx)
    transforms = {
        name: AlignmentTransform(name, t["from"], t["to"], np.asarray(t["matrix"], dtype=np.float64))
        for name, t in meta["transforms"].items()
    }
    unc = {
        name: TaskUncertainty(name, float(lv), float(meta["floor_var"][name])) for name, lv in meta["log_var"].items()
    }
    history = []
    hist_path = directory / "history.csv"
    if hist_path.exists():
        for line in hist_path.read_text(encoding="utf-8").splitlines()[1:]:
            step, task, loss, s2, w = line.split(",")
            history.append((int(step), task, float(loss), float(s2), float(w)))
    return TrainedModel(tables, transforms, unc, history, int(meta["step"]))
