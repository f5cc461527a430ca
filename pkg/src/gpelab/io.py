"""Self-describing binary containers for snapshots and LOD basis caches.

Layout: an ASCII header of ``key = value`` lines opened by a magic line and
closed by ``END``, followed by little-endian 64-bit payload streams.  The
header carries a SHA-256 checksum of the payload.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import fem
from .mesh import uniform_mesh

SNAPSHOT_MAGIC = "GPELAB-SNAPSHOT 1"
BASIS_MAGIC = "GPELAB-LODBASIS 1"


class FormatError(ValueError):
    pass


def _checksum(payload: bytes) -> str:
    return "sha256:" + hashlib.sha256(payload).hexdigest()


def _write(path: Path, magic: str, header: dict, payload: bytes) -> None:
    header = {**header, "checksum": _checksum(payload)}
    lines = [magic] + [f"{k} = {json.dumps(v)}" for k, v in header.items()] + ["END"]
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        fh.write(payload)


def _read(path: Path, magic: str) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    end = raw.find(b"\nEND\n")
    if end < 0:
        raise FormatError(f"{path}: missing header terminator")
    lines = raw[:end].decode("ascii").split("\n")
    if lines[0] != magic:
        raise FormatError(f"{path}: expected {magic!r}, found {lines[0]!r}")
    header = {}
    for line in lines[1:]:
        key, _, value = line.partition(" = ")
        header[key] = json.loads(value)
    payload = raw[end + 5:]
    if header.get("checksum") != _checksum(payload):
        raise FormatError(f"{path}: checksum mismatch")
    return header, payload


@dataclass
class Snapshot:
    u: fem.FEFunction
    meta: dict


def write_snapshot(path, u: fem.FEFunction, **meta) -> None:
    m = u.space.mesh
    header = {"a": m.a, "b": m.b, "n_elements": m.n_elements, "order": u.space.order, "n_dofs": u.space.n_dofs}
    header.update(meta)
    c = np.asarray(u.coefficients, dtype="<c16")
    _write(path, SNAPSHOT_MAGIC, header, c.view("<f8").tobytes())


def read_snapshot(path) -> Snapshot:
    h, payload = _read(path, SNAPSHOT_MAGIC)
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != 2 * h["n_dofs"]:
        raise FormatError(f"{path}: expected {h['n_dofs']} coefficients, found {data.size // 2}")
    space = fem.FESpace(uniform_mesh(h["a"], h["b"], h["n_elements"]), h["order"])
    c = data[0::2] + 1j * data[1::2]
    return Snapshot(fem.FEFunction(space, c), h)


def write_basis(path, B: sp.spmatrix, **meta) -> None:
    B = sp.csr_matrix(B)
    B.sort_indices()
    header = {"n_rows": B.shape[0], "n_cols": B.shape[1], "nnz": int(B.nnz), **meta}
    payload = (
        B.indptr.astype("<i8").tobytes() + B.indices.astype("<i8").tobytes() + B.data.astype("<f8").tobytes()
    )
    _write(path, BASIS_MAGIC, header, payload)


def read_basis(path) -> tuple[sp.csr_matrix, dict]:
    h, payload = _read(path, BASIS_MAGIC)
    n, m, nnz = h["n_rows"], h["n_cols"], h["nnz"]
    buf = np.frombuffer(payload, dtype="<i8", count=n + 1 + nnz)
    indptr, indices = buf[: n + 1], buf[n + 1:]
    data = np.frombuffer(payload, dtype="<f8", offset=8 * (n + 1 + nnz), count=nnz)
    return sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()), shape=(n, m)), h


def file_digest(path) -> str:
    return _checksum(Path(path).read_bytes())
