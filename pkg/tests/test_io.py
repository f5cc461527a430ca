import numpy as np
import pytest
import scipy.sparse as sp

from gpelab import fem, io
from gpelab.mesh import uniform_mesh


def test_snapshot_round_trip(tmp_path, rng):
    space = fem.FESpace(uniform_mesh(-15, 15, 32), 2)
    u = fem.FEFunction(space, rng.standard_normal(space.n_dofs) + 1j * rng.standard_normal(space.n_dofs))
    path = tmp_path / "u.snap"
    io.write_snapshot(path, u, tau=2e-3, potential="V1", level=5)
    snap = io.read_snapshot(path)
    assert np.array_equal(snap.u.coefficients, u.coefficients)
    assert snap.u.space == space
    assert snap.meta["tau"] == 2e-3 and snap.meta["potential"] == "V1"
    assert snap.meta["checksum"].startswith("sha256:")
    head = path.read_bytes().split(b"\nEND\n")[0].decode()
    assert head.startswith(io.SNAPSHOT_MAGIC) and "a = -15" in head


def test_snapshot_corruption_detected(tmp_path):
    space = fem.FESpace(uniform_mesh(0, 1, 4), 1)
    path = tmp_path / "u.snap"
    io.write_snapshot(path, fem.FEFunction(space, np.ones(3, dtype=complex)))
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(io.FormatError, match="checksum"):
        io.read_snapshot(path)


def test_wrong_magic(tmp_path):
    path = tmp_path / "b.bin"
    io.write_basis(path, sp.identity(3, format="csr"))
    with pytest.raises(io.FormatError, match="expected"):
        io.read_snapshot(path)
    (tmp_path / "junk").write_bytes(b"nothing here")
    with pytest.raises(io.FormatError, match="terminator"):
        io.read_basis(tmp_path / "junk")


def test_basis_round_trip(tmp_path, rng):
    B = sp.random(40, 7, density=0.2, random_state=3, format="csr")
    path = tmp_path / "b.bin"
    io.write_basis(path, B, ell=3)
    back, meta = io.read_basis(path)
    assert meta["ell"] == 3 and meta["nnz"] == B.nnz
    assert (back != B).nnz == 0
    assert io.file_digest(path) == io.file_digest(path)
