"""MVT1 binary tensor files and the manifest-indexed containers built on
them.

A single record is:

    magic   4 bytes  b"MVT1"
    dtype   u8       1 = float32, 2 = float64
    rank    u8
    dims    rank x u64, little-endian
    payload row-major little-endian values (4 or 8 bytes each)

A container is a plain concatenation of records; its sidecar manifest
(``<container>.manifest``) is structured text mapping each tensor name to
its byte offset and shape, so records can be read individually.
"""

import hashlib
import io
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"MVT1"
_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES_BY_KIND = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


def write_tensor(fh, array):
    """Append one MVT1 record; returns the number of bytes written."""
    arr = np.asarray(array)
    if arr.dtype not in _CODES_BY_KIND:
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        else:
            raise ContractError(f"mvt: unsupported dtype {arr.dtype}")
    code = _CODES_BY_KIND[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype(_DTYPE_CODES[code], copy=False).tobytes(order="C")
    fh.write(header)
    fh.write(payload)
    return len(header) + len(payload)


def read_tensor(fh):
    """Read one MVT1 record from the current position."""
    magic = fh.read(4)
    if magic != MAGIC:
        raise ContractError(f"mvt: bad magic {magic!r}")
    code, rank = struct.unpack("<BB", fh.read(2))
    if code not in _DTYPE_CODES:
        raise ContractError(f"mvt: unknown dtype code {code}")
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(dims)) if dims else 1
    payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise ContractError("mvt: truncated payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.copy()


def save_tensor(path, array):
    with open(path, "wb") as fh:
        write_tensor(fh, array)


def load_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)


def tensor_bytes(array):
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def _shape_token(shape):
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(token):
    return () if token == "scalar" else tuple(int(d) for d in token.split("x"))


def save_container(path, arrays):
    """Write named arrays as one concatenated MVT1 file plus a manifest.

    Manifest lines have the form ``name = <offset> <shape>`` under a
    ``[tensors]`` section; a ``[container]`` section records the payload
    file name and its SHA-256 so grids can verify they share data.
    """
    path = str(path)
    offsets = {}
    with open(path, "wb") as fh:
        at = 0
        for name, arr in arrays.items():
            offsets[name] = (at, np.asarray(arr).shape)
            at += write_tensor(fh, arr)
    digest = sha256_file(path)
    with open(path + ".manifest", "w") as mh:
        mh.write("[container]\n")
        mh.write(f"file = {path.rsplit('/', 1)[-1]}\n")
        mh.write(f"sha256 = {digest}\n")
        mh.write("\n[tensors]\n")
        for name, (offset, shape) in offsets.items():
            mh.write(f"{name} = {offset} {_shape_token(shape)}\n")
    return digest


def load_container(path):
    """Read every tensor recorded in the container's manifest."""
    path = str(path)
    entries = read_manifest(path + ".manifest")
    out = {}
    with open(path, "rb") as fh:
        for name, (offset, shape) in entries.items():
            fh.seek(offset)
            arr = read_tensor(fh)
            if arr.shape != shape:
                raise ContractError(
                    f"mvt: manifest shape {shape} != stored shape {arr.shape} for {name!r}")
            out[name] = arr
    return out


def read_manifest(manifest_path):
    entries = {}
    section = None
    with open(manifest_path) as mh:
        for line in mh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
                continue
            if section != "tensors" or "=" not in line:
                continue
            name, rest = line.split("=", 1)
            offset_token, shape_token = rest.split()
            entries[name.strip()] = (int(offset_token), _parse_shape(shape_token))
    return entries


def container_sha256(path):
    """Digest recorded in the manifest at write time."""
    with open(str(path) + ".manifest") as mh:
        for line in mh:
            if line.startswith("sha256"):
                return line.split("=", 1)[1].strip()
    raise ContractError("mvt: manifest has no sha256 line")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
