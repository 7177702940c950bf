"""Serialization of measurement sets.

Two formats:

* binary container (single file, bit-exact roundtrip):
    magic  4 bytes  b"BREC"
    u32    version  (currently 1)
    u32    L        channels
    u64    M        measurements per channel
    u64    N        unknowns
    then per channel:
    u8     1 if a known beta follows, else 0
    f64    beta     (only when the flag is 1)
    f64[M*N]  Phi, row-major
    f64[M]    y
  All integers and floats little-endian.

* CSV bundle (directory, human-editable): phi_<l>.csv and y_<l>.csv per
  channel plus meta.json with keys l_channels, m, n, betas.  Floats are
  written with 17 significant digits so the text roundtrip is exact for
  binary64 (well inside the 1e-15 relative contract).
"""

import json
import os
import struct

import numpy as np

from .errors import (
    CorruptHeader,
    DimensionMismatch,
    FormatError,
    FormatVersionMismatch,
    IoFailure,
)
from .model import Channel, MeasurementSet

MAGIC = b"BREC"
VERSION = 1

_HEADER = struct.Struct("<4sIIQQ")


def _channel_dims(ms):
    if ms.l_channels == 0:
        raise FormatError("cannot serialize an empty channel list")
    m, n = ms.channels[0].phi.shape
    for l, ch in enumerate(ms.channels):
        if ch.phi.shape != (m, n) or ch.y.shape != (m,):
            raise DimensionMismatch(
                f"channel {l} has shape {ch.phi.shape}/{ch.y.shape}, "
                f"expected {(m, n)}/{(m,)}"
            )
    return m, n


def write_brec(ms, path):
    """Write the binary container; bit-exact under read_brec."""
    m, n = _channel_dims(ms)
    parts = [_HEADER.pack(MAGIC, VERSION, ms.l_channels, m, n)]
    for ch in ms.channels:
        if ch.beta is None:
            parts.append(b"\x00")
        else:
            parts.append(b"\x01")
            parts.append(struct.pack("<d", ch.beta))
        parts.append(np.ascontiguousarray(ch.phi, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(ch.y, dtype="<f8").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc


def read_brec(path):
    """Read the binary container back into a MeasurementSet."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(f"reading {path}: {exc}") from exc

    if len(blob) < _HEADER.size:
        raise CorruptHeader(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, version, l_channels, m, n = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptHeader(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatVersionMismatch(f"{path}: version {version}, expected {VERSION}")
    if l_channels < 1 or m < 1 or n < 1:
        raise CorruptHeader(f"{path}: degenerate dimensions L={l_channels} M={m} N={n}")

    offset = _HEADER.size
    channels = []
    for l in range(l_channels):
        if offset + 1 > len(blob):
            raise CorruptHeader(f"{path}: truncated at channel {l} flag")
        flag = blob[offset]
        offset += 1
        beta = None
        if flag == 1:
            if offset + 8 > len(blob):
                raise CorruptHeader(f"{path}: truncated at channel {l} beta")
            (beta,) = struct.unpack_from("<d", blob, offset)
            offset += 8
        elif flag != 0:
            raise CorruptHeader(f"{path}: channel {l} beta flag byte {flag}")
        need = 8 * (m * n + m)
        if offset + need > len(blob):
            raise CorruptHeader(f"{path}: truncated in channel {l} payload")
        phi = np.frombuffer(blob, dtype="<f8", count=m * n, offset=offset)
        offset += 8 * m * n
        y = np.frombuffer(blob, dtype="<f8", count=m, offset=offset)
        offset += 8 * m
        channels.append(Channel(phi.reshape(m, n), y, beta))
    if offset != len(blob):
        raise CorruptHeader(f"{path}: {len(blob) - offset} trailing bytes")
    return MeasurementSet(tuple(channels))


def write_csv_bundle(ms, dirpath):
    """Write the CSV bundle directory (phi_<l>.csv, y_<l>.csv, meta.json)."""
    m, n = _channel_dims(ms)
    try:
        os.makedirs(dirpath, exist_ok=True)
        for l, ch in enumerate(ms.channels):
            np.savetxt(os.path.join(dirpath, f"phi_{l}.csv"), ch.phi,
                       fmt="%.17e", delimiter=",")
            np.savetxt(os.path.join(dirpath, f"y_{l}.csv"), ch.y,
                       fmt="%.17e", delimiter=",")
        meta = {
            "l_channels": ms.l_channels,
            "m": m,
            "n": n,
            "betas": [ch.beta for ch in ms.channels],
        }
        with open(os.path.join(dirpath, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(f"writing bundle {dirpath}: {exc}") from exc


def read_csv_bundle(dirpath):
    """Read a CSV bundle directory back into a MeasurementSet."""
    meta_path = os.path.join(dirpath, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"reading {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: {exc}") from exc

    for key in ("l_channels", "m", "n", "betas"):
        if key not in meta:
            raise FormatError(f"{meta_path}: missing key {key!r}")
    l_channels, m, n = int(meta["l_channels"]), int(meta["m"]), int(meta["n"])
    betas = meta["betas"]
    if len(betas) != l_channels:
        raise FormatError(f"{meta_path}: betas length {len(betas)} != L={l_channels}")

    channels = []
    try:
        for l in range(l_channels):
            phi = np.loadtxt(os.path.join(dirpath, f"phi_{l}.csv"),
                             delimiter=",", ndmin=2)
            y = np.loadtxt(os.path.join(dirpath, f"y_{l}.csv"),
                           delimiter=",", ndmin=1)
            if phi.shape != (m, n) or y.shape != (m,):
                raise DimensionMismatch(
                    f"bundle channel {l}: got {phi.shape}/{y.shape}, "
                    f"meta says {(m, n)}/{(m,)}"
                )
            channels.append(Channel(phi, y, betas[l]))
    except OSError as exc:
        raise IoFailure(f"reading bundle {dirpath}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"bundle {dirpath}: {exc}") from exc
    return MeasurementSet(tuple(channels))
