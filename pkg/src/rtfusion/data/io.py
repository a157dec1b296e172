"""Binary PPM (RGB), 16-bit PGM (thermal) and PFM (depth) readers/writers.

Arrays are channel-first floats: PPM <-> (3, H, W) in [0, 1], PGM <-> (1, H, W)
in [0, 1], PFM <-> (1, H, W) float32 metres with 0 marking missing depth.
"""

import os
import re

import numpy as np


_SKIP = re.compile(rb"\s*(#[^\n]*\n\s*)*")
_INT = re.compile(rb"\d+")


class FormatError(ValueError):
    """Malformed or truncated image/depth file."""


def _read(path):
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise FormatError(f"{path}: no such file") from None


def _pnm_header(buf, path, magic, fields):
    """Parse magic + ``fields`` whitespace-separated ints; return (values, payload offset)."""
    if not buf.startswith(magic):
        raise FormatError(f"{path}: expected magic {magic.decode()!r}, got {buf[:2]!r}")
    pos = len(magic)
    values = []
    while len(values) < fields:
        pos = _SKIP.match(buf, pos).end()
        m = _INT.match(buf, pos)
        if m is None:
            raise FormatError(f"{path}: malformed header near byte {pos}")
        values.append(int(m.group()))
        pos = m.end()
    if pos >= len(buf) or buf[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise FormatError(f"{path}: header must end with a single whitespace byte")
    return values, pos + 1


def write_ppm(path, rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"write_ppm expects (3, H, W), got {rgb.shape}")
    _, h, w = rgb.shape
    q = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes())


def read_ppm(path):
    buf = _read(path)
    (w, h, maxval), off = _pnm_header(buf, path, b"P6", 3)
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad dimensions {w}x{h} or maxval {maxval}")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * 3 * dt.itemsize
    if len(buf) - off < need:
        raise FormatError(f"{path}: truncated payload ({len(buf) - off} of {need} bytes)")
    px = np.frombuffer(buf, dtype=dt, count=w * h * 3, offset=off).reshape(h, w, 3)
    return (px.transpose(2, 0, 1).astype(np.float32) / np.float32(maxval)).copy()


def write_pgm16(path, thr):
    thr = np.asarray(thr)
    if thr.ndim == 3:
        if thr.shape[0] != 1:
            raise ValueError(f"write_pgm16 expects (1, H, W), got {thr.shape}")
        thr = thr[0]
    h, w = thr.shape
    q = np.round(np.clip(thr, 0.0, 1.0) * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(q.tobytes())


def read_pgm(path):
    buf = _read(path)
    (w, h, maxval), off = _pnm_header(buf, path, b"P5", 3)
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: bad dimensions {w}x{h} or maxval {maxval}")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * dt.itemsize
    if len(buf) - off < need:
        raise FormatError(f"{path}: truncated payload ({len(buf) - off} of {need} bytes)")
    px = np.frombuffer(buf, dtype=dt, count=w * h, offset=off).reshape(h, w)
    return (px.astype(np.float32) / np.float32(maxval))[None].copy()


def write_pfm(path, depth):
    d = np.asarray(depth, dtype=np.float32)
    if d.ndim == 3:
        if d.shape[0] != 1:
            raise ValueError(f"write_pfm expects (1, H, W), got {d.shape}")
        d = d[0]
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(d[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    buf = _read(path)
    lines = []
    pos = 0
    for _ in range(3):
        end = buf.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: truncated PFM header")
        lines.append(buf[pos:end].strip())
        pos = end + 1
    if lines[0] != b"Pf":
        raise FormatError(f"{path}: expected greyscale PFM magic 'Pf', got {lines[0][:4]!r}")
    try:
        w, h = (int(v) for v in lines[1].split())
        scale = float(lines[2])
    except ValueError:
        raise FormatError(f"{path}: malformed PFM header {lines[1]!r} / {lines[2]!r}") from None
    if w < 1 or h < 1 or scale == 0:
        raise FormatError(f"{path}: bad PFM dimensions {w}x{h} or scale {scale}")
    dt = "<f4" if scale < 0 else ">f4"
    need = w * h * 4
    if len(buf) - pos < need:
        raise FormatError(f"{path}: truncated payload ({len(buf) - pos} of {need} bytes)")
    d = np.frombuffer(buf, dtype=dt, count=w * h, offset=pos).reshape(h, w)[::-1]
    return d.astype(np.float32)[None].copy()


def sample_paths(directory):
    return {k: os.path.join(directory, f) for k, f in (("rgb", "rgb.ppm"), ("thr", "thr.pgm"), ("depth", "depth.pfm"))}
