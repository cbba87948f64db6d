"""Plain file formats: 16-bit PGM depth, PPM overlays, ASCII PLY and a tensor container."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

WEIGHTS_MAGIC = b"NBVW"
WEIGHTS_VERSION = 1


class FormatError(ValueError):
    pass


# --- images ---------------------------------------------------------------


def depth_to_pgm_bytes(depth: np.ndarray) -> bytes:
    """Millimetres as big-endian 16-bit; no hit (non-finite) -> 0."""
    d = np.asarray(depth, float)
    mm = np.where(np.isfinite(d), np.rint(d * 1000.0), 0.0)
    mm = np.clip(mm, 0, 65535).astype(">u2")
    h, w = d.shape
    return f"P5\n{w} {h}\n65535\n".encode() + mm.tobytes()


def write_pgm16(path, depth: np.ndarray):
    Path(path).write_bytes(depth_to_pgm_bytes(depth))


def _read_header(blob: bytes, magic: bytes, n_fields: int) -> tuple[list[int], int]:
    if blob[:2] != magic:
        raise FormatError(f"bad magic at offset 0: expected {magic!r}, got {blob[:2]!r}")
    fields, pos = [], 2
    while len(fields) < n_fields:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and blob[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError(f"malformed header at offset {pos}")
        fields.append(int(blob[start:pos]))
    return fields, pos + 1


def read_pgm16(path) -> np.ndarray:
    """Depth in metres, ``inf`` where the stored value is 0."""
    blob = Path(path).read_bytes()
    (w, h, maxval), off = _read_header(blob, b"P5", 3)
    if maxval != 65535:
        raise FormatError(f"expected 16-bit PGM, maxval {maxval} at header")
    need = off + 2 * w * h
    if len(blob) < need:
        raise FormatError(f"PGM truncated at offset {len(blob)}, expected {need} bytes")
    mm = np.frombuffer(blob, ">u2", w * h, off).reshape(h, w).astype(float)
    return np.where(mm > 0, mm / 1000.0, np.inf)


def write_ppm(path, rgb: np.ndarray):
    rgb = np.asarray(rgb, np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    (w, h, _), off = _read_header(blob, b"P6", 3)
    if len(blob) < off + 3 * w * h:
        raise FormatError(f"PPM truncated at offset {len(blob)}")
    return np.frombuffer(blob, np.uint8, 3 * w * h, off).reshape(h, w, 3)


def write_pgm8(path, img: np.ndarray):
    """Grey image rescaled to 0..255 over its own range."""
    a = np.asarray(img, float)
    lo, hi = float(a.min()), float(a.max())
    g = np.zeros_like(a) if hi <= lo else (a - lo) / (hi - lo)
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + np.rint(g * 255).astype(np.uint8).tobytes())


def depth_grey(depth: np.ndarray) -> np.ndarray:
    """Near = bright; misses are black."""
    d = np.asarray(depth, float)
    hit = np.isfinite(d)
    out = np.zeros(d.shape + (3,), np.uint8)
    if hit.any():
        lo, hi = d[hit].min(), d[hit].max()
        g = 1.0 - (d - lo) / max(hi - lo, 1e-9)
        out[hit] = np.rint(40 + 215 * g[hit])[:, None].astype(np.uint8)
    return out


def overlay_grasps(depth: np.ndarray, pixels: np.ndarray, quality: np.ndarray, threshold: float = 0.5):
    """Grey depth with 3x3 markers: red where q > threshold, blue otherwise."""
    rgb = depth_grey(depth).copy()
    h, w = rgb.shape[:2]
    # draw low quality first so confident grasps stay on top
    for k in np.argsort(quality, kind="stable"):
        u, v = np.rint(pixels[k]).astype(int)
        color = (255, 0, 0) if quality[k] > threshold else (0, 0, 255)
        rgb[max(v - 1, 0) : min(v + 2, h), max(u - 1, 0) : min(u + 2, w)] = color
    return rgb


# --- point clouds ---------------------------------------------------------


def write_ply(path, points: np.ndarray):
    pts = np.asarray(points, float).reshape(-1, 3)
    lines = [
        "ply", "format ascii 1.0", f"element vertex {len(pts)}",
        "property float x", "property float y", "property float z", "end_header",
    ]
    lines += [f"{x:.6f} {y:.6f} {z:.6f}" for x, y, z in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != "ply":
        raise FormatError("not an ASCII PLY file (line 1)")
    n = next(int(t.split()[-1]) for t in text if t.startswith("element vertex"))
    start = text.index("end_header") + 1
    return np.array([[float(v) for v in t.split()] for t in text[start : start + n]]).reshape(-1, 3)


# --- tensor container -----------------------------------------------------


def pack_tensors(tensors: dict[str, np.ndarray], provenance: str = "") -> bytes:
    """Little-endian container: header, provenance text, then named f32 tensors."""
    prov = provenance.encode()
    out = [WEIGHTS_MAGIC, struct.pack("<III", WEIGHTS_VERSION, len(prov), len(tensors)), prov]
    for name, arr in tensors.items():
        a = np.asarray(arr, "<f4")
        key = name.encode()
        out.append(struct.pack("<H", len(key)) + key + struct.pack("<B", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    return b"".join(out)


def unpack_tensors(blob: bytes) -> tuple[dict[str, np.ndarray], str]:
    if blob[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"bad magic at offset 0: {blob[:4]!r}")
    try:
        version, n_prov, n = struct.unpack_from("<III", blob, 4)
    except struct.error:
        raise FormatError("header truncated at offset 4") from None
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported container version {version} at offset 4")
    pos = 16
    prov = blob[pos : pos + n_prov].decode()
    pos += n_prov
    tensors = {}
    for _ in range(n):
        try:
            (klen,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2 : pos + 2 + klen].decode()
            pos += 2 + klen
            (ndim,) = struct.unpack_from("<B", blob, pos)
            shape = struct.unpack_from(f"<{ndim}I", blob, pos + 1)
            pos += 1 + 4 * ndim
        except struct.error:
            raise FormatError(f"tensor header truncated at offset {pos}") from None
        size = int(np.prod(shape)) if ndim else 1
        if pos + 4 * size > len(blob):
            raise FormatError(f"tensor {name!r} truncated at offset {pos}")
        tensors[name] = np.frombuffer(blob, "<f4", size, pos).reshape(shape).copy()
        pos += 4 * size
    if pos != len(blob):
        raise FormatError(f"trailing bytes at offset {pos}")
    return tensors, prov
