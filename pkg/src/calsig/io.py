"""File formats: matrix / ROI / mask CSV, binary PGM movies, JSON reports.

Every writer goes through a temp file and ``os.replace`` so a crashed run
never leaves a half-written output. CSV uses ``,`` separators and LF line
endings; floats are written with ``%.17g`` so they round-trip exactly.
"""
import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInputError
from .segmentation import CellMask, ImageStack, PixelTimeMatrix, RoughRoi

FLOAT_FMT = "%.17g"


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a sibling temp file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable, allow_nan=True) + "\n"


def write_json(path, obj):
    return atomic_write(path, dumps_json(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def fmt(x):
    return FLOAT_FMT % x


def write_table(path, header, rows):
    return atomic_write(path, _csv_text(header, rows))


# matrices ------------------------------------------------------------------


def format_matrix(matrix):
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError("matrix must be 2-D")
    lines = [f"{a.shape[0]},{a.shape[1]}"]
    lines += [",".join(fmt(v) for v in row) for row in a]
    return "\n".join(lines) + "\n"


def write_matrix(path, matrix):
    """Matrix CSV: ``rows,cols`` on the first line, then one row per line."""
    return atomic_write(path, format_matrix(matrix))


def read_matrix(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise InvalidInputError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(t) for t in lines[0].split(","))
    except ValueError as exc:
        raise InvalidInputError(f"{path}: line 1: expected 'rows,cols'") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != rows:
        raise InvalidInputError(f"{path}: header says {rows} rows, found {len(body)}")
    out = np.empty((rows, cols))
    for i, ln in enumerate(body):
        parts = ln.split(",")
        if len(parts) != cols:
            raise InvalidInputError(f"{path}: line {i + 2}: expected {cols} values, got {len(parts)}")
        try:
            out[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise InvalidInputError(f"{path}: line {i + 2}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise InvalidInputError(f"{path}: non-finite entries")
    return out


# PGM movies ----------------------------------------------------------------


def write_pgm(path, image):
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise InvalidInputError("PGM frames must be 2-D uint8")
    h, w = img.shape
    return atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def _pgm_tokens(data, count, pos):
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and chr(data[pos]).isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        if start == pos:
            raise InvalidInputError("truncated PGM header")
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos + 1  # one whitespace byte ends the header


def read_pgm(path):
    """Binary PGM (P5) with maxval 255 -> uint8 array (H, W)."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise InvalidInputError(f"{path}: not a binary PGM (P5)")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise InvalidInputError(f"{path}: maxval {maxval}, only 255 is supported")
    pixels = data[pos : pos + w * h]
    if len(pixels) != w * h:
        raise InvalidInputError(f"{path}: expected {w * h} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def write_movie(directory, stack):
    """``frame_%04d.pgm`` per frame plus ``manifest.json``; returns written paths."""
    directory = Path(directory)
    paths = [write_pgm(directory / f"frame_{t:04d}.pgm", f) for t, f in enumerate(stack.frames)]
    manifest = {
        "width": stack.width,
        "height": stack.height,
        "frame_count": stack.n_frames,
        "frame_interval_seconds": stack.frame_interval,
    }
    paths.append(write_json(directory / "manifest.json", manifest))
    return paths


def read_movie(directory):
    directory = Path(directory)
    man_path = directory / "manifest.json"
    if not man_path.exists():
        raise InvalidInputError(f"{directory}: missing manifest.json")
    man = read_json(man_path)
    try:
        w, h, n = int(man["width"]), int(man["height"]), int(man["frame_count"])
        dt = float(man["frame_interval_seconds"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{man_path}: incomplete manifest ({exc})") from exc
    frames = np.empty((n, h, w), dtype=np.uint8)
    for t in range(n):
        f = read_pgm(directory / f"frame_{t:04d}.pgm")
        if f.shape != (h, w):
            raise InvalidInputError(f"frame {t}: shape {f.shape} differs from manifest {(h, w)}")
        frames[t] = f
    return ImageStack(frames, dt)


# ROIs and masks ------------------------------------------------------------


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, [t.strip() for t in line.split(",")]


def read_rois(path):
    """ROI CSV ``cell_id,x0,y0,x1,y1``; a leading header row is optional."""
    rois, seen = [], set()
    for lineno, parts in _data_lines(path):
        if not rois and parts[:1] == ["cell_id"]:
            continue
        if len(parts) != 5:
            raise ConfigError(f"{path}: line {lineno}: expected 5 fields, got {len(parts)}")
        try:
            x0, y0, x1, y1 = (int(p) for p in parts[1:])
        except ValueError as exc:
            raise ConfigError(f"{path}: line {lineno}: non-integer bound") from exc
        if parts[0] in seen:
            raise ConfigError(f"{path}: line {lineno}: duplicate cell_id {parts[0]!r}")
        seen.add(parts[0])
        rois.append(RoughRoi(parts[0], x0, y0, x1, y1))
    if not rois:
        raise ConfigError(f"{path}: no ROIs")
    return rois


def write_rois(path, rois):
    rows = [(r.cell_id, r.x0, r.y0, r.x1, r.y1) for r in rois]
    return write_table(path, ("cell_id", "x0", "y0", "x1", "y1"), rows)


def write_mask(path, mask):
    rows = [(mask.cell_id, int(x), int(y)) for x, y in mask.pixels]
    return write_table(path, ("cell_id", "x", "y"), rows)


def read_masks(path):
    """Mask CSV ``cell_id,x,y`` -> list of CellMask in first-seen id order."""
    groups = {}
    for lineno, parts in _data_lines(path):
        if parts[:1] == ["cell_id"]:
            continue
        if len(parts) != 3:
            raise InvalidInputError(f"{path}: line {lineno}: expected 3 fields")
        try:
            groups.setdefault(parts[0], []).append((int(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise InvalidInputError(f"{path}: line {lineno}: non-integer coordinate") from exc
    return [CellMask(cid, px) for cid, px in groups.items()]


def write_cell(directory, mask, ptm):
    """``mask.csv``, ``matrix.csv`` (values) and ``cell.json`` for one cell."""
    directory = Path(directory)
    meta = {
        "cell_id": ptm.cell_id,
        "frame_interval": ptm.frame_interval,
        "saturation_level": ptm.saturation_level,
        "shape": list(ptm.shape),
    }
    return [
        write_mask(directory / "mask.csv", mask),
        write_matrix(directory / "matrix.csv", ptm.values),
        write_json(directory / "cell.json", meta),
    ]


def read_cell(directory):
    directory = Path(directory)
    (mask,) = read_masks(directory / "mask.csv")
    values = read_matrix(directory / "matrix.csv")
    meta = read_json(directory / "cell.json") if (directory / "cell.json").exists() else {}
    return PixelTimeMatrix(
        meta.get("cell_id", mask.cell_id),
        mask.pixels,
        values,
        float(meta.get("saturation_level", 255.0)),
        float(meta.get("frame_interval", 10.0)),
    )


def read_labels(path):
    """``cell_id,group,hormone_level`` -> dict cell_id -> (group, hormone_level)."""
    out = {}
    for lineno, parts in _data_lines(path):
        if parts[:1] == ["cell_id"]:
            continue
        if len(parts) not in (2, 3):
            raise ConfigError(f"{path}: line {lineno}: expected cell_id,group[,hormone_level]")
        out[parts[0]] = (parts[1], parts[2] if len(parts) == 3 else "all")
    return out


def read_signal(path):
    """EigenSignal CSV with header ``frame,time_seconds,value[,...]``."""
    frames, values = [], []
    for lineno, parts in _data_lines(path):
        if parts[0] == "frame":
            continue
        try:
            frames.append(int(parts[0]))
            values.append(float(parts[2]))
        except (IndexError, ValueError) as exc:
            raise InvalidInputError(f"{path}: line {lineno}: bad signal row") from exc
    if frames != list(range(len(frames))):
        raise InvalidInputError(f"{path}: frames are not 0..n-1 in order")
    return np.array(values)
