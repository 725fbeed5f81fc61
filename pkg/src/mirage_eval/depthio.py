"""Depth map files, the benchmark manifest, and canonical result documents.

Float depth is stored as grayscale PFM (``Pf``): a text header with the
dimensions and a scale whose sign encodes byte order (negative means
little-endian), followed by float32 rows from bottom to top. Integer depth is
accepted as 16-bit grayscale PNG decoded as ``(raw - offset) * scale``.
"""

import gc
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .depthmap import DepthMap
from .errors import (
    AllInvalid,
    CorruptFile,
    DanglingCropRef,
    DuplicateSampleId,
    InvalidShape,
    IoError,
    SchemaError,
    UnsupportedFormat,
)
from .geometry import CropRect, RoiShape

MANIFEST_VERSION = 1

_PFM_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
_TOKEN = re.compile(r"^[A-Za-z0-9_.\-]+$")


# --------------------------------------------------------------------------- files


def atomic_write(path, data):
    """Write bytes or text to ``path`` via a temp file and rename."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pfm(path):
    data = Path(path).read_bytes()
    m = _PFM_HEADER.match(data)
    if m is None:
        if data[:1] == b"P":
            raise CorruptFile(f"{path}: malformed PFM header")
        raise UnsupportedFormat(f"{path}: not a PFM file")
    magic, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    if magic == b"PF":
        raise UnsupportedFormat(f"{path}: color PFM is not a depth map")
    if w <= 0 or h <= 0 or scale == 0 or not math.isfinite(scale):
        raise CorruptFile(f"{path}: bad PFM header values")
    payload = data[m.end():]
    if len(payload) != w * h * 4:
        raise CorruptFile(f"{path}: expected {w * h * 4} data bytes for {w}x{h}, found {len(payload)}")
    dtype = "<f4" if scale < 0 else ">f4"
    grid = np.frombuffer(payload, dtype=dtype).reshape(h, w)[::-1]
    return grid.astype(np.float32)


def write_pfm(path, values, little_endian=True):
    """Write a grayscale PFM. Values are stored as float32."""
    grid = np.asarray(values, dtype=np.float32)
    if grid.ndim != 2:
        raise ValueError(f"PFM needs a 2-D grid, got shape {grid.shape}")
    h, w = grid.shape
    header = f"Pf\n{w} {h}\n{-1.0 if little_endian else 1.0}\n".encode("ascii")
    body = np.ascontiguousarray(grid[::-1]).astype("<f4" if little_endian else ">f4").tobytes()
    atomic_write(path, header + body)


def read_png16(path):
    from PIL import Image

    with Image.open(path) as img:
        if img.format != "PNG":
            raise UnsupportedFormat(f"{path}: not a PNG file")
        if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
            raise UnsupportedFormat(f"{path}: PNG mode {img.mode} is not 16-bit grayscale")
        return np.array(img, dtype=np.int64)


def write_png16(path, raw):
    from PIL import Image

    grid = np.asarray(raw)
    if grid.min() < 0 or grid.max() > 65535:
        raise ValueError("16-bit PNG values must lie in [0, 65535]")
    tmp = Path(path)
    img = Image.fromarray(grid.astype(np.uint16))
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write(tmp, buf.getvalue())


def load_depth(path, png_scale=None, png_offset=0.0):
    """Load a depth map, sniffing the format from the file's magic bytes."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            head = f.read(8)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if head.startswith(b"P"):
        values = read_pfm(path)
    elif head == _PNG_MAGIC:
        if png_scale is None:
            raise SchemaError(str(path), "16-bit PNG depth needs png_scale in its binding")
        values = (read_png16(path) - float(png_offset)) * float(png_scale)
    else:
        raise UnsupportedFormat(f"{path}: unrecognised depth file format")
    depth = DepthMap(values)
    if not depth.valid.any():
        raise AllInvalid(f"{path}: no finite depth value")
    return depth


# ---------------------------------------------------------------- canonical JSON


def _fmt_float(x):
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = sorted((str(k), v) for k, v in obj.items())
        body = ",\n".join(f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in items)
        return "{\n" + body + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        body = ",\n".join(pad + _encode(v, indent, level + 1) for v in seq)
        return "[\n" + body + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps_canonical(obj, indent=2):
    """JSON with sorted keys and 17-significant-digit floats (lossless)."""
    return _encode(obj, indent, 0) + "\n"


def save_results(report, path):
    atomic_write(path, dumps_canonical(report))


def load_results(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(str(path), f"invalid JSON: {exc}") from exc


# ---------------------------------------------------------------------- manifest


@dataclass(frozen=True)
class DepthBinding:
    """Depth files one model role produced for a sample."""

    full: str
    crops: dict = field(default_factory=dict)
    png_scale: float = None
    png_offset: float = 0.0

    def to_dict(self):
        d = {"full": self.full, "crops": dict(self.crops)}
        if self.png_scale is not None:
            d["png_scale"] = self.png_scale
            d["png_offset"] = self.png_offset
        return d


@dataclass(frozen=True)
class SampleRecord:
    id: str
    width: int
    height: int
    rois: tuple = ()
    crops: tuple = ()
    depth: dict = field(default_factory=dict)
    negative: bool = False

    def crop(self, crop_id):
        for c in self.crops:
            if c.id == crop_id:
                return c
        raise KeyError(crop_id)

    def to_dict(self):
        return {
            "id": self.id,
            "width": self.width,
            "height": self.height,
            "rois": [r.to_dict() for r in self.rois],
            "crops": [c.to_dict() for c in self.crops],
            "depth": {role: b.to_dict() for role, b in self.depth.items()},
            "negative": self.negative,
        }


@dataclass(frozen=True)
class BenchmarkManifest:
    version: int
    samples: tuple
    root: Path = Path(".")

    def resolve(self, relpath):
        return self.root / relpath

    def sample(self, sample_id):
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(sample_id)

    def to_dict(self):
        return {"version": self.version, "samples": [s.to_dict() for s in self.samples]}

    def load(self, sample, role, view="full"):
        """Load the depth file bound to ``(sample, role, view)``."""
        binding = sample.depth[role]
        rel = binding.full if view == "full" else binding.crops[view]
        return load_depth(self.resolve(rel), binding.png_scale, binding.png_offset)


def _fail(path, msg):
    raise SchemaError(path, msg)


def _expect_keys(obj, path, required, allowed):
    if type(obj) is not dict:
        _fail(path, f"expected an object, got {type(obj).__name__}")
    for k in required:
        if k not in obj:
            _fail(f"{path}.{k}", "missing required field")
    if not allowed.issuperset(obj):
        _fail(path, f"unknown field(s) {sorted(set(obj) - allowed)}")


def _int(v, path, minimum=None):
    # type() rather than isinstance: JSON booleans must not pass as integers
    if type(v) is not int:
        _fail(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        _fail(path, f"must be >= {minimum}, got {v}")
    return v


def _is_num(v):
    t = type(v)
    return (t is float or t is int) and math.isfinite(v)


def _num(v, path):
    if not _is_num(v):
        _fail(path, f"expected a finite number, got {v!r}")
    return float(v)


def _token(v, path):
    if type(v) is not str or not _TOKEN.fullmatch(v):
        _fail(path, f"expected an identifier token, got {v!r}")
    return v


def _relpath(v, path):
    if type(v) is not str or not v:
        _fail(path, f"expected a relative file path, got {v!r}")
    # posix root, windows root or drive letter
    if v[0] in "/\\" or v[1:2] == ":":
        _fail(path, f"path must be relative to the manifest directory, got {v!r}")
    return v


def _list(v, path):
    if type(v) is not list:
        _fail(path, f"expected a list, got {type(v).__name__}")
    return v


def _polygon(v, path):
    pts = []
    for p in _list(v, path):
        if type(p) is not list or len(p) != 2 or not (_is_num(p[0]) and _is_num(p[1])):
            break
        pts.append((float(p[0]), float(p[1])))
    else:
        return pts
    # slow path only to name the offending vertex
    i = len(pts)
    p = v[i]
    if type(p) is not list or len(p) != 2:
        _fail(f"{path}[{i}]", "expected an [x, y] pair")
    _num(p[0], f"{path}[{i}][0]")
    _num(p[1], f"{path}[{i}][1]")


_ROI_KEYS = frozenset(("polygon", "exclusions"))
_CROP_KEYS = frozenset(("id", "rect", "seed"))
_BINDING_KEYS = frozenset(("full", "crops", "png_scale", "png_offset"))
_SAMPLE_KEYS = frozenset(("id", "width", "height", "rois", "crops", "depth", "negative"))


def _parse_roi(obj, path):
    _expect_keys(obj, path, ("polygon",), _ROI_KEYS)
    outer = _polygon(obj["polygon"], path + ".polygon")
    excl = obj.get("exclusions")
    if excl:
        excl = [_polygon(e, f"{path}.exclusions[{i}]")
                for i, e in enumerate(_list(excl, path + ".exclusions"))]
    elif excl is not None:
        _list(excl, path + ".exclusions")
    try:
        return RoiShape(outer, tuple(excl or ()))
    except InvalidShape as exc:
        _fail(path, str(exc))


def _parse_crop(obj, path, width, height):
    _expect_keys(obj, path, ("id", "rect", "seed"), _CROP_KEYS)
    rect = obj["rect"]
    if type(rect) is not list or len(rect) != 4:
        _fail(path + ".rect", "expected [x0, y0, x1, y1]")
    x0, y0, x1, y1 = rect
    if not (type(x0) is int and type(y0) is int and type(x1) is int and type(y1) is int):
        for i, v in enumerate(rect):
            _int(v, f"{path}.rect[{i}]")
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        _fail(path + ".rect", f"rect {rect} does not fit a {width}x{height} frame")
    seed = obj["seed"]
    if type(seed) is not int or seed < 0:
        _int(seed, path + ".seed", minimum=0)
    return CropRect(x0, y0, x1, y1, _token(obj["id"], path + ".id"), seed)


def _parse_binding(obj, path):
    _expect_keys(obj, path, ("full",), _BINDING_KEYS)
    crops = obj.get("crops", {})
    if type(crops) is not dict:
        _fail(path + ".crops", "expected an object mapping crop id to path")
    for k, v in crops.items():
        _token(k, path + ".crops")
        _relpath(v, f"{path}.crops.{k}")
    scale = obj.get("png_scale")
    if scale is not None:
        scale = _num(scale, path + ".png_scale")
        if scale <= 0:
            _fail(path + ".png_scale", "must be positive")
    offset = obj.get("png_offset", 0.0)
    offset = _num(offset, path + ".png_offset")
    return DepthBinding(_relpath(obj["full"], path + ".full"), dict(crops), scale, offset)


def _parse_sample(obj, path):
    _expect_keys(obj, path, ("id", "width", "height"), _SAMPLE_KEYS)
    sid = _token(obj["id"], path + ".id")
    width = _int(obj["width"], path + ".width", minimum=1)
    height = _int(obj["height"], path + ".height", minimum=1)
    negative = obj.get("negative", False)
    if type(negative) is not bool:
        _fail(path + ".negative", f"expected a boolean, got {negative!r}")
    rois = tuple([_parse_roi(r, f"{path}.rois[{i}]")
                  for i, r in enumerate(_list(obj.get("rois", []), path + ".rois"))])
    if not rois and not negative:
        _fail(path + ".rois", "a positive sample needs at least one ROI")
    crops = tuple([_parse_crop(c, f"{path}.crops[{i}]", width, height)
                   for i, c in enumerate(_list(obj.get("crops", []), path + ".crops"))])
    ids = {c.id for c in crops}
    if len(ids) != len(crops):
        _fail(path + ".crops", "duplicate crop id")
    depth = obj.get("depth", {})
    if type(depth) is not dict:
        _fail(path + ".depth", "expected an object mapping role to binding")
    bindings = {}
    for role, b in depth.items():
        _token(role, path + ".depth")
        binding = bindings[role] = _parse_binding(b, f"{path}.depth.{role}")
        for cid in binding.crops:
            if cid not in ids:
                raise DanglingCropRef(sid, cid)
    return SampleRecord(sid, width, height, rois, crops, bindings, negative)


def parse_manifest(doc, root=Path(".")):
    _expect_keys(doc, "manifest", ("version", "samples"), frozenset(("version", "samples")))
    version = _int(doc["version"], "version")
    if version != MANIFEST_VERSION:
        _fail("version", f"unsupported manifest version {version}")
    samples = tuple(_parse_sample(s, f"samples[{i}]")
                    for i, s in enumerate(_list(doc["samples"], "samples")))
    seen = set()
    for s in samples:
        if s.id in seen:
            raise DuplicateSampleId(s.id)
        seen.add(s.id)
    return BenchmarkManifest(version, samples, Path(root))


def load_manifest(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    # the parse allocates many small objects and none are cyclic
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError("manifest", f"invalid JSON: {exc}") from exc
        return parse_manifest(doc, path.parent)
    finally:
        if gc_was_enabled:
            gc.enable()


def save_manifest(manifest, path):
    atomic_write(path, dumps_canonical(manifest.to_dict()))
