import copy
import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from mirage_eval.depthio import (
    dumps_canonical,
    load_depth,
    load_manifest,
    load_results,
    parse_manifest,
    read_pfm,
    save_manifest,
    save_results,
    write_pfm,
    write_png16,
)
from mirage_eval.errors import (
    AllInvalid,
    CorruptFile,
    DanglingCropRef,
    DuplicateSampleId,
    SchemaError,
    UnsupportedFormat,
)
from mirage_eval.synth import FixtureSpec, make_scene


def test_small_pfm_round_trip_is_bitwise(tmp_path):
    grid = np.array([[1.5, -2.25], [np.float32(0.1), 3e38]], dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", grid)
    back = load_depth(tmp_path / "a.pfm")
    assert back.values.dtype == np.float32
    assert back.values.tobytes() == grid.tobytes()


def test_rows_are_stored_bottom_to_top(tmp_path):
    grid = np.array([[1, 2], [3, 4]], dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", grid)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    assert np.frombuffer(raw[-16:], "<f4").tolist() == [3, 4, 1, 2]


def test_big_endian_twin_loads_identically(tmp_path, rng):
    grid = rng.normal(size=(5, 7)).astype(np.float32)
    write_pfm(tmp_path / "le.pfm", grid, little_endian=True)
    write_pfm(tmp_path / "be.pfm", grid, little_endian=False)
    assert (tmp_path / "be.pfm").read_bytes().split(b"\n")[2] == b"1.0"
    assert np.array_equal(read_pfm(tmp_path / "le.pfm"), read_pfm(tmp_path / "be.pfm"))


@settings(max_examples=60)
@given(arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(width=32, allow_nan=False)),
       st.booleans())
def test_pfm_round_trip_property(tmp_path_factory, grid, little):
    path = tmp_path_factory.mktemp("pfm") / "g.pfm"
    write_pfm(path, grid, little_endian=little)
    assert read_pfm(path).tobytes() == grid.astype(np.float32).tobytes()


def test_nonfinite_entries_are_invalid(tmp_path):
    grid = np.array([[1.0, np.nan], [np.inf, 2.0]], dtype=np.float32)
    write_pfm(tmp_path / "a.pfm", grid)
    d = load_depth(tmp_path / "a.pfm")
    assert d.valid.tolist() == [[True, False], [False, True]]
    write_pfm(tmp_path / "b.pfm", np.full((2, 2), np.nan, dtype=np.float32))
    with pytest.raises(AllInvalid):
        load_depth(tmp_path / "b.pfm")


def test_pfm_format_errors(tmp_path):
    (tmp_path / "color.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + b"\0" * 12)
    with pytest.raises(UnsupportedFormat):
        load_depth(tmp_path / "color.pfm")
    (tmp_path / "short.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + b"\0" * 12)
    with pytest.raises(CorruptFile):
        load_depth(tmp_path / "short.pfm")
    (tmp_path / "hdr.pfm").write_bytes(b"Pf\nx y\n")
    with pytest.raises(CorruptFile):
        load_depth(tmp_path / "hdr.pfm")
    (tmp_path / "zero.pfm").write_bytes(b"Pf\n1 1\n0\n" + b"\0" * 4)
    with pytest.raises(CorruptFile):
        load_depth(tmp_path / "zero.pfm")
    (tmp_path / "x.bin").write_bytes(b"GIF89a....")
    with pytest.raises(UnsupportedFormat):
        load_depth(tmp_path / "x.bin")


def test_png16_linear_map(tmp_path):
    raw = np.array([[1234, 0], [65535, 1000]])
    write_png16(tmp_path / "d.png", raw)
    d = load_depth(tmp_path / "d.png", png_scale=0.001, png_offset=0)
    assert d.values[0, 0] == pytest.approx(1.234, abs=1e-15)
    d2 = load_depth(tmp_path / "d.png", png_scale=2.0, png_offset=1000)
    assert d2.values[1, 1] == 0.0
    with pytest.raises(SchemaError):
        load_depth(tmp_path / "d.png")


def test_eight_bit_png_rejected(tmp_path):
    Image.fromarray(np.zeros((3, 3), dtype=np.uint8)).save(tmp_path / "d8.png")
    with pytest.raises(UnsupportedFormat):
        load_depth(tmp_path / "d8.png", png_scale=1.0)


# ------------------------------------------------------------------ manifest


def minimal_doc():
    return {
        "version": 1,
        "samples": [{
            "id": "s0001", "width": 32, "height": 24,
            "rois": [{"polygon": [[4, 4], [20, 4], [20, 16], [4, 16]],
                      "exclusions": [[[8, 8], [12, 8], [12, 12]]]}],
            "crops": [{"id": "c0", "rect": [2, 2, 22, 18], "seed": 7}],
            "depth": {"student": {"full": "s/full.pfm", "crops": {"c0": "s/c0.pfm"}},
                      "teacher": {"full": "t/full.png", "crops": {}, "png_scale": 0.001, "png_offset": 0}},
            "negative": False,
        }],
    }


def test_minimal_manifest_parses_field_for_field(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(minimal_doc()))
    m = load_manifest(path)
    assert m.version == 1 and m.root == tmp_path
    s = m.samples[0]
    assert (s.id, s.width, s.height, s.negative) == ("s0001", 32, 24, False)
    assert s.rois[0].outer == ((4.0, 4.0), (20.0, 4.0), (20.0, 16.0), (4.0, 16.0))
    assert s.rois[0].exclusions == (((8.0, 8.0), (12.0, 8.0), (12.0, 12.0)),)
    assert s.crop("c0").as_list() == [2, 2, 22, 18] and s.crop("c0").seed == 7
    assert s.depth["student"].crops == {"c0": "s/c0.pfm"}
    assert s.depth["teacher"].png_scale == 0.001
    assert m.resolve("s/full.pfm") == tmp_path / "s/full.pfm"


def test_dangling_crop_reference():
    doc = minimal_doc()
    doc["samples"][0]["depth"]["student"]["crops"]["c9"] = "x.pfm"
    with pytest.raises(DanglingCropRef) as info:
        parse_manifest(doc)
    assert (info.value.sample_id, info.value.crop_id) == ("s0001", "c9")


def test_duplicate_sample_ids():
    doc = minimal_doc()
    doc["samples"].append(copy.deepcopy(doc["samples"][0]))
    with pytest.raises(DuplicateSampleId):
        parse_manifest(doc)


def test_semantic_violations():
    for mutate in (
        lambda s: s.update(rois=[]),
        lambda s: s["crops"][0].update(rect=[2, 2, 40, 18]),
        lambda s: s["crops"].append(dict(s["crops"][0])),
        lambda s: s["depth"]["student"].update(full="/abs/full.pfm"),
        lambda s: s.update(width=0),
        lambda s: s["crops"][0].update(seed=-1),
        lambda s: s["rois"][0].update(polygon=[[0, 0], [1, 1]]),
        lambda s: s["depth"]["teacher"].update(png_scale=0),
    ):
        doc = minimal_doc()
        mutate(doc["samples"][0])
        with pytest.raises(SchemaError):
            parse_manifest(doc)
    doc = minimal_doc()
    doc["version"] = 2
    with pytest.raises(SchemaError):
        parse_manifest(doc)
    neg = minimal_doc()
    neg["samples"][0].update(rois=[], negative=True)
    assert parse_manifest(neg).samples[0].negative


def _leaves(obj, path=()):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, path + (k,))
    elif isinstance(obj, list) and obj:
        for i, v in enumerate(obj):
            yield from _leaves(v, path + (i,))
    yield path, obj


def _wrong_type(value):
    if isinstance(value, bool):
        return "maybe"
    if isinstance(value, (int, float)):
        return "7"
    if isinstance(value, str):
        return 7
    if isinstance(value, list):
        return {"not": "a list"}
    return ["not", "an object"]


def test_every_single_field_corruption_is_rejected():
    base = minimal_doc()
    mutations = 0
    for path, value in _leaves(base):
        if not path:
            continue
        doc = copy.deepcopy(base)
        parent = doc
        for key in path[:-1]:
            parent = parent[key]
        parent[path[-1]] = _wrong_type(value)
        with pytest.raises(SchemaError):
            parse_manifest(doc)
        mutations += 1
        # deleting a required field (or an optional one with a required sibling) must also fail
        if isinstance(path[-1], str) and path[-1] in ("id", "width", "height", "polygon", "rect", "seed",
                                                       "full", "version", "samples"):
            doc = copy.deepcopy(base)
            parent = doc
            for key in path[:-1]:
                parent = parent[key]
            del parent[path[-1]]
            with pytest.raises(SchemaError):
                parse_manifest(doc)
    assert mutations > 40
    doc = copy.deepcopy(base)
    doc["samples"][0]["colour"] = "red"
    with pytest.raises(SchemaError):
        parse_manifest(doc)


def test_large_manifest_parses_fast_and_round_trips(tmp_path):
    scene = make_scene(FixtureSpec("bump"), 0)
    samples = []
    for i in range(1872):
        rec = copy.deepcopy(scene.fragment)
        rec["id"] = f"s{i:04d}"
        rec["depth"] = {"teacher": {"full": f"d/{i}.pfm", "crops": {r.id: f"d/{i}_{r.id}.pfm" for r in scene.rects}}}
        samples.append(rec)
    path = tmp_path / "big.json"
    path.write_text(json.dumps({"version": 1, "samples": samples}))
    best = min(_timed(load_manifest, path) for _ in range(3))
    assert best < 0.1, f"parse took {best * 1000:.1f} ms"
    m = load_manifest(path)
    save_manifest(m, tmp_path / "again.json")
    m2 = load_manifest(tmp_path / "again.json")
    assert m2.to_dict() == m.to_dict()
    save_manifest(m2, tmp_path / "third.json")
    assert (tmp_path / "again.json").read_bytes() == (tmp_path / "third.json").read_bytes()


def _timed(fn, *args):
    t = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t


# ------------------------------------------------------------------- results


def test_results_are_canonical(tmp_path):
    report = {"z": [1, 2.5, {"b": 0.1, "a": None}], "dcs": 994.58, "n": 3, "ok": True, "empty": {}}
    save_results(report, tmp_path / "r1.json")
    loaded = load_results(tmp_path / "r1.json")
    assert loaded == report
    save_results(loaded, tmp_path / "r2.json")
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    text = (tmp_path / "r1.json").read_text()
    assert '"dcs": 994.58' in text
    assert text.index('"dcs"') < text.index('"empty"') < text.index('"z"')


@settings(max_examples=200)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_serialization_is_lossless(x):
    text = dumps_canonical({"x": x})
    assert json.loads(text)["x"] == x
    assert isinstance(json.loads(text)["x"], float)
    assert dumps_canonical(json.loads(text)) == text


def test_empty_result_set(tmp_path):
    save_results({}, tmp_path / "e.json")
    assert load_results(tmp_path / "e.json") == {}
    save_results({"units": []}, tmp_path / "u.json")
    assert load_results(tmp_path / "u.json") == {"units": []}


def test_unwritable_target_raises_io_error(tmp_path):
    from mirage_eval.errors import IoError

    (tmp_path / "file").write_text("x")
    with pytest.raises(IoError):
        save_results({}, tmp_path / "file" / "sub" / "r.json")
