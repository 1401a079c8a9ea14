import logging
import math
import os
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fixture_bytes, fixture_path
from oracles import frac_iou
from weatherbias.data import (Annotation, BBox, ClassSet, DatasetManifest, Detection, Record, filter_classes,
                              iou, manifest_from_text, manifest_to_text, mix_datasets, parse_coco_json,
                              parse_voc_xml, read_manifest, write_manifest)
from weatherbias.errors import ConfigError, ParseError, VersionError

CAR, BUS, PERSON, BICYCLE = range(4)


def boxes(max_coord=50):
    def build(x0, y0, w, h):
        return BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))
    c = st.integers(0, max_coord)
    s = st.integers(1, max_coord)
    return st.builds(build, c, c, s, s)


# --------------------------------------------------------------------------
# BBox / iou
# --------------------------------------------------------------------------

def test_iou_identity():
    b = BBox(3, 4, 10, 12)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0


def test_iou_half_overlap_is_one_third():
    assert iou(BBox(0, 0, 2, 2), BBox(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-12)


def test_touching_boxes_do_not_overlap():
    assert iou(BBox(0, 0, 2, 2), BBox(2, 0, 4, 2)) == 0.0


@pytest.mark.parametrize("coords", [(0, 0, 0, 1), (2, 0, 1, 1), (-1, 0, 1, 1), (0, 0, math.inf, 1)])
def test_bbox_rejects_invalid(coords):
    with pytest.raises(ValueError):
        BBox(*coords)


def test_detection_confidence_range():
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), 0, 1.5)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(boxes(), boxes())
def test_iou_matches_exact_fraction(a, b):
    exact = frac_iou(a.as_tuple(), b.as_tuple())
    assert abs(iou(a, b) - float(exact)) <= 1e-12


@given(boxes(), st.data())
def test_iou_containment_is_area_ratio(a, data):
    x0 = data.draw(st.integers(int(a.xmin), int(a.xmax) - 1))
    y0 = data.draw(st.integers(int(a.ymin), int(a.ymax) - 1))
    x1 = data.draw(st.integers(x0 + 1, int(a.xmax)))
    y1 = data.draw(st.integers(y0 + 1, int(a.ymax)))
    b = BBox(x0, y0, x1, y1)
    assert iou(a, b) == pytest.approx(b.area / a.area, abs=1e-12)


# --------------------------------------------------------------------------
# ClassSet
# --------------------------------------------------------------------------

def test_default_class_set_order():
    assert ClassSet().names == ("car", "bus", "person", "bicycle")


def test_class_set_rejects_duplicates():
    with pytest.raises(ConfigError):
        ClassSet(("car", "car"))


# --------------------------------------------------------------------------
# VOC XML
# --------------------------------------------------------------------------

def test_voc_zero_objects():
    anns, size = parse_voc_xml(fixture_bytes("voc_empty.xml"))
    assert anns == [] and size == (64, 48)


def test_voc_one_car_echoes_fields():
    anns, size = parse_voc_xml(fixture_bytes("voc_one_car.xml"))
    assert size == (320, 240)
    assert anns == [Annotation(BBox(10, 20, 110, 220), CAR, False)]


def test_voc_drops_unknown_keeps_difficult_and_clips():
    anns, size = parse_voc_xml(fixture_bytes("voc_mixed.xml"))
    assert size == (200, 100)
    assert anns == [Annotation(BBox(5, 6, 25, 70), PERSON, True),
                    Annotation(BBox(120, 40, 200, 99), BICYCLE, False)]


def test_voc_truncated_document_reports_byte_offset():
    doc = fixture_bytes("voc_truncated.xml")
    with pytest.raises(ParseError) as info:
        parse_voc_xml(doc)
    assert info.value.offset is not None
    assert 0 <= info.value.offset <= len(doc)


def test_voc_missing_bndbox_names_object_index():
    with pytest.raises(ParseError) as info:
        parse_voc_xml(fixture_bytes("voc_no_bndbox.xml"))
    assert info.value.record == 1
    assert "object 1" in str(info.value)


def test_voc_accepts_str_input():
    text = fixture_bytes("voc_one_car.xml").decode()
    assert parse_voc_xml(text)[0][0].class_id == CAR


# --------------------------------------------------------------------------
# COCO JSON
# --------------------------------------------------------------------------

def test_coco_zero_annotations():
    m = parse_coco_json(fixture_bytes("coco_empty.json"))
    assert m.records == ()


def test_coco_converts_boxes_and_drops_unknown(caplog):
    with caplog.at_level(logging.INFO, logger="weatherbias.data"):
        m = parse_coco_json(fixture_bytes("coco_small.json"))
    assert [r.image_path for r in m.records] == ["a.jpg", "b.jpg"]
    assert m.records[0].image_size == (100, 80)
    assert m.records[0].annotations == (Annotation(BBox(5, 5, 15, 25), BUS, False),)
    # the crowd region is clipped to the image and kept as difficult
    assert m.records[1].annotations == (Annotation(BBox(40, 10, 50, 40), PERSON, True),)
    assert "dropped 1 COCO annotations" in caplog.text


@pytest.mark.parametrize("name", ["coco_missing_arrays.json", "coco_truncated.json"])
def test_coco_malformed_documents(name):
    with pytest.raises(ParseError):
        parse_coco_json(fixture_bytes(name))


def test_coco_truncated_reports_offset():
    doc = fixture_bytes("coco_truncated.json")
    with pytest.raises(ParseError) as info:
        parse_coco_json(doc)
    assert info.value.offset == len(doc)


def test_coco_unknown_image_id_is_record_error():
    with pytest.raises(ParseError) as info:
        parse_coco_json(fixture_bytes("coco_bad_image_ref.json"))
    assert info.value.record == 1


# --------------------------------------------------------------------------
# filter_classes
# --------------------------------------------------------------------------

SIX = ClassSet(("car", "bus", "truck", "motorcycle", "person", "bicycle"))


def _six_class_manifest():
    recs = [
        Record("a.ppm", (64, 64), [Annotation(BBox(0, 0, 5, 5), 0), Annotation(BBox(1, 1, 9, 9), 2),
                                   Annotation(BBox(2, 2, 6, 6), 5)]),
        Record("b.ppm", (64, 64), [Annotation(BBox(0, 0, 5, 5), 3), Annotation(BBox(3, 3, 8, 8), 4),
                                   Annotation(BBox(4, 4, 7, 7), 1)]),
    ]
    return DatasetManifest(recs, SIX, "dawn-like")


def test_filter_keep_all_is_identity_up_to_remap():
    m = _six_class_manifest()
    out = filter_classes(m, SIX)
    assert out == m


def test_filter_removes_truck_and_motorcycle():
    out = filter_classes(_six_class_manifest(), ClassSet())
    assert out.class_set == ClassSet()
    ids = [[a.class_id for a in r.annotations] for r in out.records]
    assert ids == [[CAR, BICYCLE], [PERSON, BUS]]


def test_filter_to_empty_keeps_images():
    m = DatasetManifest([Record("p.ppm", (10, 10), [Annotation(BBox(0, 0, 2, 2), PERSON)])])
    out = filter_classes(m, ["car"])
    assert len(out.records) == 1 and out.records[0].annotations == ()


def test_filter_unknown_class_is_config_error():
    with pytest.raises(ConfigError):
        filter_classes(_six_class_manifest(), ["car", "tram"])


@given(st.sets(st.sampled_from(SIX.names), min_size=1))
def test_filter_idempotent(keep):
    keep = ClassSet(tuple(n for n in SIX.names if n in keep))
    once = filter_classes(_six_class_manifest(), keep)
    assert filter_classes(once, keep) == once


# --------------------------------------------------------------------------
# mix_datasets
# --------------------------------------------------------------------------

def _manifest(prefix, n, condition="clean"):
    return DatasetManifest([Record(f"{prefix}{i}.ppm", (8, 8), [Annotation(BBox(0, 0, 4, 4), i % 4)], condition)
                            for i in range(n)], provenance=prefix)


def test_mix_zero_fraction_is_shuffled_clean():
    clean, bad = _manifest("c", 20), _manifest("x", 10, "corrupted:fog")
    out = mix_datasets(clean, bad, 0.0, seed=5)
    assert sorted(r.image_path for r in out.records) == sorted(r.image_path for r in clean.records)


def test_mix_full_fraction_takes_everything():
    out = mix_datasets(_manifest("c", 20), _manifest("x", 10), 1.0, seed=5)
    assert len(out.records) == 30


def test_mix_quarter_of_hundred_is_exactly_25():
    out = mix_datasets(_manifest("c", 40), _manifest("x", 100, "corrupted:fog"), 0.25, seed=1)
    assert sum(r.condition != "clean" for r in out.records) == 25


def test_mix_floor_rule():
    out = mix_datasets(_manifest("c", 5), _manifest("x", 7, "corrupted:fog"), 0.5, seed=0)
    assert sum(r.condition != "clean" for r in out.records) == 3


def test_mix_rejects_mismatched_class_sets():
    other = DatasetManifest([], ClassSet(("car",)))
    with pytest.raises(ConfigError):
        mix_datasets(_manifest("c", 3), other, 0.5, 0)


@given(st.floats(0, 1), st.integers(0, 2**40))
def test_mix_deterministic(fraction, seed):
    clean, bad = _manifest("c", 12), _manifest("x", 9, "corrupted:rain")
    a = manifest_to_text(mix_datasets(clean, bad, fraction, seed))
    b = manifest_to_text(mix_datasets(clean, bad, fraction, seed))
    assert a == b
    k = math.floor(Fraction(repr(fraction)) * 9)
    assert a.count("corrupted:rain") == k


def test_mix_rewrites_paths_relative_to_clean_root(tmp_path):
    clean = DatasetManifest(_manifest("c", 2).records, root=str(tmp_path / "clean"))
    bad = DatasetManifest(_manifest("x", 2).records, root=str(tmp_path / "bad"))
    out = mix_datasets(clean, bad, 1.0, 0)
    paths = {os.path.normpath(out.resolve(r)) for r in out.records}
    assert paths == {str(tmp_path / d / f) for d, f in
                     [("clean", "c0.ppm"), ("clean", "c1.ppm"), ("bad", "x0.ppm"), ("bad", "x1.ppm")]}


# --------------------------------------------------------------------------
# Manifest format
# --------------------------------------------------------------------------

def test_manifest_golden_round_trip():
    text = fixture_bytes("manifest_golden.txt").decode()
    m = manifest_from_text(text)
    assert m.records[0].annotations[1] == Annotation(BBox(40, 10, 48, 40), PERSON, True)
    assert m.records[1].condition == "corrupted:fog" and m.records[1].annotations == ()
    assert m.records[2].image_size == (64, 48)
    assert manifest_to_text(m) == text


def test_manifest_empty_round_trip(tmp_path):
    m = DatasetManifest((), provenance="nothing")
    path = tmp_path / "m.txt"
    write_manifest(m, path)
    assert read_manifest(path) == m


def test_manifest_wrong_version():
    with pytest.raises(VersionError):
        read_manifest(fixture_path("manifest_v2.txt"))


def test_manifest_bad_line_is_record_error():
    with pytest.raises(ParseError) as info:
        read_manifest(fixture_path("manifest_bad_fields.txt"))
    assert info.value.record == 2


def test_manifest_rejects_box_outside_image():
    with pytest.raises(ConfigError):
        DatasetManifest([Record("a", (10, 10), [Annotation(BBox(0, 0, 11, 5), 0)])])


def test_manifest_rejects_class_outside_set():
    with pytest.raises(ConfigError):
        DatasetManifest([Record("a", (10, 10), [Annotation(BBox(0, 0, 5, 5), 4)])])


def _records(draw_box=boxes(30)):
    ann = st.builds(Annotation, draw_box, st.integers(0, 3), st.booleans())
    rec = st.builds(lambda i, anns, cond: Record(f"img/{i:04d}.ppm", (96, 96), anns, cond),
                    st.integers(0, 9999), st.lists(ann, max_size=4),
                    st.sampled_from(["clean", "corrupted:fog", "corrupted:fog+rain"]))
    return st.lists(rec, max_size=6)


@given(_records(), st.text(alphabet="abc xyz|=()", max_size=20))
def test_manifest_round_trip_property(records, provenance):
    m = DatasetManifest(records, provenance=provenance)
    assert manifest_from_text(manifest_to_text(m)) == m


@given(st.lists(st.floats(0, 60, allow_nan=False), min_size=4, max_size=4))
def test_manifest_preserves_float_coordinates_exactly(vals):
    x0, x1 = sorted(vals[:2])
    y0, y1 = sorted(vals[2:])
    if x0 == x1 or y0 == y1:
        return
    m = DatasetManifest([Record("a", (64, 64), [Annotation(BBox(x0, y0, x1, y1), 0)])])
    assert manifest_from_text(manifest_to_text(m)) == m
