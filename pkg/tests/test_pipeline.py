import numpy as np
import pytest

from deformbox.mesh import compute_aabb, make_box_template
from deformbox.pipeline import (
    MissingWeightsError,
    decode_shape,
    encode_shape,
    load_dataset,
    load_shape_dir,
    place_part,
    refine_parts,
)
from deformbox.synth import gapped_record, make_table, table_category, write_corpus


@pytest.fixture(scope="module")
def table():
    category = table_category()
    parts = make_table(np.random.default_rng(3), "legs4", m=2)
    return category, parts, make_box_template(2)


def test_encode_decode_round_trip_with_features(table):
    category, parts, template = table
    enc = encode_shape(category, parts, template)
    assert enc.registration == {}  # parts already share the template connectivity
    meshes, sol = decode_shape(enc.record, category, template, part_features=enc.features)
    assert sol is None and set(meshes) == set(parts)
    for lab, mesh in parts.items():
        np.testing.assert_allclose(meshes[lab].vertices, mesh.vertices, atol=1e-8)


def test_record_centers_match_part_boxes(table):
    category, parts, template = table
    enc = encode_shape(category, parts, template)
    for lab, mesh in parts.items():
        np.testing.assert_allclose(enc.record.parts[category.label_id(lab)].center, compute_aabb(mesh).center, atol=1e-12)


def test_decode_without_weights_is_an_error(table):
    category, parts, template = table
    enc = encode_shape(category, parts, template)
    with pytest.raises(MissingWeightsError):
        decode_shape(enc.record, category, template)
    with pytest.raises(MissingWeightsError):
        encode_shape(category, parts, template, partvaes={})


def test_unknown_label_and_empty_shape_are_rejected(table):
    category, parts, template = table
    with pytest.raises(ValueError):
        encode_shape(category, {}, template)
    with pytest.raises(KeyError):
        encode_shape(category, {"wheel": parts["top"]}, template)


def test_place_part_moves_center_and_rescales():
    mesh = make_box_template(1).mesh
    placed = place_part(mesh, (1.0, 2.0, 3.0), (0.5, 1.0, 2.0))
    box = compute_aabb(placed)
    np.testing.assert_allclose(box.center, (1.0, 2.0, 3.0), atol=1e-12)
    np.testing.assert_allclose(box.half_extents, (0.5, 1.0, 2.0), atol=1e-12)


def test_refine_parts_closes_gaps():
    category, record, meshes = gapped_record()
    by_id = {category.label_id(k): v for k, v in meshes.items()}
    prob, sol, placed = refine_parts(record, by_id, category)
    assert sol.feasible and sol.objective > 0
    for k, i in enumerate(record.present):
        box = compute_aabb(placed[i])
        np.testing.assert_allclose(box.center, sol.p[k], atol=1e-9)
        np.testing.assert_allclose(box.half_extents, sol.q[k], atol=1e-9)


def test_dataset_loading(tmp_path):
    root = write_corpus(tmp_path, count=3, m=1)
    category, shapes = load_dataset(root)
    assert [sid for sid, _ in shapes] == sorted(sid for sid, _ in shapes) and len(shapes) == 3
    assert category.name == "table"
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        load_shape_dir(tmp_path / "empty", category)
