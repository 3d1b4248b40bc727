import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfray.scene import (
    RxNode,
    Scene,
    SceneFormatError,
    Surface,
    TxNode,
    load_scene,
    one_hot,
    save_scene,
    scene_from_dict,
    scene_to_dict,
)

from helpers import make_wall


def minimal_scene_dict():
    return {
        "version": 1,
        "carrier_wavelength_m": 0.125,
        "surfaces": [
            {"id": 0, "material_id": None,
             "vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0]]}
        ],
        "tx_nodes": [{"id": 0, "position": [0, 0, 2], "power_watts": 10.0}],
        "rx_nodes": [{"id": 0, "position": [1, 1, 2]}],
    }


def test_minimal_scene_loads(tmp_path):
    p = tmp_path / "scene.json"
    p.write_text(json.dumps(minimal_scene_dict()))
    scene = load_scene(p)
    assert scene.surface_count == 1
    assert scene.tx_nodes[0].power_watts == 10.0


def test_duplicate_surface_id_rejected():
    data = minimal_scene_dict()
    data["surfaces"].append(dict(data["surfaces"][0]))
    with pytest.raises(SceneFormatError, match=r"duplicate surface id.*0"):
        scene_from_dict(data)


def test_gapped_surface_ids_rejected():
    data = minimal_scene_dict()
    data["surfaces"][0]["id"] = 1
    with pytest.raises(SceneFormatError, match="0..0"):
        scene_from_dict(data)


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n  "version": 1,\n  "oops"\n}')
    with pytest.raises(SceneFormatError, match=r"line \d+"):
        load_scene(p)


def test_missing_field_reports_context():
    data = minimal_scene_dict()
    del data["surfaces"][0]["vertices"]
    with pytest.raises(SceneFormatError, match=r"surfaces\[0\].*vertices"):
        scene_from_dict(data)


def test_non_coplanar_surface_rejected():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.01], [0, 1, 0]])
    with pytest.raises(SceneFormatError, match="coplanar"):
        Surface(id=0, vertices=verts)


def test_nonconvex_surface_rejected():
    verts = np.array([[0, 0, 0], [2, 0, 0], [2, 2, 0], [1, 0.5, 0], [0, 2, 0]])
    with pytest.raises(SceneFormatError, match="convex"):
        Surface(id=0, vertices=verts)


def test_degenerate_surface_rejected():
    verts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    with pytest.raises(SceneFormatError):
        Surface(id=0, vertices=verts)


def test_normal_matches_edge_cross_product():
    verts = np.array([[0.0, 0, 0], [3, 0, 0], [3, 2, 0], [0, 2, 0]])
    s = Surface(id=0, vertices=verts)
    e1 = verts[1] - verts[0]
    e2 = verts[2] - verts[1]
    expect = np.cross(e1, e2)
    expect /= np.linalg.norm(expect)
    assert np.linalg.norm(s.normal - expect) <= 1e-12
    assert abs(np.linalg.norm(s.normal) - 1.0) <= 1e-12


def test_rx_on_surface_rejected():
    wall = make_wall(0)
    with pytest.raises(SceneFormatError, match="rx_node 0 lies on surface 0"):
        Scene(
            surfaces=(wall,),
            tx_nodes=(TxNode(0, [0.5, 1.0, 0.0], 1.0),),
            rx_nodes=(RxNode(0, [1.0, 0.0, 0.0]),),
            carrier_wavelength_m=0.1,
        )


def test_nonpositive_tx_power_rejected():
    with pytest.raises(SceneFormatError, match="power_watts"):
        TxNode(0, [0, 0, 0], 0.0)


def test_one_hot_definition():
    assert one_hot(0, 1).tolist() == [1.0]
    assert one_hot(2, 5).tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]


def test_one_hot_out_of_range():
    with pytest.raises(ValueError):
        one_hot(5, 5)
    with pytest.raises(ValueError):
        one_hot(-1, 5)


def test_one_hot_exhaustive_l1():
    for size in range(1, 65):
        for s in range(size):
            v = one_hot(s, size)
            assert v.shape == (size,)
            assert np.sum(np.abs(v)) == 1.0
            assert v[s] == 1.0


# --- round-trip property -----------------------------------------------

_coord = st.floats(min_value=-100, max_value=100, allow_nan=False, width=64)


@st.composite
def scenes(draw):
    n_surf = draw(st.integers(1, 4))
    surfaces = []
    for sid in range(n_surf):
        cx = draw(_coord)
        cy = draw(_coord)
        w = draw(st.floats(0.5, 10.0))
        h = draw(st.floats(0.5, 10.0))
        kind = draw(st.integers(0, 2))
        if kind == 0:  # floor-parallel rectangle at some height
            z = draw(st.floats(-5, 5))
            verts = [[cx, cy, z], [cx + w, cy, z], [cx + w, cy + h, z], [cx, cy + h, z]]
        elif kind == 1:  # wall along x
            verts = [[cx, cy, 0], [cx + w, cy, 0], [cx + w, cy, h], [cx, cy, h]]
        else:  # triangle in a tilted plane
            verts = [[cx, cy, 0], [cx + w, cy, 1], [cx, cy + h, 2]]
        surfaces.append(
            Surface(id=sid, vertices=np.array(verts, dtype=float),
                    material_id=draw(st.one_of(st.none(), st.integers(0, 3))))
        )
    tx = [TxNode(i, np.array([draw(_coord), draw(_coord), 200.0 + i]), draw(st.floats(0.1, 50)))
          for i in range(draw(st.integers(1, 3)))]
    rx = [RxNode(i, np.array([draw(_coord), draw(_coord), 300.0 + i]))
          for i in range(draw(st.integers(1, 3)))]
    return Scene(
        surfaces=tuple(surfaces),
        tx_nodes=tuple(tx),
        rx_nodes=tuple(rx),
        carrier_wavelength_m=draw(st.floats(0.01, 1.0)),
    )


@settings(max_examples=40, deadline=None)
@given(scenes())
def test_save_load_round_trip(tmp_path_factory, scene):
    path = tmp_path_factory.mktemp("scenes") / "scene.json"
    save_scene(scene, path)
    back = load_scene(path)
    assert back.carrier_wavelength_m == scene.carrier_wavelength_m
    assert len(back.surfaces) == len(scene.surfaces)
    for a, b in zip(scene.surfaces, back.surfaces):
        assert a.id == b.id
        assert a.material_id == b.material_id
        assert np.array_equal(a.vertices, b.vertices)
        assert np.array_equal(a.normal, b.normal)
    for a, b in zip(scene.tx_nodes, back.tx_nodes):
        assert a.id == b.id and a.power_watts == b.power_watts
        assert np.array_equal(a.position, b.position)
    for a, b in zip(scene.rx_nodes, back.rx_nodes):
        assert a.id == b.id
        assert np.array_equal(a.position, b.position)


def test_writer_is_deterministic(tmp_path):
    scene = scene_from_dict(minimal_scene_dict())
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_scene(scene, p1)
    save_scene(scene, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_scene_dict_field_order():
    scene = scene_from_dict(minimal_scene_dict())
    d = scene_to_dict(scene)
    assert list(d) == ["version", "carrier_wavelength_m", "surfaces", "tx_nodes", "rx_nodes"]
    assert list(d["surfaces"][0]) == ["id", "material_id", "vertices"]
