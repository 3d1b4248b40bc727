import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfray.geometry import mirror_points
from rfray.scene import Scene, Surface, TxNode, RxNode
from rfray.synth import SynthSpec, gen_scene
from rfray.tracer import (
    TraceError,
    incident_angle,
    load_pathset,
    save_pathset,
    trace_all,
    trace_pair,
)

from helpers import make_wall


def small_spec(seed, **kw):
    defaults = dict(
        seed=seed,
        area_m=40.0,
        n_buildings=2,
        n_screens=1,
        n_tx=1,
        n_rx=3,
        building_w_range=(6.0, 12.0),
        building_h_range=(4.0, 9.0),
    )
    defaults.update(kw)
    return SynthSpec(**defaults)


def mirror_chain_length(scene, tx_pos, rx_pos, surface_ids):
    img = np.asarray(tx_pos, dtype=float)
    for sid in surface_ids:
        poly = scene.surfaces[sid].polygon
        img = mirror_points(img[None, :], poly.normal, poly.offset)[0]
    return float(np.linalg.norm(img - rx_pos))


def check_reflection_law(scene, tx_pos, rec, tol=1e-9):
    chain = [np.asarray(tx_pos)] + [p.position for p in rec.points] + [None]
    for i, p in enumerate(rec.points):
        a = chain[i]
        b = p.position
        nxt = rec.points[i + 1].position if i + 1 < len(rec.points) else None
        d_in = (b - a) / np.linalg.norm(b - a)
        n = scene.surfaces[p.surface_id].polygon.normal
        reflected = d_in - 2.0 * (d_in @ n) * n
        # outgoing direction
        c = nxt if nxt is not None else None
        if c is None:
            return  # caller supplies rx for the last hop
        d_out = (c - b) / np.linalg.norm(c - b)
        assert np.linalg.norm(reflected - d_out) <= tol


def full_reflection_law(scene, tx_pos, rx_pos, rec, tol=1e-9):
    verts = [np.asarray(tx_pos)] + [p.position for p in rec.points] + [np.asarray(rx_pos)]
    for i, p in enumerate(rec.points):
        d_in = verts[i + 1] - verts[i]
        d_in = d_in / np.linalg.norm(d_in)
        d_out = verts[i + 2] - verts[i + 1]
        d_out = d_out / np.linalg.norm(d_out)
        n = scene.surfaces[p.surface_id].polygon.normal
        reflected = d_in - 2.0 * (d_in @ n) * n
        assert np.linalg.norm(reflected - d_out) <= tol
        # stored angle agrees with the incoming direction
        assert abs(p.incident_angle_rad - np.arccos(abs(d_in @ n))) <= 1e-12


def test_single_mirror_bounce(mirror_scene):
    paths = trace_pair(mirror_scene, mirror_scene.tx_nodes[0], mirror_scene.rx_nodes[0])
    assert [p.n_bounces for p in paths] == [0, 1]  # LOS ranks first (shorter)
    bounce = paths[1]
    assert np.allclose(bounce.points[0].position, [1.0, 0.0, 0.0], atol=1e-12)
    assert abs(bounce.points[0].incident_angle_rad - np.pi / 4) <= 1e-12
    assert abs(bounce.length_m - 2.0 * np.sqrt(2.0)) <= 1e-12


def test_los_only_no_surfaces():
    scene = Scene(
        surfaces=(),
        tx_nodes=(TxNode(0, [0.0, 1.0, 0.0], 10.0),),
        rx_nodes=(RxNode(0, [2.0, 1.0, 0.0]),),
        carrier_wavelength_m=0.125,
    )
    paths = trace_pair(scene, scene.tx_nodes[0], scene.rx_nodes[0])
    assert len(paths) == 1
    assert paths[0].points == ()
    assert paths[0].length_m == 2.0


def test_trace_all_single_pair_los():
    scene = Scene(
        surfaces=(),
        tx_nodes=(TxNode(0, [0.0, 0.0, 5.0], 10.0),),
        rx_nodes=(RxNode(0, [3.0, 4.0, 5.0]),),
        carrier_wavelength_m=0.125,
    )
    ps = trace_all(scene)
    assert len(ps.paths) == 1
    assert ps.get(0, 0)[0].length_m == 5.0


def test_incident_angle_examples():
    n = np.array([0.0, 1.0, 0.0])
    assert incident_angle(-n, n) == 0.0
    d = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    assert abs(incident_angle(d, n) - np.pi / 4) <= 1e-12


def test_incident_angle_rejects_non_unit():
    with pytest.raises(ValueError, match="unit"):
        incident_angle(np.array([1.0, 1.0, 0.0]), np.array([0.0, 1.0, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_incident_angle_normal_flip_invariance(seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    assert incident_angle(d, n) == incident_angle(d, -n)


def test_degenerate_tx_on_surface_errors():
    wall = make_wall(0)
    scene = Scene(
        surfaces=(wall,),
        tx_nodes=(TxNode(3, [1.0, 0.0, 0.0], 1.0),),  # on the wall polygon
        rx_nodes=(RxNode(0, [1.0, 2.0, 0.0]),),
        carrier_wavelength_m=0.125,
    )
    with pytest.raises(TraceError, match="tx_node 3 lies on surface 0"):
        trace_pair(scene, scene.tx_nodes[0], scene.rx_nodes[0])


def test_image_unfolding_and_reflection_law():
    checked = 0
    for seed in range(12):
        scene = gen_scene(small_spec(seed, n_rx=5))
        ps = trace_all(scene, max_reflections=3, max_paths=10)
        tx_by_id = {t.id: t for t in scene.tx_nodes}
        rx_by_id = {r.id: r for r in scene.rx_nodes}
        for (tx_id, rx_id), recs in ps.paths.items():
            for rec in recs:
                tx_pos = tx_by_id[tx_id].position
                rx_pos = rx_by_id[rx_id].position
                if rec.n_bounces:
                    expect = mirror_chain_length(scene, tx_pos, rx_pos, rec.surface_ids())
                    assert abs(rec.length_m - expect) <= 1e-9 * max(1.0, expect)
                    full_reflection_law(scene, tx_pos, rx_pos, rec)
                    checked += 1
                # stored length always equals the segment sum
                verts = [tx_pos] + [p.position for p in rec.points] + [rx_pos]
                seg_sum = sum(
                    float(np.linalg.norm(b - a)) for a, b in zip(verts[:-1], verts[1:])
                )
                assert abs(rec.length_m - seg_sum) <= 1e-9 * max(1.0, seg_sum)
    assert checked > 20


def _blocker_for_segment(a, b, sid, half=0.4):
    mid = 0.5 * (a + b)
    u = (b - a) / np.linalg.norm(b - a)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(u @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    v = np.cross(u, helper)
    v /= np.linalg.norm(v)
    w = np.cross(u, v)
    verts = np.array([mid + half * v, mid + half * w, mid - half * v, mid - half * w])
    return Surface(id=sid, vertices=verts)


def test_occlusion_soundness_adversarial():
    removed = 0
    seed = 0
    while removed < 25:
        seed += 1
        scene = gen_scene(small_spec(seed, n_rx=2))
        ps = trace_all(scene, max_paths=10)
        tx = scene.tx_nodes[0]
        for (tx_id, rx_id), recs in sorted(ps.paths.items()):
            if not recs:
                continue
            rec = max(recs, key=lambda r: r.length_m)
            rx_pos = next(r.position for r in scene.rx_nodes if r.id == rx_id)
            verts = [tx.position] + [p.position for p in rec.points] + [rx_pos]
            segs = list(zip(verts[:-1], verts[1:]))
            a, b = max(segs, key=lambda s: np.linalg.norm(s[1] - s[0]))
            if np.linalg.norm(b - a) < 2.0:
                continue
            blocker = _blocker_for_segment(a, b, scene.surface_count)
            try:
                blocked_scene = Scene(
                    surfaces=scene.surfaces + (blocker,),
                    tx_nodes=scene.tx_nodes,
                    rx_nodes=scene.rx_nodes,
                    carrier_wavelength_m=scene.carrier_wavelength_m,
                )
            except Exception:
                continue  # blocker landed on a node; try another pair
            ps2 = trace_all(blocked_scene, max_paths=10)
            old = (rec.surface_ids(), round(rec.length_m, 9))
            new_ids = {
                (r.surface_ids(), round(r.length_m, 9)) for r in ps2.get(tx_id, rx_id)
            }
            assert old not in new_ids, f"path {old} survived an inserted blocker"
            removed += 1
            if removed >= 25:
                break


def test_path_count_monotonic_in_max_reflections():
    scene = gen_scene(small_spec(7, n_rx=2))
    seen = {}
    prev = set()
    for cap in range(4):
        ps = trace_all(scene, max_reflections=cap, max_paths=10**6)
        ids = {
            (k, r.surface_ids(), round(r.length_m, 9))
            for k, recs in ps.paths.items()
            for r in recs
        }
        assert prev <= ids
        seen[cap] = len(ids)
        prev = ids
    assert seen[3] > seen[0]


def test_surface_relabeling_permutes_paths():
    scene = gen_scene(small_spec(11, n_rx=2))
    rng = np.random.default_rng(5)
    perm = rng.permutation(scene.surface_count)
    relabeled = Scene(
        surfaces=tuple(
            Surface(id=int(perm[s.id]), vertices=s.vertices, material_id=s.material_id)
            for s in scene.surfaces
        ),
        tx_nodes=scene.tx_nodes,
        rx_nodes=scene.rx_nodes,
        carrier_wavelength_m=scene.carrier_wavelength_m,
    )
    a = trace_all(scene, max_paths=10**6)
    b = trace_all(relabeled, max_paths=10**6)
    for key in a.paths:
        sa = {
            (tuple(int(perm[i]) for i in r.surface_ids()), round(r.length_m, 10))
            for r in a.paths[key]
        }
        sb = {(r.surface_ids(), round(r.length_m, 10)) for r in b.paths[key]}
        assert sa == sb


def test_ranking_strongest_first_and_cap():
    scene = gen_scene(small_spec(3, n_rx=4))
    ps = trace_all(scene, max_paths=5)
    for recs in ps.paths.values():
        assert len(recs) <= 5
        lengths = [r.length_m for r in recs]
        assert lengths == sorted(lengths)


def test_paper_scale_caps_per_rx():
    spec = small_spec(21, n_tx=3, n_rx=4)
    scene = gen_scene(spec)
    ps = trace_all(scene, max_reflections=3, max_paths=7)
    for rx in scene.rx_nodes:
        total = sum(len(ps.get(tx.id, rx.id)) for tx in scene.tx_nodes)
        assert total <= 21  # 7 per pair, 3 TX


def test_pathset_csv_round_trip(tmp_path):
    scene = gen_scene(small_spec(9, n_rx=3))
    ps = trace_all(scene)
    path = tmp_path / "pathset.csv"
    save_pathset(ps, path)
    back = load_pathset(path, tx_ids=ps.tx_ids, rx_ids=ps.rx_ids)
    assert back.tx_ids == ps.tx_ids
    assert back.rx_ids == ps.rx_ids
    for key in ps.paths:
        ra, rb = ps.paths[key], back.paths.get(key, ())
        assert len(ra) == len(rb)
        for x, y in zip(ra, rb):
            assert x.length_m == y.length_m
            assert x.surface_ids() == y.surface_ids()
            for p, q in zip(x.points, y.points):
                assert p.incident_angle_rad == q.incident_angle_rad
                assert np.array_equal(p.position, q.position)


def test_trace_all_deterministic():
    scene = gen_scene(small_spec(13, n_rx=2))
    a = trace_all(scene)
    b = trace_all(scene)
    for key in a.paths:
        for x, y in zip(a.paths[key], b.paths[key]):
            assert x.length_m == y.length_m and x.surface_ids() == y.surface_ids()
