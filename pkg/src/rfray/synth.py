"""Synthetic scenes and ground-truth measurements.

Scenes are procedurally generated block layouts: axis-aligned box
buildings (4 walls + roof), an optional ground plane, and optional
free-standing screens, each surface tagged with a material whose
attenuation is linear in the incident angle. Measurements are rendered
through the same path tracer and renderer used for training, with the
true coefficients in place of the network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from .reflectance import Coefficient
from .renderer import pad, receive_power
from .scene import Scene, Surface, TxNode, RxNode
from .tracer import PathSet
from .trainer import Measurement


@dataclass(frozen=True)
class MaterialModel:
    """Attenuation a + b*theta (dB) and a constant phase shift per bounce."""

    material_id: int
    name: str
    attenuation_db_at_normal: float   # a
    attenuation_db_slope: float       # b, per radian
    phase_rad: float

    def __post_init__(self):
        ends = [self.attenuation_db(0.0), self.attenuation_db(np.pi / 2)]
        if min(ends) < 0.0:
            raise ValueError(
                f"material {self.name!r}: attenuation goes negative on [0, pi/2]"
            )

    def attenuation_db(self, theta: float | np.ndarray):
        return self.attenuation_db_at_normal + self.attenuation_db_slope * theta


# Attenuation ordering water < vegetation < concrete < brick holds for
# every incident angle (offsets and slopes chosen not to cross).
DEFAULT_MATERIALS = (
    MaterialModel(0, "water", 2.0, -1.0, 2.8),
    MaterialModel(1, "vegetation", 4.5, -2.2, 2.4),
    MaterialModel(2, "concrete", 7.0, -3.4, 3.0),
    MaterialModel(3, "brick", 10.0, -5.0, 2.0),
)


def ground_truth_coefficient(material: MaterialModel, theta: float) -> Coefficient:
    if not 0.0 <= theta <= np.pi / 2:
        raise ValueError(f"incident angle {theta} outside [0, pi/2]")
    amp = 10.0 ** (-material.attenuation_db(theta) / 20.0)
    return Coefficient(amplitude=float(amp), phase=material.phase_rad)


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    area_m: float = 60.0
    n_buildings: int = 2
    building_w_range: tuple[float, float] = (8.0, 16.0)
    building_h_range: tuple[float, float] = (6.0, 12.0)
    building_gap_m: float = 4.0
    include_ground: bool = True
    n_screens: int = 1
    screen_w_range: tuple[float, float] = (4.0, 8.0)
    screen_h_range: tuple[float, float] = (3.0, 5.0)
    n_tx: int = 2
    tx_power_watts: float = 10.0
    tx_mast_m: float = 1.0
    n_rx: int = 600
    rx_height_m: float = 1.0
    rx_margin_m: float = 0.75
    carrier_wavelength_m: float = 0.125
    n_materials: int = 4
    placement_retries: int = 2000

    @classmethod
    def from_dict(cls, data: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth spec field(s): {sorted(unknown)}")
        data = dict(data)
        for name in ("building_w_range", "building_h_range", "screen_w_range", "screen_h_range"):
            if name in data:
                data[name] = tuple(data[name])
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SynthSpec":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def materials(self) -> tuple[MaterialModel, ...]:
        if not 1 <= self.n_materials <= len(DEFAULT_MATERIALS):
            raise ValueError(f"n_materials must be in [1, {len(DEFAULT_MATERIALS)}]")
        return DEFAULT_MATERIALS[: self.n_materials]


def _box_surfaces(x0, x1, y0, y1, h) -> list[np.ndarray]:
    """4 walls + roof of an axis-aligned box on the ground plane."""
    return [
        np.array([[x0, y0, 0], [x1, y0, 0], [x1, y0, h], [x0, y0, h]], dtype=float),
        np.array([[x1, y0, 0], [x1, y1, 0], [x1, y1, h], [x1, y0, h]], dtype=float),
        np.array([[x1, y1, 0], [x0, y1, 0], [x0, y1, h], [x1, y1, h]], dtype=float),
        np.array([[x0, y1, 0], [x0, y0, 0], [x0, y0, h], [x0, y1, h]], dtype=float),
        np.array([[x0, y0, h], [x1, y0, h], [x1, y1, h], [x0, y1, h]], dtype=float),
    ]


def gen_scene(spec: SynthSpec) -> Scene:
    """Deterministic procedural scene; raises if placement is infeasible."""
    rng = np.random.default_rng([spec.seed, 0x11])
    half = spec.area_m / 2.0

    footprints: list[tuple[float, float, float, float]] = []  # x0, x1, y0, y1
    heights: list[float] = []
    for b in range(spec.n_buildings):
        for attempt in range(spec.placement_retries):
            w = rng.uniform(*spec.building_w_range)
            d = rng.uniform(*spec.building_w_range)
            h = rng.uniform(*spec.building_h_range)
            cx = rng.uniform(-half + w / 2 + 1.0, half - w / 2 - 1.0)
            cy = rng.uniform(-half + d / 2 + 1.0, half - d / 2 - 1.0)
            box = (cx - w / 2, cx + w / 2, cy - d / 2, cy + d / 2)
            gap = spec.building_gap_m
            clash = any(
                box[0] - gap < f[1] and box[1] + gap > f[0]
                and box[2] - gap < f[3] and box[3] + gap > f[2]
                for f in footprints
            )
            if not clash:
                footprints.append(box)
                heights.append(h)
                break
        else:
            raise ValueError(f"could not place building {b} after {spec.placement_retries} tries")

    polygons: list[np.ndarray] = []
    if spec.include_ground:
        g = half
        polygons.append(np.array([[-g, -g, 0], [g, -g, 0], [g, g, 0], [-g, g, 0]], dtype=float))
    for (x0, x1, y0, y1), h in zip(footprints, heights):
        polygons.extend(_box_surfaces(x0, x1, y0, y1, h))

    def inside_any_footprint(x, y, margin):
        return any(
            f[0] - margin <= x <= f[1] + margin and f[2] - margin <= y <= f[3] + margin
            for f in footprints
        )

    screens: list[tuple[np.ndarray, np.ndarray, float]] = []  # center, direction, width
    for s in range(spec.n_screens):
        for attempt in range(spec.placement_retries):
            w = rng.uniform(*spec.screen_w_range)
            h = rng.uniform(*spec.screen_h_range)
            cx = rng.uniform(-half + w / 2 + 1.0, half - w / 2 - 1.0)
            cy = rng.uniform(-half + w / 2 + 1.0, half - w / 2 - 1.0)
            az = rng.uniform(0.0, np.pi)
            u = np.array([np.cos(az), np.sin(az), 0.0])
            a = np.array([cx, cy, 0.0]) - (w / 2) * u
            b = np.array([cx, cy, 0.0]) + (w / 2) * u
            samples = [a + t * (b - a) for t in np.linspace(0, 1, 9)]
            if any(inside_any_footprint(p[0], p[1], spec.building_gap_m) for p in samples):
                continue
            polygons.append(
                np.array([a, b, b + [0, 0, h], a + [0, 0, h]], dtype=float)
            )
            screens.append((np.array([cx, cy, 0.0]), u, w))
            break
        else:
            raise ValueError(f"could not place screen {s} after {spec.placement_retries} tries")

    materials = spec.materials()
    mat_ids = [i % len(materials) for i in range(len(polygons))]
    rng.shuffle(mat_ids)
    surfaces = tuple(
        Surface(id=i, vertices=v, material_id=mat_ids[i]) for i, v in enumerate(polygons)
    )

    if spec.n_tx > 0 and not footprints:
        raise ValueError("transmitters require at least one building rooftop")
    tx_nodes = []
    bracket = 0.25  # antenna bracket: just past the roof edge so downward rays clear it
    for i in range(spec.n_tx):
        x0, x1, y0, y1 = footprints[i % len(footprints)]
        h = heights[i % len(footprints)]
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        edge = (i // len(footprints) + i) % 4
        pos = {
            0: (cx, y0 - bracket),
            1: (x1 + bracket, cy),
            2: (cx, y1 + bracket),
            3: (x0 - bracket, cy),
        }[edge]
        tx_nodes.append(
            TxNode(
                id=i,
                position=np.array([pos[0], pos[1], h + spec.tx_mast_m]),
                power_watts=spec.tx_power_watts,
            )
        )

    def near_screen(x, y, margin):
        for c, u, w in screens:
            rel = np.array([x, y, 0.0]) - c
            along = float(np.clip(rel @ u, -w / 2, w / 2))
            closest = c + along * u
            if np.hypot(x - closest[0], y - closest[1]) < margin:
                return True
        return False

    rx_nodes = []
    for i in range(spec.n_rx):
        for attempt in range(spec.placement_retries):
            x = rng.uniform(-half + 0.5, half - 0.5)
            y = rng.uniform(-half + 0.5, half - 0.5)
            if inside_any_footprint(x, y, spec.rx_margin_m):
                continue
            if near_screen(x, y, spec.rx_margin_m):
                continue
            rx_nodes.append(RxNode(id=i, position=np.array([x, y, spec.rx_height_m])))
            break
        else:
            raise ValueError(f"could not place rx {i} after {spec.placement_retries} tries")

    return Scene(
        surfaces=surfaces,
        tx_nodes=tuple(tx_nodes),
        rx_nodes=tuple(rx_nodes),
        carrier_wavelength_m=spec.carrier_wavelength_m,
    )


def surface_material_map(scene: Scene) -> dict[int, int]:
    out = {}
    for s in scene.surfaces:
        if s.material_id is None:
            raise ValueError(f"surface {s.id} has no material label")
        out[s.id] = s.material_id
    return out


def gt_amp_phase(
    materials: Sequence[MaterialModel],
    material_of: dict[int, int],
    angles: np.ndarray,
    surface_ids: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ground-truth coefficients for renderer input slots."""
    mats = {m.material_id: m for m in materials}
    a = np.empty(len(angles))
    b = np.empty(len(angles))
    ph = np.empty(len(angles))
    for i, sid in enumerate(surface_ids):
        m = mats[material_of[int(sid)]]
        a[i] = m.attenuation_db_at_normal
        b[i] = m.attenuation_db_slope
        ph[i] = m.phase_rad
    att = a + b * np.asarray(angles)
    return 10.0 ** (-att / 20.0), ph


def gen_measurements(
    scene: Scene,
    pathset: PathSet,
    materials: Sequence[MaterialModel],
    noise_db: Optional[float] = None,
    seed: int = 0,
) -> tuple[Measurement, ...]:
    """Render true receive powers (dBm); optional Gaussian dB noise."""
    batch = pad(pathset, scene.tx_nodes, scene.carrier_wavelength_m)
    amp, phase = gt_amp_phase(
        materials, surface_material_map(scene), batch.real_angles, batch.real_surface_ids
    )
    result = receive_power(batch, amp, phase)
    dbm = result.p_dbm.copy()
    if noise_db:
        rng = np.random.default_rng([seed, 0x33])
        noise = rng.normal(0.0, noise_db, size=dbm.shape)
        dbm = np.where(np.isfinite(dbm), dbm + noise, dbm)
    return tuple(
        Measurement(rx_id=int(r), p_rx_dbm=float(v)) for r, v in zip(batch.rx_ids, dbm)
    )


def save_sidecar(materials: Sequence[MaterialModel], material_of: dict[int, int], path) -> None:
    """Ground-truth sidecar: per-material curve parameters + surface map."""
    data = {
        "version": 1,
        "materials": [
            {
                "material_id": m.material_id,
                "name": m.name,
                "attenuation_db_at_normal": m.attenuation_db_at_normal,
                "attenuation_db_slope": m.attenuation_db_slope,
                "phase_rad": m.phase_rad,
            }
            for m in materials
        ],
        "surface_materials": {str(k): v for k, v in sorted(material_of.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def load_sidecar(path) -> tuple[tuple[MaterialModel, ...], dict[int, int]]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("version") != 1:
        raise ValueError(f"{path}: unsupported sidecar version {data.get('version')!r}")
    materials = tuple(
        MaterialModel(
            material_id=m["material_id"],
            name=m["name"],
            attenuation_db_at_normal=m["attenuation_db_at_normal"],
            attenuation_db_slope=m["attenuation_db_slope"],
            phase_rad=m["phase_rad"],
        )
        for m in data["materials"]
    )
    material_of = {int(k): int(v) for k, v in data["surface_materials"].items()}
    return materials, material_of
