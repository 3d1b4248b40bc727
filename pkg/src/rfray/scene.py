"""Scene geometry: planar convex surfaces, radio nodes, and the scene file.

Scenes are immutable after construction and safe to share across
workers. Surface material labels are carried for synthetic ground truth
only; nothing on the prediction path may read them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    ConvexPolygon,
    coplanarity_residual,
    is_convex,
    polygon_area,
    polygon_normal,
)

SCENE_FORMAT_VERSION = 1

COPLANAR_TOL = 1e-9
NODE_CLEARANCE = 1e-6


class SceneFormatError(ValueError):
    """Raised on scene files that fail to parse or violate invariants."""


@dataclass(frozen=True)
class Surface:
    """One planar convex polygon with a dense integer id.

    The unit normal is derived from the first two edges; vertex winding
    determines its sign, which downstream code never relies on.
    """

    id: int
    vertices: np.ndarray  # (m, 3) float64, ordered
    material_id: Optional[int] = None
    normal: np.ndarray = field(init=False, repr=False)
    polygon: ConvexPolygon = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 3 or len(verts) < 3:
            raise SceneFormatError(f"surface {self.id}: vertices must be an (m>=3, 3) array")
        object.__setattr__(self, "vertices", verts)
        if coplanarity_residual(verts) > COPLANAR_TOL:
            raise SceneFormatError(f"surface {self.id}: vertices are not coplanar")
        try:
            if not is_convex(verts):
                raise SceneFormatError(f"surface {self.id}: polygon is not convex or is degenerate")
            if polygon_area(verts) <= 0.0:
                raise SceneFormatError(f"surface {self.id}: polygon has zero area")
            object.__setattr__(self, "normal", polygon_normal(verts))
            object.__setattr__(self, "polygon", ConvexPolygon(verts))
        except SceneFormatError:
            raise
        except ValueError as e:
            raise SceneFormatError(f"surface {self.id}: {e}") from None


@dataclass(frozen=True)
class TxNode:
    id: int
    position: np.ndarray
    power_watts: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not self.power_watts > 0:
            raise SceneFormatError(f"tx_node {self.id}: power_watts must be > 0")


@dataclass(frozen=True)
class RxNode:
    id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class Scene:
    surfaces: tuple[Surface, ...]
    tx_nodes: tuple[TxNode, ...]
    rx_nodes: tuple[RxNode, ...]
    carrier_wavelength_m: float

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(sorted(self.surfaces, key=lambda s: s.id)))
        object.__setattr__(self, "tx_nodes", tuple(sorted(self.tx_nodes, key=lambda n: n.id)))
        object.__setattr__(self, "rx_nodes", tuple(sorted(self.rx_nodes, key=lambda n: n.id)))
        validate_scene(self)

    @property
    def surface_count(self) -> int:
        return len(self.surfaces)


def validate_scene(scene: Scene) -> None:
    """Check id density, wavelength, and node clearance from surfaces."""
    ids = [s.id for s in scene.surfaces]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise SceneFormatError(f"duplicate surface id(s): {dup}")
    if ids != list(range(len(ids))):
        raise SceneFormatError(f"surface ids must be exactly 0..{len(ids) - 1}, got {ids}")
    for kind, nodes in (("tx_node", scene.tx_nodes), ("rx_node", scene.rx_nodes)):
        seen = set()
        for n in nodes:
            if n.id in seen:
                raise SceneFormatError(f"duplicate {kind} id {n.id}")
            seen.add(n.id)
    if not scene.carrier_wavelength_m > 0:
        raise SceneFormatError("carrier_wavelength_m must be > 0")
    for n in scene.rx_nodes:
        for s in scene.surfaces:
            if s.polygon.touches(n.position, tol=NODE_CLEARANCE):
                raise SceneFormatError(f"rx_node {n.id} lies on surface {s.id}")


def one_hot(s: int, surface_count: int) -> np.ndarray:
    """Encode a surface id as a length-S indicator vector."""
    if not 0 <= s < surface_count:
        raise ValueError(f"surface id {s} out of range [0, {surface_count})")
    v = np.zeros(surface_count)
    v[s] = 1.0
    return v


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise SceneFormatError(f"{ctx}: missing field '{key}'")
    return obj[key]


def _point(value, ctx: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise SceneFormatError(f"{ctx}: expected [x, y, z], got {value!r}")
    return arr


def scene_to_dict(scene: Scene) -> dict:
    """Plain-dict form of a scene with deterministic field order."""
    return {
        "version": SCENE_FORMAT_VERSION,
        "carrier_wavelength_m": scene.carrier_wavelength_m,
        "surfaces": [
            {
                "id": s.id,
                "material_id": s.material_id,
                "vertices": [[float(x) for x in v] for v in s.vertices],
            }
            for s in scene.surfaces
        ],
        "tx_nodes": [
            {
                "id": n.id,
                "position": [float(x) for x in n.position],
                "power_watts": n.power_watts,
            }
            for n in scene.tx_nodes
        ],
        "rx_nodes": [
            {"id": n.id, "position": [float(x) for x in n.position]} for n in scene.rx_nodes
        ],
    }


def scene_from_dict(data: dict, ctx: str = "scene") -> Scene:
    if not isinstance(data, dict):
        raise SceneFormatError(f"{ctx}: top level must be an object")
    version = _require(data, "version", ctx)
    if version != SCENE_FORMAT_VERSION:
        raise SceneFormatError(f"{ctx}: unsupported version {version!r}")
    wavelength = _require(data, "carrier_wavelength_m", ctx)
    surfaces = []
    for i, raw in enumerate(_require(data, "surfaces", ctx)):
        sctx = f"{ctx}.surfaces[{i}]"
        verts = [_point(v, f"{sctx}.vertices[{j}]") for j, v in enumerate(_require(raw, "vertices", sctx))]
        surfaces.append(
            Surface(
                id=int(_require(raw, "id", sctx)),
                vertices=np.asarray(verts),
                material_id=raw.get("material_id"),
            )
        )
    tx_nodes = []
    for i, raw in enumerate(_require(data, "tx_nodes", ctx)):
        nctx = f"{ctx}.tx_nodes[{i}]"
        tx_nodes.append(
            TxNode(
                id=int(_require(raw, "id", nctx)),
                position=_point(_require(raw, "position", nctx), f"{nctx}.position"),
                power_watts=float(_require(raw, "power_watts", nctx)),
            )
        )
    rx_nodes = []
    for i, raw in enumerate(_require(data, "rx_nodes", ctx)):
        nctx = f"{ctx}.rx_nodes[{i}]"
        rx_nodes.append(
            RxNode(
                id=int(_require(raw, "id", nctx)),
                position=_point(_require(raw, "position", nctx), f"{nctx}.position"),
            )
        )
    return Scene(
        surfaces=tuple(surfaces),
        tx_nodes=tuple(tx_nodes),
        rx_nodes=tuple(rx_nodes),
        carrier_wavelength_m=float(wavelength),
    )


def load_scene(path) -> Scene:
    """Load and validate a scene file, reporting parse context on failure."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise SceneFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return scene_from_dict(data, ctx=str(path))


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
