"""Specular path enumeration by the exact image method.

For every ordered surface sequence up to the reflection cap, the
transmitter is mirrored across the sequence planes; backtracking the
straight line from the final image to a receiver yields the unique
specular path touching those surfaces, if one exists. Each candidate is
validated for polygon containment and segment obstruction, so every
returned path obeys the reflection law exactly (up to floating point).

Paths are ranked strongest-first under unit reflection coefficients,
i.e. by 1/length, with ties broken by bounce count then first surface
id, and truncated to the per-pair cap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .geometry import HIT_TOL, mirror_points, segment_hits_polygon
from .scene import Scene, TxNode, RxNode

DEFAULT_MAX_REFLECTIONS = 3
DEFAULT_MAX_PATHS = 7

_DENOM_TOL = 1e-15


class TraceError(ValueError):
    """Raised for degenerate tracing geometry."""


@dataclass(frozen=True)
class ReflectionPoint:
    position: np.ndarray
    surface_id: int
    incident_angle_rad: float
    is_virtual: bool = False

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class PathRecord:
    """One specular path; empty points means line of sight."""

    tx_id: int
    rx_id: int
    points: tuple[ReflectionPoint, ...]
    length_m: float
    is_virtual_ray: bool = False

    @property
    def n_bounces(self) -> int:
        return len(self.points)

    def surface_ids(self) -> tuple[int, ...]:
        return tuple(p.surface_id for p in self.points)


@dataclass(frozen=True)
class PathSet:
    """All traced paths keyed by (tx_id, rx_id), strongest-first."""

    paths: dict[tuple[int, int], tuple[PathRecord, ...]]
    tx_ids: tuple[int, ...]
    rx_ids: tuple[int, ...]
    max_paths_per_pair: int
    max_reflections: int

    def pairs(self) -> Iterable[tuple[int, int]]:
        for tx_id in self.tx_ids:
            for rx_id in self.rx_ids:
                yield (tx_id, rx_id)

    def get(self, tx_id: int, rx_id: int) -> tuple[PathRecord, ...]:
        return self.paths.get((tx_id, rx_id), ())


def incident_angle(direction: np.ndarray, normal: np.ndarray) -> float:
    """Angle between a ray direction and the surface normal, in [0, pi/2]."""
    direction = np.asarray(direction, dtype=float)
    normal = np.asarray(normal, dtype=float)
    for name, v in (("direction", direction), ("normal", normal)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"{name} must be a unit vector")
    return float(np.arccos(np.clip(abs(float(direction @ normal)), 0.0, 1.0)))


def _check_node_clear(scene: Scene, kind: str, node) -> None:
    for s in scene.surfaces:
        if s.polygon.touches(node.position, tol=HIT_TOL):
            raise TraceError(f"{kind} {node.id} lies on surface {s.id}")


def _segments_clear(scene: Scene, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """True where segment a[i] -> b[i] crosses no surface interior."""
    clear = np.ones(len(a), dtype=bool)
    for s in scene.surfaces:
        idx = np.nonzero(clear)[0]
        if idx.size == 0:
            break
        hits = segment_hits_polygon(a[idx], b[idx], s.polygon)
        clear[idx[hits]] = False
    return clear


def _rank_key(rec: PathRecord):
    first = rec.points[0].surface_id if rec.points else -1
    return (rec.length_m, rec.n_bounces, first)


def _trace_tx_to_rxs(
    scene: Scene,
    tx: TxNode,
    rx_nodes: list[RxNode],
    max_reflections: int,
    max_paths: int,
) -> dict[int, list[PathRecord]]:
    """Shared tracing core, vectorized across receivers for one transmitter."""
    _check_node_clear(scene, "tx_node", tx)
    for rx in rx_nodes:
        _check_node_clear(scene, "rx_node", rx)

    rx_pos = np.asarray([rx.position for rx in rx_nodes], dtype=float)
    n_rx = len(rx_nodes)
    found: list[list[PathRecord]] = [[] for _ in range(n_rx)]

    # Line of sight.
    tx_rep = np.broadcast_to(tx.position, rx_pos.shape)
    los_clear = _segments_clear(scene, tx_rep.copy(), rx_pos)
    los_len = np.linalg.norm(rx_pos - tx.position, axis=1)
    for i in np.nonzero(los_clear & (los_len >= HIT_TOL))[0]:
        found[i].append(
            PathRecord(tx_id=tx.id, rx_id=rx_nodes[i].id, points=(), length_m=float(los_len[i]))
        )

    polys = [s.polygon for s in scene.surfaces]

    def backtrack(seq: tuple[int, ...], images: list[np.ndarray]) -> None:
        k = len(seq)
        active = np.arange(n_rx)
        q = rx_pos.copy()
        pts = [None] * k  # filled back to front, compressed to active rows
        for j in range(k - 1, -1, -1):
            poly = polys[seq[j]]
            img = images[j]
            v = q - img
            denom = v @ poly.normal
            ok = np.abs(denom) > _DENOM_TOL
            t = np.zeros(len(q))
            t[ok] = (poly.offset - img @ poly.normal) / denom[ok]
            seg_len = np.linalg.norm(v, axis=1)
            with np.errstate(invalid="ignore"):
                ok &= (t * seg_len >= HIT_TOL) & ((1.0 - t) * seg_len >= HIT_TOL)
            p = img + t[:, None] * v
            ok &= poly.contains(p, margin=-HIT_TOL)
            if not ok.any():
                return
            keep = np.nonzero(ok)[0]
            active = active[keep]
            q = p[keep]
            pts[j] = q
            for jj in range(j + 1, k):
                pts[jj] = pts[jj][keep]
        # Obstruction along the full vertex chain tx -> p_1 .. p_k -> rx.
        chain = [np.broadcast_to(tx.position, q.shape).copy()] + pts + [rx_pos[active]]
        alive = np.ones(len(active), dtype=bool)
        for a, b in zip(chain[:-1], chain[1:]):
            alive &= np.linalg.norm(b - a, axis=1) >= HIT_TOL
        for a, b in zip(chain[:-1], chain[1:]):
            idx = np.nonzero(alive)[0]
            if idx.size == 0:
                return
            alive[idx] &= _segments_clear(scene, a[idx], b[idx])
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            return
        lengths = np.zeros(len(idx))
        for a, b in zip(chain[:-1], chain[1:]):
            lengths += np.linalg.norm(b[idx] - a[idx], axis=1)
        for pos_i, row in enumerate(idx):
            rx_row = int(active[row])
            points = []
            prev = tx.position
            for j in range(k):
                pos = pts[j][row]
                d_in = pos - prev
                d_in = d_in / np.linalg.norm(d_in)
                ang = float(np.arccos(np.clip(abs(d_in @ polys[seq[j]].normal), 0.0, 1.0)))
                points.append(
                    ReflectionPoint(position=pos, surface_id=seq[j], incident_angle_rad=ang)
                )
                prev = pos
            found[rx_row].append(
                PathRecord(
                    tx_id=tx.id,
                    rx_id=rx_nodes[rx_row].id,
                    points=tuple(points),
                    length_m=float(lengths[pos_i]),
                )
            )

    def dfs(seq: tuple[int, ...], images: list[np.ndarray]) -> None:
        for s in scene.surfaces:
            if seq and s.id == seq[-1]:
                continue
            base = images[-1] if images else tx.position
            if abs(float(base @ s.polygon.normal) - s.polygon.offset) < 1e-9:
                continue  # mirror source on the plane: degenerate image
            img = mirror_points(base[None, :], s.polygon.normal, s.polygon.offset)[0]
            new_seq = seq + (s.id,)
            backtrack(new_seq, images + [img])
            if len(new_seq) < max_reflections:
                dfs(new_seq, images + [img])

    if max_reflections > 0:
        dfs((), [])

    return {
        rx_nodes[i].id: sorted(found[i], key=_rank_key)[:max_paths] for i in range(n_rx)
    }


def trace_pair(
    scene: Scene,
    tx: TxNode,
    rx: RxNode,
    max_reflections: int = DEFAULT_MAX_REFLECTIONS,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> list[PathRecord]:
    """All specular paths between one TX and one RX, strongest-first."""
    return _trace_tx_to_rxs(scene, tx, [rx], max_reflections, max_paths)[rx.id]


def trace_all(
    scene: Scene,
    max_reflections: int = DEFAULT_MAX_REFLECTIONS,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> PathSet:
    """Trace every (tx, rx) pair in deterministic (tx id, rx id) order."""
    paths: dict[tuple[int, int], tuple[PathRecord, ...]] = {}
    for tx in scene.tx_nodes:
        try:
            per_rx = _trace_tx_to_rxs(scene, tx, list(scene.rx_nodes), max_reflections, max_paths)
        except TraceError as e:
            raise TraceError(f"tracing tx_node {tx.id}: {e}") from e
        for rx in scene.rx_nodes:
            paths[(tx.id, rx.id)] = tuple(per_rx[rx.id])
    return PathSet(
        paths=paths,
        tx_ids=tuple(tx.id for tx in scene.tx_nodes),
        rx_ids=tuple(rx.id for rx in scene.rx_nodes),
        max_paths_per_pair=max_paths,
        max_reflections=max_reflections,
    )


def save_pathset(pathset: PathSet, path) -> None:
    """Write the normative per-path CSV (5 columns per bounce slot)."""
    k_max = max(
        (rec.n_bounces for recs in pathset.paths.values() for rec in recs), default=0
    )
    header = ["tx_id", "rx_id", "path_rank", "n_bounces", "length_m"]
    for b in range(1, k_max + 1):
        header += [f"surface_id_{b}", f"incident_angle_rad_{b}", f"x_{b}", f"y_{b}", f"z_{b}"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for tx_id, rx_id in pathset.pairs():
            for rank, rec in enumerate(pathset.get(tx_id, rx_id)):
                row = [tx_id, rx_id, rank, rec.n_bounces, repr(rec.length_m)]
                for p in rec.points:
                    row += [
                        p.surface_id,
                        repr(p.incident_angle_rad),
                        repr(float(p.position[0])),
                        repr(float(p.position[1])),
                        repr(float(p.position[2])),
                    ]
                row += [""] * (5 * (k_max - rec.n_bounces))
                w.writerow(row)


def load_pathset(
    path,
    tx_ids: Optional[Sequence[int]] = None,
    rx_ids: Optional[Sequence[int]] = None,
    max_paths_per_pair: Optional[int] = None,
    max_reflections: Optional[int] = None,
) -> PathSet:
    """Read a pathset CSV; caps default to the maxima present in the file.

    Pairs with no paths write no rows, so callers that care about fully
    shadowed receivers should pass the scene's node ids explicitly.
    """
    paths: dict[tuple[int, int], list[PathRecord]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty pathset file") from None
        if header[:5] != ["tx_id", "rx_id", "path_rank", "n_bounces", "length_m"]:
            raise ValueError(f"{path}: unexpected header {header[:5]}")
        for lineno, row in enumerate(reader, start=2):
            try:
                tx_id, rx_id, rank, n_bounces = (int(row[i]) for i in range(4))
                length = float(row[4])
                points = []
                for b in range(n_bounces):
                    o = 5 + 5 * b
                    points.append(
                        ReflectionPoint(
                            position=np.array([float(row[o + 2]), float(row[o + 3]), float(row[o + 4])]),
                            surface_id=int(row[o]),
                            incident_angle_rad=float(row[o + 1]),
                        )
                    )
            except (ValueError, IndexError) as e:
                raise ValueError(f"{path}: line {lineno}: {e}") from None
            rec = PathRecord(tx_id=tx_id, rx_id=rx_id, points=tuple(points), length_m=length)
            paths.setdefault((tx_id, rx_id), []).append(rec)
    tx_ids = tuple(tx_ids) if tx_ids is not None else tuple(sorted({k[0] for k in paths}))
    rx_ids = tuple(rx_ids) if rx_ids is not None else tuple(sorted({k[1] for k in paths}))
    unknown = [k for k in paths if k[0] not in set(tx_ids) or k[1] not in set(rx_ids)]
    if unknown:
        raise ValueError(f"{path}: rows reference pairs outside the given grid: {unknown[:3]}")
    if max_paths_per_pair is None:
        max_paths_per_pair = max((len(v) for v in paths.values()), default=0)
    if max_reflections is None:
        max_reflections = max(
            (rec.n_bounces for recs in paths.values() for rec in recs), default=0
        )
    return PathSet(
        paths={k: tuple(v) for k, v in paths.items()},
        tx_ids=tx_ids,
        rx_ids=rx_ids,
        max_paths_per_pair=max_paths_per_pair,
        max_reflections=max_reflections,
    )
