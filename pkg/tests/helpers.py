"""Shared builders: tiny scenes, random renderer instances, naive oracles.

The oracle renderer here is intentionally independent of the package's
batched implementation: plain Python loops over path records with cmath
arithmetic.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

from rfray.scene import Scene, Surface, TxNode, RxNode
from rfray.tracer import PathRecord, PathSet, ReflectionPoint


def make_wall(sid: int, material_id=None) -> Surface:
    return Surface(
        id=sid,
        vertices=np.array([[0.0, 0.0, -1.0], [2.0, 0.0, -1.0], [2.0, 0.0, 1.0], [0.0, 0.0, 1.0]]),
        material_id=material_id,
    )


def build_pathset(records: list[PathRecord], max_paths=7, max_reflections=3) -> PathSet:
    paths: dict[tuple[int, int], list[PathRecord]] = {}
    for rec in records:
        paths.setdefault((rec.tx_id, rec.rx_id), []).append(rec)
    return PathSet(
        paths={k: tuple(v) for k, v in paths.items()},
        tx_ids=tuple(sorted({r.tx_id for r in records})),
        rx_ids=tuple(sorted({r.rx_id for r in records})),
        max_paths_per_pair=max_paths,
        max_reflections=max_reflections,
    )


def random_instance(rng: np.random.Generator, n_rx=None, n_tx=None, n_surfaces=6):
    """Random ragged multipath instance: records, tx nodes, wavelength.

    Positions on the records are fabricated; the renderer only consumes
    surface ids, angles, and lengths.
    """
    n_rx = n_rx or int(rng.integers(1, 4))
    n_tx = n_tx or int(rng.integers(1, 4))
    wavelength = float(rng.uniform(0.05, 0.3))
    tx_nodes = [
        TxNode(t, rng.uniform(-50, 50, size=3), float(rng.uniform(0.5, 20.0)))
        for t in range(n_tx)
    ]
    records = []
    for t in range(n_tx):
        for r in range(n_rx):
            for rank in range(int(rng.integers(0, 8))):
                n_b = int(rng.integers(0, 4))
                points = tuple(
                    ReflectionPoint(
                        position=rng.uniform(-50, 50, size=3),
                        surface_id=int(rng.integers(0, n_surfaces)),
                        incident_angle_rad=float(rng.uniform(0.0, np.pi / 2 * 0.999)),
                    )
                    for _ in range(n_b)
                )
                records.append(
                    PathRecord(
                        tx_id=t,
                        rx_id=r,
                        points=points,
                        length_m=float(rng.uniform(1.0, 500.0)),
                    )
                )
    if not records:
        records.append(
            PathRecord(tx_id=0, rx_id=0, points=(), length_m=float(rng.uniform(1.0, 500.0)))
        )
    return build_pathset(records), tx_nodes, wavelength


def random_coefficients(rng: np.random.Generator, pathset: PathSet):
    """Per-real-bounce (amp, phase) keyed the way pad() flattens them."""
    coeffs = {}
    for key in sorted(pathset.paths):
        for rank, rec in enumerate(pathset.paths[key]):
            for b in range(rec.n_bounces):
                coeffs[(key[0], key[1], rank, b)] = (
                    float(rng.uniform(0.05, 1.0)),
                    float(rng.uniform(-np.pi, np.pi)),
                )
    return coeffs


def oracle_receive_power(pathset: PathSet, tx_nodes, wavelength, coeffs):
    """Naive per-RX complex summation; returns (dbm, watts, channels) dicts."""
    power_by_id = {tx.id: tx.power_watts for tx in tx_nodes}
    dbm, watts, channels = {}, {}, {}
    for rx_id in pathset.rx_ids:
        s = complex(0.0, 0.0)
        channels[rx_id] = {}
        for tx_id in pathset.tx_ids:
            h = complex(0.0, 0.0)
            for rank, rec in enumerate(pathset.get(tx_id, rx_id)):
                amp = wavelength / (4.0 * math.pi * rec.length_m)
                phase = 2.0 * math.pi * rec.length_m / wavelength
                term = amp * cmath.exp(1j * phase)
                for b in range(rec.n_bounces):
                    a, ph = coeffs[(tx_id, rx_id, rank, b)]
                    term *= a * cmath.exp(1j * ph)
                h += term
            channels[rx_id][tx_id] = h
            s += math.sqrt(power_by_id[tx_id]) * h
        p = abs(s) ** 2
        watts[rx_id] = p
        dbm[rx_id] = 10.0 * math.log10(p * 1000.0) if p > 0.0 else -math.inf
    return dbm, watts, channels


def coeff_arrays_for_batch(batch, coeffs):
    """Align a coeffs dict with batch.real_index ordering."""
    n, t, r, k = batch.shape
    amp = np.empty(batch.n_real)
    phase = np.empty(batch.n_real)
    for i, flat in enumerate(batch.real_index):
        ri, ti, rank, b = np.unravel_index(flat, (n, t, r, k))
        key = (int(batch.tx_ids[ti]), int(batch.rx_ids[ri]), int(rank), int(b))
        amp[i], phase[i] = coeffs[key]
    return amp, phase
