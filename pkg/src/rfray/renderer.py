"""Differentiable phasor renderer: coefficients -> ray -> channel -> power.

Ragged path sets are rectangularized into a PaddedBatch over
(rx, tx, ray, bounce). Padding slots are numerically inert by
construction: virtual bounce slots multiply the bounce product by
exactly 1.0 and add exactly 0.0 phase, and virtual rays enter the
channel sum as exactly 0, so padded and unpadded renders agree bit for
bit and padding slots receive exactly zero gradient. Real bounce slots
precede virtual ones along the bounce axis, and real rays precede
virtual rays, which keeps reduction order independent of the pad sizes.

All renderer math is float64/complex128 regardless of the network
parameter dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .reflectance import Coefficient
from .scene import TxNode
from .tracer import PathSet

VIRTUAL_ANGLE = np.pi / 2  # sentinel; never evaluated by the network
DBM_FLOOR = -300.0
SENTINEL_DBM = -np.inf

_LN10 = float(np.log(10.0))


class RenderError(RuntimeError):
    pass


@dataclass
class PaddedBatch:
    """Dense (n_rx, n_tx, r_max, k_max) view of a PathSet.

    real_index holds the flat C-order indices of the non-padding bounce
    slots; real_angles/real_surface_ids are the matching network inputs,
    in the same order, so net outputs scatter straight back in.
    """

    rx_ids: np.ndarray
    tx_ids: np.ndarray
    tx_powers: np.ndarray
    wavelength: float
    angles: np.ndarray          # (N, T, R, K), sentinel at padding
    surface_ids: np.ndarray     # (N, T, R, K), -1 at padding
    lengths: np.ndarray         # (N, T, R), 1.0 placeholder for virtual rays
    virtual_point: np.ndarray   # (N, T, R, K) bool
    virtual_ray: np.ndarray     # (N, T, R) bool
    real_index: np.ndarray = field(init=False)
    real_angles: np.ndarray = field(init=False)
    real_surface_ids: np.ndarray = field(init=False)

    def __post_init__(self):
        real = ~self.virtual_point
        self.real_index = np.nonzero(real.ravel())[0]
        self.real_angles = self.angles.ravel()[self.real_index]
        self.real_surface_ids = self.surface_ids.ravel()[self.real_index]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.angles.shape

    @property
    def n_real(self) -> int:
        return len(self.real_index)

    def subset(self, rx_rows: Sequence[int]) -> "PaddedBatch":
        rows = np.asarray(rx_rows, dtype=int)
        return PaddedBatch(
            rx_ids=self.rx_ids[rows],
            tx_ids=self.tx_ids,
            tx_powers=self.tx_powers,
            wavelength=self.wavelength,
            angles=self.angles[rows],
            surface_ids=self.surface_ids[rows],
            lengths=self.lengths[rows],
            virtual_point=self.virtual_point[rows],
            virtual_ray=self.virtual_ray[rows],
        )


def pad(
    pathset: PathSet,
    tx_nodes: Sequence[TxNode],
    wavelength: float,
    r_max: Optional[int] = None,
    k_max: Optional[int] = None,
) -> PaddedBatch:
    """Rectangularize a PathSet; pad sizes default to the observed maxima."""
    tx_ids = list(pathset.tx_ids)
    rx_ids = list(pathset.rx_ids)
    by_id = {tx.id: tx for tx in tx_nodes}
    missing = [t for t in tx_ids if t not in by_id]
    if missing:
        raise ValueError(f"pathset references unknown tx ids {missing}")
    powers = np.array([by_id[t].power_watts for t in tx_ids], dtype=float)

    data_r = max((len(pathset.get(t, r)) for t in tx_ids for r in rx_ids), default=0)
    data_k = max(
        (rec.n_bounces for t in tx_ids for r in rx_ids for rec in pathset.get(t, r)),
        default=0,
    )
    r_max = data_r if r_max is None else r_max
    k_max = data_k if k_max is None else k_max
    if r_max < data_r or k_max < data_k:
        raise ValueError(f"pad sizes ({r_max}, {k_max}) below data maxima ({data_r}, {data_k})")

    n, t = len(rx_ids), len(tx_ids)
    angles = np.full((n, t, r_max, k_max), VIRTUAL_ANGLE, dtype=float)
    sids = np.full((n, t, r_max, k_max), -1, dtype=int)
    lengths = np.ones((n, t, r_max), dtype=float)
    vpoint = np.ones((n, t, r_max, k_max), dtype=bool)
    vray = np.ones((n, t, r_max), dtype=bool)

    for ti, tx_id in enumerate(tx_ids):
        for ri, rx_id in enumerate(rx_ids):
            for rank, rec in enumerate(pathset.get(tx_id, rx_id)):
                vray[ri, ti, rank] = False
                lengths[ri, ti, rank] = rec.length_m
                for b, p in enumerate(rec.points):
                    angles[ri, ti, rank, b] = p.incident_angle_rad
                    sids[ri, ti, rank, b] = p.surface_id
                    vpoint[ri, ti, rank, b] = False

    return PaddedBatch(
        rx_ids=np.asarray(rx_ids, dtype=int),
        tx_ids=np.asarray(tx_ids, dtype=int),
        tx_powers=powers,
        wavelength=float(wavelength),
        angles=angles,
        surface_ids=sids,
        lengths=lengths,
        virtual_point=vpoint,
        virtual_ray=vray,
    )


def wrap_phase(phase) -> np.ndarray | float:
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(phase, dtype=float), 2.0 * np.pi)


def friis_factor(d: float, wavelength: float) -> complex:
    """Free-space complex factor: amplitude wl/(4 pi d), phase 2 pi d / wl."""
    if d <= 0:
        raise ValueError(f"path length must be > 0, got {d}")
    if wavelength <= 0:
        raise ValueError(f"wavelength must be > 0, got {wavelength}")
    amp = wavelength / (4.0 * np.pi * d)
    ph = float(wrap_phase(2.0 * np.pi * d / wavelength))
    return complex(amp * np.cos(ph), amp * np.sin(ph))


def ray_attenuation(coeffs: Sequence[Coefficient]) -> complex:
    """Product of per-bounce coefficients; 1+0j for line of sight."""
    out = complex(1.0, 0.0)
    for c in coeffs:
        out *= c.delta
    return out


def channel(lengths: Sequence[float], attenuations: Sequence[complex], wavelength: float) -> complex:
    """Per-pair channel: sum of Friis factor times bounce product over rays."""
    if len(lengths) != len(attenuations):
        raise ValueError("lengths and attenuations must align")
    out = complex(0.0, 0.0)
    for d, a in zip(lengths, attenuations):
        out += friis_factor(d, wavelength) * a
    return out


@dataclass
class RenderResult:
    p_dbm: np.ndarray            # (N,), -inf sentinel where no signal
    p_watts: np.ndarray          # (N,)
    channels: np.ndarray         # (N, T) complex128
    signal: np.ndarray           # (N,) complex128
    sentinel: np.ndarray         # (N,) bool
    _cache: Optional[dict] = field(default=None, repr=False)


def _seq_reduce(arr: np.ndarray, axis_len: int, init: np.ndarray, op) -> np.ndarray:
    """Left-to-right reduction along the last axis of arr."""
    if axis_len == 0:
        return init
    out = arr[..., 0].astype(init.dtype, copy=True)
    for i in range(1, axis_len):
        out = op(out, arr[..., i])
    return out


def _scatter_real(batch: PaddedBatch, amp_real: np.ndarray, phase_real: np.ndarray):
    if amp_real.shape != (batch.n_real,) or phase_real.shape != (batch.n_real,):
        raise ValueError(
            f"coefficient arrays must have shape ({batch.n_real},), got "
            f"{amp_real.shape} and {phase_real.shape}"
        )
    amp4 = np.ones(batch.shape, dtype=float)
    phase4 = np.zeros(batch.shape, dtype=float)
    amp4.ravel()[batch.real_index] = amp_real
    phase4.ravel()[batch.real_index] = phase_real
    return amp4, phase4


def receive_power(batch: PaddedBatch, amp_real: np.ndarray, phase_real: np.ndarray) -> RenderResult:
    """Forward render: per-RX receive power (dBm) plus per-pair channels.

    amp_real/phase_real are the network outputs for the real bounce
    slots, aligned with batch.real_angles. Padding coefficients are
    injected here as the exact multiplicative identity.
    """
    amp_real = np.asarray(amp_real, dtype=float)
    phase_real = np.asarray(phase_real, dtype=float)
    amp4, phase4 = _scatter_real(batch, amp_real, phase_real)
    n, t, r, k = batch.shape

    # Reductions over padded axes run strictly left to right so results
    # are independent of the pad sizes (numpy's pairwise reduce is not).
    ray_amp = _seq_reduce(amp4, k, np.ones((n, t, r)), np.multiply)
    ray_phase = _seq_reduce(phase4, k, np.zeros((n, t, r)), np.add)

    ray_live = np.where(batch.virtual_ray, 0.0, 1.0)
    friis_amp = batch.wavelength / (4.0 * np.pi * batch.lengths)
    friis_phase = 2.0 * np.pi * batch.lengths / batch.wavelength

    total_phase = friis_phase + ray_phase
    base = (friis_amp * ray_live) * np.exp(1j * total_phase)  # Friis phasor, masked
    h_terms = base * ray_amp
    channels = _seq_reduce(h_terms, r, np.zeros((n, t), dtype=complex), np.add)

    sqrt_p = np.sqrt(batch.tx_powers)
    signal = _seq_reduce(sqrt_p[None, :] * channels, t, np.zeros(n, dtype=complex), np.add)
    p_watts = signal.real**2 + signal.imag**2

    with np.errstate(divide="ignore"):
        p_dbm = 10.0 * np.log10(p_watts * 1000.0)
    sentinel = ~np.isfinite(p_dbm) | (p_dbm < DBM_FLOOR)
    p_dbm = np.where(sentinel, SENTINEL_DBM, p_dbm)

    cache = {
        "amp4": amp4,
        "base": base,
        "signal": signal,
        "p_watts": p_watts,
        "sentinel": sentinel,
        "sqrt_p": sqrt_p,
        "ray_amp": ray_amp,
    }
    return RenderResult(
        p_dbm=p_dbm,
        p_watts=p_watts,
        channels=channels,
        signal=signal,
        sentinel=sentinel,
        _cache=cache,
    )


def receive_power_backward(
    batch: PaddedBatch,
    result: RenderResult,
    d_p_dbm: np.ndarray,
    full: bool = False,
):
    """Exact gradients of the dBm outputs w.r.t. the real-slot coefficients.

    Returns (d_amp_real, d_phase_real) aligned with batch.real_angles;
    with full=True returns the dense (N, T, R, K) gradient arrays
    instead, where padding slots are exactly zero.
    """
    if result._cache is None:
        raise RenderError("receive_power_backward called without a cached forward pass")
    c = result._cache
    d_p_dbm = np.asarray(d_p_dbm, dtype=float)
    if d_p_dbm.shape != result.p_dbm.shape:
        raise ValueError("upstream gradient shape mismatch")

    live = ~c["sentinel"]
    d_p = np.zeros_like(result.p_watts)
    # d dBm / d P = 10 / (ln 10 * P)
    d_p[live] = d_p_dbm[live] * (10.0 / _LN10) / c["p_watts"][live]

    # P = |S|^2, S = sum_t sqrt(P_t) sum_r base * ray_amp
    cs = np.conj(c["signal"])  # (N,)
    u = c["sqrt_p"][None, :, None] * c["base"]  # (N, T, R) = dS/d(ray_amp)
    zs = cs[:, None, None] * u
    d_ray_amp = 2.0 * d_p[:, None, None] * zs.real
    d_ray_phase = -2.0 * d_p[:, None, None] * (zs * c["ray_amp"]).imag

    amp4 = c["amp4"]
    cp = np.cumprod(amp4, axis=3)
    prefix = np.ones_like(amp4)
    prefix[..., 1:] = cp[..., :-1]
    rcp = np.cumprod(amp4[..., ::-1], axis=3)[..., ::-1]
    suffix = np.ones_like(amp4)
    suffix[..., :-1] = rcp[..., 1:]

    real = ~batch.virtual_point
    d_amp4 = np.where(real, d_ray_amp[..., None] * (prefix * suffix), 0.0)
    d_phase4 = np.where(real, np.broadcast_to(d_ray_phase[..., None], amp4.shape), 0.0)

    if full:
        return d_amp4, d_phase4
    return d_amp4.ravel()[batch.real_index], d_phase4.ravel()[batch.real_index]
