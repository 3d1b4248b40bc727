"""Accuracy metrics: coefficient error, power error, SINR and per-channel gains.

Coefficient error compares magnitudes only (|10 log10 |est|/|truth||);
phase recovery is tracked separately since it matters for multipath
summation but is invisible to the magnitude metric. Angle sweeps bin
[0, 90] degrees uniformly; entries whose ground truth is zero are
excluded and counted rather than raised.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .reflectance import Coefficient, ReflectanceNet, forward_batch
from .renderer import pad, receive_power
from .scene import Scene
from .synth import MaterialModel, gt_amp_phase
from .tracer import PathSet
from .trainer import Dataset, TrainConfig, train

DEFAULT_NOISE_DBM = -94.0  # thermal floor + typical noise figure, 20 MHz
DEFAULT_N_BINS = 1000


def coefficient_error(est: Coefficient, truth: Coefficient) -> float:
    """|10 log10(|est| / |truth|)| in dB; nan when the truth is zero."""
    ge = abs(est.delta)
    gt = abs(truth.delta)
    if gt == 0.0:
        return float("nan")
    return abs(10.0 * np.log10(ge / gt))


def coefficient_error_db(est_amp: np.ndarray, true_amp: np.ndarray) -> np.ndarray:
    est_amp = np.asarray(est_amp, dtype=float)
    true_amp = np.asarray(true_amp, dtype=float)
    out = np.full(est_amp.shape, np.nan)
    ok = true_amp > 0.0
    out[ok] = np.abs(10.0 * np.log10(est_amp[ok] / true_amp[ok]))
    return out


def power_error(pred_dbm, true_dbm) -> np.ndarray:
    """|prediction - truth| in dB; nan where either side is sentinel."""
    pred_dbm = np.asarray(pred_dbm, dtype=float)
    true_dbm = np.asarray(true_dbm, dtype=float)
    out = np.abs(pred_dbm - true_dbm)
    out[~(np.isfinite(pred_dbm) & np.isfinite(true_dbm))] = np.nan
    return out


def percentile(values: np.ndarray, q: float) -> float:
    """Linear-interpolated percentile of finite entries."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan")
    return float(np.percentile(v, q))


@dataclass
class BinStat:
    lo_deg: float
    hi_deg: float
    count: int
    mean: float
    p90: float
    p95: float
    p99: float


@dataclass
class GroupStat:
    name: str
    count: int
    mean: float
    p90: float
    p95: float
    p99: float


@dataclass
class MetricReport:
    metric: str
    count: int
    excluded: int
    mean: float
    median: float
    p90: float
    p95: float
    p99: float
    bins: list[BinStat] = field(default_factory=list)
    materials: list[GroupStat] = field(default_factory=list)
    density_label: Optional[str] = None


def _summary(metric: str, errors: np.ndarray, excluded: int = 0, **kw) -> MetricReport:
    e = errors[np.isfinite(errors)]
    excluded += int(np.size(errors) - e.size)
    if e.size == 0:
        nan = float("nan")
        return MetricReport(metric, 0, excluded, nan, nan, nan, nan, nan, **kw)
    return MetricReport(
        metric=metric,
        count=int(e.size),
        excluded=excluded,
        mean=float(np.mean(e)),
        median=percentile(e, 50),
        p90=percentile(e, 90),
        p95=percentile(e, 95),
        p99=percentile(e, 99),
        **kw,
    )


PredictFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def net_predictor(net: ReflectanceNet) -> PredictFn:
    def predict(angles: np.ndarray, surface_ids: np.ndarray):
        return forward_batch(net, angles, surface_ids)

    return predict


def gt_predictor(materials: Sequence[MaterialModel], material_of: dict[int, int]) -> PredictFn:
    def predict(angles: np.ndarray, surface_ids: np.ndarray):
        return gt_amp_phase(materials, material_of, angles, surface_ids)

    return predict


@dataclass
class CoefficientSweep:
    report: MetricReport
    angles: np.ndarray        # all sampled angles (rad)
    surface_ids: np.ndarray
    errors_db: np.ndarray
    phase_errors_rad: np.ndarray


def training_angle_ranges(
    pathset: PathSet, rx_ids: Sequence[int]
) -> dict[int, tuple[float, float]]:
    """Per-surface [min, max] incident angle over rays of the given receivers."""
    rx = set(int(r) for r in rx_ids)
    ranges: dict[int, tuple[float, float]] = {}
    for (tx_id, rx_id), recs in pathset.paths.items():
        if rx_id not in rx:
            continue
        for rec in recs:
            for p in rec.points:
                lo, hi = ranges.get(p.surface_id, (np.inf, -np.inf))
                ranges[p.surface_id] = (
                    min(lo, p.incident_angle_rad),
                    max(hi, p.incident_angle_rad),
                )
    return ranges


def sweep_coefficients(
    predict: PredictFn,
    truth: PredictFn,
    surface_ids: Sequence[int],
    samples_per_surface: int = 256,
    seed: int = 0,
    n_bins: int = DEFAULT_N_BINS,
    angle_ranges: Optional[dict[int, tuple[float, float]]] = None,
    material_of: Optional[dict[int, int]] = None,
    material_names: Optional[dict[int, str]] = None,
) -> CoefficientSweep:
    """Random-angle coefficient comparison, binned over [0, 90] degrees.

    When angle_ranges is given, each surface is sampled only inside its
    range and surfaces absent from the dict are skipped entirely.
    """
    rng = np.random.default_rng([seed, 0x5E])
    all_angles, all_sids = [], []
    for sid in surface_ids:
        lo, hi = 0.0, np.pi / 2
        if angle_ranges is not None:
            if sid not in angle_ranges:
                continue
            lo, hi = angle_ranges[sid]
        theta = rng.uniform(lo, hi, size=samples_per_surface)
        all_angles.append(theta)
        all_sids.append(np.full(samples_per_surface, sid, dtype=int))
    if not all_angles:
        raise ValueError("no surfaces to sweep")
    angles = np.concatenate(all_angles)
    sids = np.concatenate(all_sids)

    est_amp, est_phase = predict(angles, sids)
    true_amp, true_phase = truth(angles, sids)
    errors = coefficient_error_db(np.asarray(est_amp, dtype=float), true_amp)
    dphi = np.asarray(est_phase, dtype=float) - true_phase
    phase_err = np.abs(np.arctan2(np.sin(dphi), np.cos(dphi)))

    edges = np.linspace(0.0, 90.0, n_bins + 1)
    deg = np.degrees(angles)
    which = np.clip(np.digitize(deg, edges) - 1, 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        sel = errors[which == b]
        sel = sel[np.isfinite(sel)]
        if sel.size == 0:
            continue
        bins.append(
            BinStat(
                lo_deg=float(edges[b]),
                hi_deg=float(edges[b + 1]),
                count=int(sel.size),
                mean=float(np.mean(sel)),
                p90=percentile(sel, 90),
                p95=percentile(sel, 95),
                p99=percentile(sel, 99),
            )
        )

    groups = []
    if material_of is not None:
        mat_arr = np.array([material_of[int(s)] for s in sids])
        for mid in sorted(set(mat_arr.tolist())):
            sel = errors[mat_arr == mid]
            sel = sel[np.isfinite(sel)]
            if sel.size == 0:
                continue
            name = material_names.get(mid, str(mid)) if material_names else str(mid)
            groups.append(
                GroupStat(
                    name=name,
                    count=int(sel.size),
                    mean=float(np.mean(sel)),
                    p90=percentile(sel, 90),
                    p95=percentile(sel, 95),
                    p99=percentile(sel, 99),
                )
            )

    report = _summary("coefficient_error_db", errors, bins=bins, materials=groups)
    return CoefficientSweep(
        report=report,
        angles=angles,
        surface_ids=sids,
        errors_db=errors,
        phase_errors_rad=phase_err,
    )


@dataclass
class SinrReport:
    serving_tx: np.ndarray            # (N,) index into tx order
    sinr_pred_db: np.ndarray
    sinr_true_db: np.ndarray
    sinr_error_db: np.ndarray         # nan where excluded
    interference_error_db: np.ndarray  # flat over non-serving (rx, tx) pairs
    excluded_rx: int
    excluded_pairs: int
    noise_dbm: float

    def summary(self) -> MetricReport:
        return _summary("sinr_error_db", self.sinr_error_db, excluded=0)


def sinr_and_interference(
    channels_pred: np.ndarray,
    channels_true: np.ndarray,
    tx_positions: np.ndarray,
    rx_positions: np.ndarray,
    tx_powers: np.ndarray,
    noise_dbm: float = DEFAULT_NOISE_DBM,
) -> SinrReport:
    """SINR per RX (serving TX = nearest) and per-pair channel-gain errors."""
    channels_pred = np.asarray(channels_pred)
    channels_true = np.asarray(channels_true)
    if channels_pred.shape != channels_true.shape:
        raise ValueError("channel arrays must have identical shape")
    n, t = channels_pred.shape
    dist = np.linalg.norm(
        rx_positions[:, None, :] - tx_positions[None, :, :], axis=2
    )
    serving = np.argmin(dist, axis=1)

    noise_w = 0.0 if noise_dbm == -np.inf else 10.0 ** (noise_dbm / 10.0) / 1000.0
    p_pred = tx_powers[None, :] * np.abs(channels_pred) ** 2
    p_true = tx_powers[None, :] * np.abs(channels_true) ** 2

    rows = np.arange(n)
    serve_mask = np.zeros((n, t), dtype=bool)
    serve_mask[rows, serving] = True

    def sinr_db(p):
        s = p[rows, serving]
        i = np.sum(np.where(serve_mask, 0.0, p), axis=1) + noise_w
        with np.errstate(divide="ignore", invalid="ignore"):
            return 10.0 * np.log10(s / i)

    sp, st = sinr_db(p_pred), sinr_db(p_true)
    err = np.abs(sp - st)
    bad = ~(np.isfinite(sp) & np.isfinite(st))
    err[bad] = np.nan

    gains_pred = np.abs(channels_pred) ** 2
    gains_true = np.abs(channels_true) ** 2
    interf = ~serve_mask
    gp = gains_pred[interf]
    gt = gains_true[interf]
    ok = (gp > 0) & (gt > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ierr = np.abs(10.0 * np.log10(gp) - 10.0 * np.log10(gt))
    ierr[~ok] = np.nan

    return SinrReport(
        serving_tx=serving,
        sinr_pred_db=sp,
        sinr_true_db=st,
        sinr_error_db=err,
        interference_error_db=ierr,
        excluded_rx=int(bad.sum()),
        excluded_pairs=int((~ok).sum()),
        noise_dbm=noise_dbm,
    )


@dataclass
class DensityRow:
    fraction: float
    n_train_rx: int
    samples_per_km2: float
    mean_power_error_db: float
    mean_coeff_error_db: float


def density_sweep(
    scene: Scene,
    pathset: PathSet,
    dataset: Dataset,
    materials: Sequence[MaterialModel],
    material_of: dict[int, int],
    config: TrainConfig,
    fractions: Sequence[float],
    area_km2: float,
    samples_per_surface: int = 256,
) -> list[DensityRow]:
    """Retrain from scratch per training-data fraction; fixed seeds.

    Fraction 1.0 reproduces the base training run exactly. Power error
    is evaluated on the untouched test split; coefficient error over
    each run's own trained angle ranges.
    """
    rows = []
    dbm = dataset.dbm_by_id()
    sub_rng_perm = np.random.default_rng([config.seed, 0x99]).permutation(
        len(dataset.train_ids)
    )
    for frac in fractions:
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"fraction {frac} outside (0, 1]")
        keep = max(1, int(round(frac * len(dataset.train_ids))))
        train_ids = tuple(
            sorted(dataset.train_ids[i] for i in sub_rng_perm[:keep])
        )
        sub_dataset = Dataset(
            measurements=tuple(
                m for m in dataset.measurements
                if m.rx_id in set(train_ids) | set(dataset.test_ids)
            ),
            train_ids=train_ids,
            test_ids=dataset.test_ids,
        )
        result = train(scene, pathset, sub_dataset, config)

        batch = pad(pathset, scene.tx_nodes, scene.carrier_wavelength_m)
        test_rows = np.array(
            [i for i, r in enumerate(batch.rx_ids) if int(r) in set(dataset.test_ids)]
        )
        test_batch = batch.subset(test_rows)
        amp, phase = forward_batch(result.net, test_batch.real_angles, test_batch.real_surface_ids)
        pred = receive_power(test_batch, amp.astype(float), phase.astype(float)).p_dbm
        true = np.array([dbm[int(r)] for r in test_batch.rx_ids])
        eps_p = power_error(pred, true)

        ranges = training_angle_ranges(pathset, train_ids)
        sweep = sweep_coefficients(
            net_predictor(result.net),
            gt_predictor(materials, material_of),
            surface_ids=[s.id for s in scene.surfaces],
            samples_per_surface=samples_per_surface,
            seed=config.seed,
            angle_ranges=ranges,
            material_of=material_of,
        )
        rows.append(
            DensityRow(
                fraction=float(frac),
                n_train_rx=len(train_ids),
                samples_per_km2=len(train_ids) / area_km2,
                mean_power_error_db=float(np.nanmean(eps_p)),
                mean_coeff_error_db=sweep.report.mean,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Report CSV writers (plot data; one file per figure analog)

def write_bins_csv(bins: Sequence[BinStat], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["angle_lo_deg", "angle_hi_deg", "count", "mean_db", "p90_db", "p95_db", "p99_db"])
        for b in bins:
            w.writerow([repr(b.lo_deg), repr(b.hi_deg), b.count,
                        repr(b.mean), repr(b.p90), repr(b.p95), repr(b.p99)])


def write_materials_csv(groups: Sequence[GroupStat], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["material", "count", "mean_db", "p90_db", "p95_db", "p99_db"])
        for g in groups:
            w.writerow([g.name, g.count, repr(g.mean), repr(g.p90), repr(g.p95), repr(g.p99)])


def write_density_csv(rows: Sequence[DensityRow], path, column: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fraction", "n_train_rx", "samples_per_km2", column])
        for r in rows:
            value = r.mean_power_error_db if column == "mean_power_error_db" else r.mean_coeff_error_db
            w.writerow([repr(r.fraction), r.n_train_rx, repr(r.samples_per_km2), repr(value)])


def write_cdf_csv(errors: np.ndarray, path, column: str) -> None:
    """Sorted error values with cumulative fractions (finite entries only)."""
    v = np.sort(np.asarray(errors, dtype=float))
    v = v[np.isfinite(v)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([column, "cdf"])
        for i, x in enumerate(v):
            w.writerow([repr(float(x)), repr((i + 1) / len(v))])
