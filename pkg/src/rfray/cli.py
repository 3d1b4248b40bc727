"""Command-line pipeline: synth -> trace -> train -> eval -> predict.

Every subcommand reads and writes plain files, so stages can be rerun
or swapped independently. A run manifest is written last and doubles as
the success marker; on failure, partially written outputs are removed
and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .evaluation import (
    DEFAULT_NOISE_DBM,
    density_sweep,
    gt_predictor,
    net_predictor,
    power_error,
    sinr_and_interference,
    sweep_coefficients,
    training_angle_ranges,
    write_bins_csv,
    write_cdf_csv,
    write_density_csv,
    write_materials_csv,
)
from .reflectance import forward_batch, load_checkpoint
from .renderer import pad, receive_power
from .scene import load_scene, save_scene
from .synth import (
    SynthSpec,
    gen_measurements,
    gen_scene,
    load_sidecar,
    save_sidecar,
    surface_material_map,
)
from .tracer import load_pathset, save_pathset, trace_all
from .trainer import (
    Dataset,
    TrainConfig,
    load_measurements,
    save_dataset,
    save_loss_curve,
    train,
    write_checkpoint_atomic,
)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """One subcommand's inputs/outputs; the manifest is written on clean exit."""

    def __init__(self, subcommand: str, out_dir: str, seed, config: dict):
        self.subcommand = subcommand
        self.out_dir = out_dir
        self.seed = seed
        self.config = config
        self.inputs: dict[str, dict] = {}
        self.outputs: list[str] = []
        os.makedirs(out_dir, exist_ok=True)

    def add_input(self, name: str, path: str) -> str:
        if not os.path.exists(path):
            raise FileNotFoundError(f"input {name!r}: no such file: {path}")
        self.inputs[name] = {"path": str(path), "sha256": _sha256(path)}
        return path

    def out_path(self, name: str) -> str:
        p = os.path.join(self.out_dir, name)
        self.outputs.append(p)
        return p

    def __enter__(self) -> "Run":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is None:
            manifest = {
                "tool_version": __version__,
                "subcommand": self.subcommand,
                "config": self.config,
                "inputs": self.inputs,
                "seed": self.seed,
                "outputs": [os.path.basename(p) for p in self.outputs],
            }
            path = os.path.join(self.out_dir, "manifest.json")
            tmp = path + ".tmp"
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2)
                fh.write("\n")
            os.replace(tmp, path)
        else:
            for p in self.outputs:
                if os.path.exists(p):
                    os.remove(p)
        return False


def cmd_synth(args) -> int:
    spec = SynthSpec.load(args.spec)
    if args.seed is not None:
        spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    with Run("synth", args.out, spec.seed,
             {"spec": spec.to_dict(), "noise_db": args.noise_db,
              "max_reflections": args.max_reflections, "max_paths": args.max_paths,
              "train_fraction": args.train_fraction}) as run:
        run.add_input("spec", args.spec)
        scene = gen_scene(spec)
        pathset = trace_all(scene, args.max_reflections, args.max_paths)
        materials = spec.materials()
        measurements = gen_measurements(
            scene, pathset, materials, noise_db=args.noise_db, seed=spec.seed
        )
        save_scene(scene, run.out_path("scene.json"))
        dataset = Dataset.split(measurements, train_fraction=args.train_fraction, seed=spec.seed)
        save_dataset(dataset, run.out_path("dataset.csv"))
        save_sidecar(materials, surface_material_map(scene), run.out_path("sidecar.json"))
        print(f"synth: {scene.surface_count} surfaces, {len(scene.tx_nodes)} tx, "
              f"{len(scene.rx_nodes)} rx -> {args.out}")
    return 0


def cmd_trace(args) -> int:
    with Run("trace", args.out, args.seed,
             {"max_reflections": args.max_reflections, "max_paths": args.max_paths}) as run:
        scene = load_scene(run.add_input("scene", args.scene))
        pathset = trace_all(scene, args.max_reflections, args.max_paths)
        save_pathset(pathset, run.out_path("pathset.csv"))
        n_paths = sum(len(v) for v in pathset.paths.values())
        print(f"trace: {n_paths} paths over {len(pathset.tx_ids)}x{len(pathset.rx_ids)} "
              f"pairs -> {args.out}")
    return 0


def cmd_train(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {"train_fraction": args.train_fraction}
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = TrainConfig.from_dict({**config.to_dict(), **overrides})
    with Run("train", args.out, config.seed, config.to_dict()) as run:
        scene = load_scene(run.add_input("scene", args.scene))
        pathset = load_pathset(
            run.add_input("pathset", args.pathset),
            tx_ids=[t.id for t in scene.tx_nodes],
            rx_ids=[r.id for r in scene.rx_nodes],
        )
        measurements = load_measurements(run.add_input("dataset", args.dataset))
        if args.config:
            run.add_input("config", args.config)
        dataset = Dataset.split(
            measurements, train_fraction=config.train_fraction, seed=config.seed
        )
        result = train(scene, pathset, dataset, config)
        write_checkpoint_atomic(result.net, run.out_path("checkpoint.npz"))
        save_loss_curve(result.curve, run.out_path("loss_curve.csv"))
        status = "aborted on non-finite loss; best checkpoint kept" if result.aborted else "done"
        print(f"train: {status}; best val loss {result.best_val_loss:.6g} dB^2 "
              f"at iteration {result.best_iteration} -> {args.out}")
    return 0


def _scene_area_km2(scene) -> float:
    pts = np.concatenate([s.vertices for s in scene.surfaces])
    dx = float(pts[:, 0].max() - pts[:, 0].min())
    dy = float(pts[:, 1].max() - pts[:, 1].min())
    return max(dx * dy, 1e-12) / 1e6


def cmd_eval(args) -> int:
    with Run("eval", args.out, args.seed,
             {"noise_dbm": args.noise_dbm, "train_fraction": args.train_fraction,
              "train_ranges": args.train_ranges, "density_fractions": args.density_fractions,
              "samples_per_surface": args.samples_per_surface}) as run:
        scene = load_scene(run.add_input("scene", args.scene))
        net = load_checkpoint(run.add_input("checkpoint", args.checkpoint), scene.surface_count)
        pathset = load_pathset(
            run.add_input("pathset", args.pathset),
            tx_ids=[t.id for t in scene.tx_nodes],
            rx_ids=[r.id for r in scene.rx_nodes],
        )
        measurements = load_measurements(run.add_input("dataset", args.dataset))
        materials, material_of = load_sidecar(run.add_input("sidecar", args.sidecar))
        dataset = Dataset.split(measurements, train_fraction=args.train_fraction, seed=args.seed)
        names = {m.material_id: m.name for m in materials}

        ranges = training_angle_ranges(pathset, dataset.train_ids) if args.train_ranges else None
        sweep = sweep_coefficients(
            net_predictor(net),
            gt_predictor(materials, material_of),
            surface_ids=[s.id for s in scene.surfaces],
            samples_per_surface=args.samples_per_surface,
            seed=args.seed,
            angle_ranges=ranges,
            material_of=material_of,
            material_names=names,
        )
        write_bins_csv(sweep.report.bins, run.out_path("fig5a_bins.csv"))
        write_materials_csv(sweep.report.materials, run.out_path("fig5b_materials.csv"))

        batch = pad(pathset, scene.tx_nodes, scene.carrier_wavelength_m)
        amp, phase = forward_batch(net, batch.real_angles, batch.real_surface_ids)
        pred = receive_power(batch, amp.astype(float), phase.astype(float))
        gt_amp, gt_phase = gt_predictor(materials, material_of)(
            batch.real_angles, batch.real_surface_ids
        )
        true = receive_power(batch, gt_amp, gt_phase)

        dbm = dataset.dbm_by_id()
        test_set = set(dataset.test_ids)
        test_rows = np.array([i for i, r in enumerate(batch.rx_ids) if int(r) in test_set])
        eps_p = power_error(
            pred.p_dbm[test_rows], np.array([dbm[int(batch.rx_ids[i])] for i in test_rows])
        )

        rx_pos_by_id = {r.id: r.position for r in scene.rx_nodes}
        sinr = sinr_and_interference(
            pred.channels[test_rows],
            true.channels[test_rows],
            np.array([t.position for t in scene.tx_nodes]),
            np.array([rx_pos_by_id[int(batch.rx_ids[i])] for i in test_rows]),
            batch.tx_powers,
            noise_dbm=args.noise_dbm,
        )
        write_cdf_csv(sinr.sinr_error_db, run.out_path("fig7a_sinr_cdf.csv"), "sinr_error_db")
        write_cdf_csv(sinr.interference_error_db, run.out_path("fig7b_interference_cdf.csv"),
                      "interference_gain_error_db")

        if args.density_fractions:
            config = TrainConfig.load(args.config) if args.config else TrainConfig()
            fractions = [float(x) for x in args.density_fractions.split(",")]
            density_rows = density_sweep(
                scene, pathset, dataset, materials, material_of, config, fractions,
                area_km2=args.area_km2 or _scene_area_km2(scene),
                samples_per_surface=args.samples_per_surface,
            )
            write_density_csv(density_rows, run.out_path("fig6a_density.csv"),
                              "mean_power_error_db")
            write_density_csv(density_rows, run.out_path("fig6b_density.csv"),
                              "mean_coeff_error_db")

        summary = {
            "noise_dbm": args.noise_dbm,
            "coefficient_error_db": {
                "count": sweep.report.count,
                "excluded": sweep.report.excluded,
                "mean": sweep.report.mean,
                "median": sweep.report.median,
                "p90": sweep.report.p90,
                "p95": sweep.report.p95,
                "p99": sweep.report.p99,
            },
            "power_error_db_test": {
                "count": int(np.isfinite(eps_p).sum()),
                "mean": float(np.nanmean(eps_p)),
                "median": float(np.nanmedian(eps_p)),
            },
            "sinr_error_db_median": float(np.nanmedian(sinr.sinr_error_db)),
            "interference_error_db_p95": (
                float(np.nanpercentile(sinr.interference_error_db, 95))
                if np.isfinite(sinr.interference_error_db).any() else None
            ),
        }
        with open(run.out_path("summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
        print(f"eval: mean coeff err {sweep.report.mean:.3f} dB, "
              f"mean test power err {summary['power_error_db_test']['mean']:.3f} dB -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    with Run("predict", args.out, args.seed, {}) as run:
        scene = load_scene(run.add_input("scene", args.scene))
        net = load_checkpoint(run.add_input("checkpoint", args.checkpoint), scene.surface_count)
        pathset = load_pathset(
            run.add_input("pathset", args.pathset),
            tx_ids=[t.id for t in scene.tx_nodes],
            rx_ids=[r.id for r in scene.rx_nodes],
        )
        truth = {}
        if args.dataset:
            truth = {m.rx_id: m.p_rx_dbm
                     for m in load_measurements(run.add_input("dataset", args.dataset))}

        batch = pad(pathset, scene.tx_nodes, scene.carrier_wavelength_m)
        amp, phase = forward_batch(net, batch.real_angles, batch.real_surface_ids)
        result = receive_power(batch, amp.astype(float), phase.astype(float))

        path = run.out_path("predictions.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            header = ["rx_id", "P_rx_dBm_pred", "P_rx_dBm_true"]
            for t in batch.tx_ids:
                header += [f"H_dB_tx{t}", f"phase_rad_tx{t}"]
            w.writerow(header)
            with np.errstate(divide="ignore"):
                h_db = 20.0 * np.log10(np.abs(result.channels))
            h_ph = np.angle(result.channels)
            for i, rx_id in enumerate(batch.rx_ids):
                row = [int(rx_id), repr(float(result.p_dbm[i]))]
                row.append(repr(float(truth[int(rx_id)])) if int(rx_id) in truth else "")
                for j in range(len(batch.tx_ids)):
                    row += [repr(float(h_db[i, j])), repr(float(h_ph[i, j]))]
                w.writerow(row)
        print(f"predict: {len(batch.rx_ids)} receivers -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rfray",
        description="RF ray tracing with learned per-surface reflection coefficients.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=seed_default, help="run seed")
        sp.add_argument("--threads", type=int, default=None,
                        help="cap numpy BLAS worker threads")

    sp = sub.add_parser("synth",
                        help="generate a synthetic scene, dataset, and ground-truth sidecar")
    sp.add_argument("--spec", required=True, help="synth spec JSON")
    sp.add_argument("--noise-db", type=float, default=None, help="stddev of additive dB noise")
    sp.add_argument("--max-reflections", type=int, default=3)
    sp.add_argument("--max-paths", type=int, default=7, help="per TX-RX pair cap")
    sp.add_argument("--train-fraction", type=float, default=0.8)
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("trace", help="enumerate specular paths for every TX-RX pair")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--max-reflections", type=int, default=3)
    sp.add_argument("--max-paths", type=int, default=7)
    common(sp)
    sp.set_defaults(func=cmd_trace)

    sp = sub.add_parser("train", help="fit the reflectance net to measurements")
    sp.add_argument("--scene", required=True)
    sp.add_argument("--pathset", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--config", default=None, help="train config JSON")
    sp.add_argument("--train-fraction", type=float, default=0.8)
    common(sp, seed_default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="compute metric reports against the ground-truth sidecar")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--pathset", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--sidecar", required=True)
    sp.add_argument("--config", default=None, help="train config, used by --density-fractions")
    sp.add_argument("--train-fraction", type=float, default=0.8)
    sp.add_argument("--noise-dbm", type=float, default=DEFAULT_NOISE_DBM)
    sp.add_argument("--train-ranges", action="store_true",
                    help="restrict the coefficient sweep to angles seen in training")
    sp.add_argument("--density-fractions", default=None,
                    help="comma-separated training fractions; triggers retraining")
    sp.add_argument("--area-km2", type=float, default=None)
    sp.add_argument("--samples-per-surface", type=int, default=256)
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="render receive powers and channels from a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--pathset", required=True)
    sp.add_argument("--dataset", default=None, help="optional truth for the comparison column")
    common(sp)
    sp.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=args.threads)
        except ImportError:
            print("warning: threadpoolctl not installed; --threads ignored", file=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
