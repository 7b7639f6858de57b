"""Command-line interface.

One binary, subcommands for each pipeline stage::

    switchbeam simulate      config.toml -> RF cube file
    switchbeam beamform      cube -> classical styled PGM image
    switchbeam make-dataset  cubes -> training dataset (npz)
    switchbeam train         dataset -> weight file + loss history
    switchbeam infer         weights + cube -> styled PGM per style
    switchbeam metrics       image + mask spec -> key=value report
    switchbeam bench         weights + cube -> latency/scaling report

Exit codes: 0 success, 2 usage or config error, 3 corrupt input file,
4 empty-region/metric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import tomli

from .beamform import RfCube, das, rf_to_aperture
from .config import (ExperimentConfig, _get_table, _reject_unknown,
                     load_config, parse_config, parse_region)
from .deconv import Psf, estimate_psf, simulation_psf
from .envelope import display_threshold, envelope_image, log_compress, render_pgm
from .errors import (ConfigError, CorruptFileError, EmptyRegionError,
                     InvalidInputError, NoPeakError, SwitchbeamError,
                     ZeroMeanError, ZeroVarianceError)
from .fileio import pgm_to_db, read_cube, read_pgm, write_cube
from .geometry import Phantom, sample_diffuse_scatterers, simulate_rf
from .metrics import cnr, cr, gcnr, mask_from_regions
from .model import (ModelConfig, SwitchableModel, TrainConfig, TrainingSample,
                    build_dataset, infer_frame, load_weights, save_weights,
                    style_by_label, style_targets, train)

STYLE_ALIASES = {
    "das": "das",
    "deconv": "deconvolution",
    "despeckle": "despeckle",
    "deconv-despeckle": "deconv_despeckle",
}


def _phantom_from_config(cfg: ExperimentConfig, seed: int | None = None) -> Phantom:
    phantom = Phantom(scatterers=cfg.points.copy(), regions=list(cfg.regions))
    if cfg.regions:
        use_seed = cfg.phantom_seed if seed is None else seed
        phantom = sample_diffuse_scatterers(phantom, use_seed)
    return phantom


def _resolve_psf(cfg: ExperimentConfig, cube: RfCube) -> Psf:
    """PSF per the config's pipeline.psf source."""
    if cfg.psf_source == "estimated":
        env = envelope_image(das(rf_to_aperture(cube)))
        reference = simulation_psf(cube.geom, cfg.pulse)
        return estimate_psf(env, reference.kernel.shape)
    return simulation_psf(cube.geom, cfg.pulse)


def _default_config_for(cube: RfCube) -> ExperimentConfig:
    from .geometry import PulseModel
    return ExperimentConfig(geometry=cube.geom,
                            pulse=PulseModel(cube.geom.center_freq))


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    phantom = _phantom_from_config(cfg, seed=args.seed)
    cube = simulate_rf(cfg.geometry, phantom, cfg.pulse)
    crc = write_cube(cube, args.out)
    lines, samples, elements = cube.data.shape
    print(f"lines={lines} samples={samples} elements={elements} "
          f"scatterers={phantom.scatterers.shape[0]} crc=0x{crc:08x}")
    return 0


def cmd_beamform(args) -> int:
    cfg = load_config(args.config) if args.config else None
    aperture = args.aperture
    if aperture is None and cfg is not None:
        aperture = cfg.geometry.aperture_size
    cube = read_cube(args.input, aperture_size=aperture)
    if cfg is None:
        cfg = _default_config_for(cube)
    label = STYLE_ALIASES[args.style]
    aperture_cube = rf_to_aperture(cube)
    if label == "das":
        img = log_compress(envelope_image(das(aperture_cube)))
    else:
        psf = _resolve_psf(cfg, cube)
        img = style_targets(aperture_cube, psf, cfg.despeckle,
                            lam=cfg.lam)[label]
    img = display_threshold(img, args.dynamic_range)
    Path(args.out).write_bytes(render_pgm(img, args.dynamic_range))
    print(f"style={args.style} rows={img.db.shape[0]} cols={img.db.shape[1]} "
          f"out={args.out}")
    return 0


def cmd_make_dataset(args) -> int:
    cfg = load_config(args.config)
    cubes = [read_cube(path, aperture_size=cfg.geometry.aperture_size)
             for path in args.cubes]
    aperture_cubes = [rf_to_aperture(c) for c in cubes]
    psf = _resolve_psf(cfg, cubes[0])
    train_set, val_set = build_dataset(
        aperture_cubes, psf, despeckle_params=cfg.despeckle,
        seed=cfg.train_seed, context=cfg.context, lam=cfg.lam)

    def pack(samples: list[TrainingSample], prefix: str) -> dict:
        if not samples:
            return {}
        out = {
            f"{prefix}_inputs": np.stack([s.input for s in samples]),
            f"{prefix}_means": np.array([s.input_mean for s in samples]),
            f"{prefix}_stds": np.array([s.input_std for s in samples]),
            f"{prefix}_frames": np.array([s.frame for s in samples]),
            f"{prefix}_depths": np.array([s.depth for s in samples]),
        }
        for label in STYLE_ALIASES.values():
            out[f"{prefix}_target_{label}"] = np.stack(
                [s.targets[label] for s in samples])
        return out

    arrays = {**pack(train_set, "train"), **pack(val_set, "val")}
    np.savez_compressed(args.out, **arrays)
    print(f"train={len(train_set)} val={len(val_set)} out={args.out}")
    return 0


def _unpack(data, prefix: str) -> list[TrainingSample]:
    key = f"{prefix}_inputs"
    if key not in data:
        return []
    inputs = data[key]
    targets = {label: data[f"{prefix}_target_{label}"]
               for label in STYLE_ALIASES.values()}
    return [TrainingSample(
        input=inputs[i],
        targets={label: arr[i] for label, arr in targets.items()},
        input_mean=float(data[f"{prefix}_means"][i]),
        input_std=float(data[f"{prefix}_stds"][i]),
        frame=int(data[f"{prefix}_frames"][i]),
        depth=int(data[f"{prefix}_depths"][i]),
    ) for i in range(inputs.shape[0])]


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    try:
        data = np.load(args.dataset)
    except (OSError, ValueError) as exc:
        raise CorruptFileError(f"cannot read dataset {args.dataset}: {exc}")
    train_set = _unpack(data, "train")
    val_set = _unpack(data, "val")
    if not train_set:
        raise CorruptFileError(f"dataset {args.dataset} has no training rows")
    sample = train_set[0]
    model = SwitchableModel.init(
        ModelConfig(in_channels=sample.input.shape[0], width=cfg.width,
                    bottleneck=cfg.bottleneck,
                    depth_context=sample.input.shape[2]),
        seed=cfg.train_seed)
    tc = TrainConfig(epochs=cfg.epochs, batch=cfg.batch, lr0=cfg.lr0,
                     patience=cfg.patience, seed=cfg.train_seed,
                     styles=cfg.styles)
    model, history = train(model, (train_set, val_set), tc)
    save_weights(model, args.out)
    labels = list(history[0]["val_mse"]) if history else []
    lines = ["epoch train_mse " + " ".join(f"val_{s}" for s in labels)
             + " val_total"]
    for row in history:
        vals = " ".join(f"{row['val_mse'][s]:.6e}" for s in labels)
        lines.append(f"{row['epoch']} {row['train_mse']:.6e} {vals} "
                     f"{row['val_total']:.6e}")
    Path(args.history).write_text("\n".join(lines) + "\n")
    print(f"epochs_run={len(history)} "
          f"final_train_mse={history[-1]['train_mse']:.6e} "
          f"final_val_total={history[-1]['val_total']:.6e} "
          f"weights={args.out}")
    return 0


def _styled_out_path(out: str, style: str, multiple: bool) -> Path:
    path = Path(out)
    if not multiple:
        return path
    return path.with_name(f"{path.stem}_{style}{path.suffix or '.pgm'}")


def cmd_infer(args) -> int:
    model = load_weights(args.weights)
    cube = read_cube(args.input, aperture_size=model.config.in_channels)
    aperture_cube = rf_to_aperture(cube)
    styles = args.style or list(STYLE_ALIASES)
    multiple = len(styles) > 1
    for style in styles:
        result = infer_frame(model, aperture_cube,
                             style_by_label(STYLE_ALIASES[style]),
                             dynamic_range=args.dynamic_range)
        out_path = _styled_out_path(args.out, style, multiple)
        out_path.write_bytes(render_pgm(result.image, args.dynamic_range))
        ms = result.plane_seconds * 1e3
        print(f"style={style} out={out_path} planes={ms.size} "
              f"mean_ms={ms.mean():.3f} median_ms={np.median(ms):.3f}")
    return 0


def _load_mask_spec(path: str):
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"mask parse error in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("mask root must be a table")
    _reject_unknown(raw, "", ["geometry", "target", "background"])
    geo_cfg = parse_config({"geometry": _get_table(raw, "geometry",
                                                   required=True)})
    if "target" not in raw or "background" not in raw:
        raise ConfigError("mask spec needs [target] and [background] tables")
    target = parse_region(_get_table(raw, "target"), "target")
    background = parse_region(_get_table(raw, "background"), "background")
    return geo_cfg.geometry, target, background


def cmd_metrics(args) -> int:
    levels = read_pgm(args.image)
    db = pgm_to_db(levels, args.dynamic_range)
    geom, target, background = _load_mask_spec(args.mask)
    if geom.scan_lines != db.shape[1]:
        raise ConfigError(
            f"mask geometry has {geom.scan_lines} scan lines but the image "
            f"has {db.shape[1]} columns")
    try:
        mask = mask_from_regions(geom, db.shape[0], target, background)
    except (InvalidInputError, EmptyRegionError) as exc:
        if isinstance(exc, EmptyRegionError):
            raise
        raise ConfigError(f"mask spec: {exc}") from exc
    print(f"cr_db={cr(db, mask):.6f}")
    print(f"cnr={cnr(db, mask):.6f}")
    print(f"gcnr={gcnr(db, mask, bins=args.bins):.6f}")
    return 0


def cmd_bench(args) -> int:
    model = load_weights(args.weights)
    cube = read_cube(args.cube, aperture_size=model.config.in_channels)
    aperture_cube = rf_to_aperture(cube)
    doubled = replace(
        aperture_cube,
        data=np.concatenate([aperture_cube.data, aperture_cube.data], axis=1),
        geom=replace(aperture_cube.geom,
                     depth_samples=2 * aperture_cube.geom.depth_samples))
    style = style_by_label(STYLE_ALIASES[args.style or "das"])

    def run(target_cube, repeats):
        per_plane, totals = [], []
        for _ in range(repeats):
            result = infer_frame(model, target_cube, style)
            per_plane.append(result.plane_seconds)
            totals.append(result.plane_seconds.sum())
        return np.concatenate(per_plane), np.array(totals)

    run(aperture_cube, 1)  # warm-up, excluded from the report
    plane_s, totals = run(aperture_cube, args.repeats)
    plane2_s, totals2 = run(doubled, args.repeats)
    ms = plane_s * 1e3
    ratio = totals2.mean() / totals.mean()
    ok = 1.6 <= ratio <= 2.4
    print(f"planes={aperture_cube.data.shape[1]}")
    print(f"repeats={args.repeats}")
    print(f"threads={args.threads}")
    print(f"samples_per_plane={args.repeats}")
    print(f"mean_ms={ms.mean():.4f}")
    print(f"median_ms={np.median(ms):.4f}")
    print(f"p95_ms={np.percentile(ms, 95):.4f}")
    print(f"frame_ms={totals.mean() * 1e3:.4f}")
    print(f"scaling_planes={doubled.data.shape[1]}")
    print(f"scaling_frame_ms={totals2.mean() * 1e3:.4f}")
    print(f"scaling_ratio={ratio:.4f}")
    print(f"scaling_ok={'true' if ok else 'false'}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchbeam",
        description="Ultrasound B-mode reconstruction with a switchable "
                    "neural beamformer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize an RF cube from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None,
                   help="override the phantom seed from the config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("beamform",
                       help="classical reconstruction of one cube")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--style", choices=sorted(STYLE_ALIASES), default="das")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="pipeline parameters (lam, despeckle, pulse)")
    p.add_argument("--aperture", type=int, default=None,
                   help="receive aperture size (default: full array)")
    p.add_argument("--dynamic-range", type=float, default=60.0)
    p.set_defaults(func=cmd_beamform)

    p = sub.add_parser("make-dataset",
                       help="build a four-style training dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--cubes", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train the switchable model")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="weight file path")
    p.add_argument("--history", required=True, help="loss history text file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="styled reconstruction with weights")
    p.add_argument("--weights", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--style", action="append", choices=sorted(STYLE_ALIASES),
                   default=None, help="repeatable; default: all four")
    p.add_argument("--out", required=True,
                   help="output PGM (suffixed per style when several)")
    p.add_argument("--dynamic-range", type=float, default=60.0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("metrics", help="CR/CNR/GCNR of an image")
    p.add_argument("--image", required=True, help="PGM image")
    p.add_argument("--mask", required=True,
                   help="TOML mask spec: [geometry], [target], [background]")
    p.add_argument("--dynamic-range", type=float, default=60.0)
    p.add_argument("--bins", type=int, default=256)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="per-plane latency and scaling report")
    p.add_argument("--weights", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--style", choices=sorted(STYLE_ALIASES), default="das")
    p.add_argument("--threads", type=int, default=1,
                   help="recorded in the report")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CorruptFileError as exc:
        print(f"corrupt input: {exc}", file=sys.stderr)
        return 3
    except (EmptyRegionError, ZeroVarianceError, ZeroMeanError,
            NoPeakError) as exc:
        print(f"metric failure: {exc}", file=sys.stderr)
        return 4
    except SwitchbeamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
