"""Command-line surface binding cubes, splits, training, distillation,
rank analysis, approximation, evaluation, and benchmarking into
reproducible workflows.

Exit codes: 0 ok, 2 usage, 3 validation, 4 numeric failure. Every
artifact-producing command writes a run manifest (command, resolved
configuration, seeds, paths, version, timestamp) next to its outputs; with
``--deterministic`` re-running a command on identical inputs reproduces its
outputs byte-identically (timestamps live only in manifests).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, hsi
from .hsi import (
    CubeError,
    HsiCube,
    PatchPair,
    PatchSpec,
    build_split,
    custom_protocol,
    degrade_array,
    named_protocol,
    read_cube,
    write_cube,
)
from .linalg import SvdConvergenceError
from .losses import DecaySchedule, LossWeights
from .lowrank import analyze_upsampler, build_grouped
from .metrics import MetricResult
from .model import (
    CheckpointError,
    LkcaNet,
    NetConfig,
    load_checkpoint,
    flops_breakdown,
    param_breakdown,
    save_checkpoint,
)
from .train import (
    DistillConfig,
    NonFiniteGradientError,
    TrainConfig,
    distill,
    evaluate,
    train,
)

_VALIDATION_ERRORS = (ValueError, KeyError, CubeError, CheckpointError, FileNotFoundError, IsADirectoryError)
_NUMERIC_ERRORS = (NonFiniteGradientError, SvdConvergenceError, FloatingPointError)

MODEL_DEFAULTS = {
    "channels": 128,
    "blocks": 16,
    "k1": 5,
    "k2": 7,
    "d1": 5,
    "d2": 7,
    "lkca_groups": 4,
    "ca_reduction": 16,
    "groups": 1,
    "drop_path": 0.1,
}

TRAIN_DEFAULTS = {
    "epochs": 10,
    "batch_size": 8,
    "lr": 2e-3,
    "final_lr": 2e-4,
    "schedule": "cosine",
    "grad_clip": None,
}

DISTILL_DEFAULTS = {
    "alpha": 0.01,
    "decay_factor": 0.66,
    "decay_every": 10,
    "kd_target": "post_shuffle",
    "lam1": 0.5,
    "lam2": 0.1,
    "lam3": 0.5,
    "lam4": 0.5,
    "lam5": 0.1,
}


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    # A run manifest doubles as a config file: replaying it reproduces the run.
    if "resolved_config" in cfg:
        cfg = cfg["resolved_config"]
    return cfg


def _resolve(ns: argparse.Namespace, defaults: dict, file_cfg: dict) -> dict:
    """Precedence: explicit flag > config file > built-in default."""
    out = {}
    for key, default in defaults.items():
        flag = getattr(ns, key, None)
        out[key] = flag if flag is not None else file_cfg.get(key, default)
    return out


def _write_manifest(path: Path, command: str, resolved: dict, inputs: list, outputs: list) -> None:
    manifest = {
        "command": command,
        "resolved_config": resolved,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _model_config(resolved: dict, bands: int, scale: int) -> NetConfig:
    return NetConfig(
        bands=bands,
        scale_factor=scale,
        feature_channels=resolved["channels"],
        num_blocks=resolved["blocks"],
        kernel_sizes=(resolved["k1"], resolved["k2"]),
        dilations=(resolved["d1"], resolved["d2"]),
        lkca_groups=resolved["lkca_groups"],
        ca_reduction=resolved["ca_reduction"],
        upsampler_groups=resolved["groups"],
        drop_path_rate=resolved["drop_path"],
    )


def _train_config(resolved: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        seed=seed,
        initial_lr=resolved["lr"],
        final_lr=resolved["final_lr"],
        schedule=resolved["schedule"],
        grad_clip=resolved["grad_clip"],
    )


def _distill_config(resolved: dict) -> DistillConfig:
    weights = LossWeights(
        lam1=resolved["lam1"],
        lam2=resolved["lam2"],
        lam3=resolved["lam3"],
        lam4=resolved["lam4"],
        lam5=resolved["lam5"],
        alpha=resolved["alpha"],
    )
    decay = DecaySchedule(factor=resolved["decay_factor"], every=resolved["decay_every"])
    return DistillConfig(weights=weights, decay=decay, kd_target=resolved["kd_target"])


# ---------------------------------------------------------------------------
# Split persistence
# ---------------------------------------------------------------------------


def _save_split(split, out_dir: Path, cube_path: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = dict(split.manifest)
    manifest["cube_path"] = str(cube_path)
    manifest["test_files"] = []
    outputs = []
    for i, region in enumerate(split.test):
        name = f"test_{i}.hsc"
        write_cube(region, out_dir / name)
        manifest["test_files"].append(name)
        outputs.append(out_dir / name)
    mpath = out_dir / "split.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(mpath)
    return outputs


def load_split(split_dir) -> "hsi.Split":
    """Rebuild a materialized split from a ``prepare`` output directory."""
    split_dir = Path(split_dir)
    manifest = json.loads((split_dir / "split.json").read_text(encoding="utf-8"))
    cube = read_cube(manifest["cube_path"])
    if manifest.get("crop_shape"):
        ch, cw = manifest["crop_shape"]
        cube = hsi.central_crop(cube, ch, cw)
    size = manifest["patch_size"]
    r = manifest["scale_factor"]

    def materialize(origins):
        pairs = []
        for r0, c0 in origins:
            hr = cube.data[:, r0 : r0 + size, c0 : c0 + size].copy()
            pairs.append(PatchPair(hr=hr, lr=degrade_array(hr, r), origin=(r0, c0)))
        return pairs

    test = [read_cube(split_dir / name) for name in manifest["test_files"]]
    return hsi.Split(
        train=materialize(manifest["train_origins"]),
        val=materialize(manifest["val_origins"]),
        test=test,
        manifest=manifest,
    )


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------


def _cmd_cube_info(ns) -> int:
    cube = read_cube(ns.path)
    info = {
        "path": str(ns.path),
        "bands": cube.bands,
        "height": cube.height,
        "width": cube.width,
        "min": float(cube.data.min()),
        "max": float(cube.data.max()),
        "meta": cube.meta,
    }
    if ns.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        print(f"{ns.path}: {cube.bands} bands, {cube.height}x{cube.width} pixels")
        print(f"  samples in [{info['min']:.6f}, {info['max']:.6f}]")
        for k, v in sorted(cube.meta.items()):
            print(f"  meta.{k} = {v}")
    return 0


_VENDOR_SUFFIXES = {".hdr", ".img", ".tif", ".tiff", ".bsq", ".bil", ".bip"}


def _cmd_cube_convert(ns) -> int:
    src = Path(ns.src)
    if src.suffix.lower() in _VENDOR_SUFFIXES:
        raise ValueError(
            f"{src}: vendor raster formats (ENVI, GeoTIFF) are not supported; "
            "export the cube as a .npy array of shape (bands, height, width) "
            "and convert that instead"
        )
    if src.suffix.lower() != ".npy":
        raise ValueError(f"{src}: expected a .npy source array")
    raw = np.load(src)
    if raw.ndim != 3:
        raise ValueError(f"{src}: expected a 3-D (bands, height, width) array, got {raw.shape}")
    cube = hsi.normalize(raw, {"name": ns.name or src.stem})
    write_cube(cube, ns.dst)
    _write_manifest(
        Path(str(ns.dst) + ".manifest.json"),
        "cube convert",
        {"name": ns.name or src.stem},
        [src],
        [ns.dst],
    )
    print(f"wrote {ns.dst}: {cube.bands} bands, {cube.height}x{cube.width}")
    return 0


def _cmd_prepare(ns) -> int:
    file_cfg = _load_config_file(ns.config)
    # 64/32 at r=4 and 128/64 at r=8: HR patch geometry scales with r.
    defaults = {"patch_size": 16 * ns.scale, "overlap": 8 * ns.scale}
    resolved = _resolve(ns, defaults, file_cfg)
    cube = read_cube(ns.cube)
    if ns.dataset == "custom":
        regions = file_cfg.get("test_regions") if ns.regions is None else json.loads(ns.regions)
        if not regions:
            raise ValueError("custom dataset needs --regions or test_regions in --config")
        protocol = custom_protocol([tuple(r) for r in regions])
    else:
        protocol = named_protocol(ns.dataset)
    spec = PatchSpec(resolved["patch_size"], resolved["overlap"], ns.scale)
    split = build_split(cube, protocol, spec, seed=ns.seed)
    if protocol.expected_shape is not None:
        split.manifest["crop_shape"] = list(protocol.expected_shape)
    outputs = _save_split(split, Path(ns.out), ns.cube)
    resolved.update({"dataset": ns.dataset, "scale": ns.scale, "seed": ns.seed})
    _write_manifest(Path(ns.out) / "prepare.manifest.json", "prepare", resolved, [ns.cube], outputs)
    print(
        f"prepared {ns.dataset} split: {len(split.train)} train / {len(split.val)} val "
        f"patches, {len(split.test)} test regions -> {ns.out}"
    )
    return 0


def _write_log(path, history) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _cmd_train(ns) -> int:
    file_cfg = _load_config_file(ns.config)
    resolved = _resolve(ns, {**MODEL_DEFAULTS, **TRAIN_DEFAULTS}, file_cfg)
    split = load_split(ns.split)
    bands = split.test[0].bands if split.test else split.train[0].hr.shape[0]
    scale = split.manifest["scale_factor"]
    config = _model_config(resolved, bands, scale)
    model = LkcaNet(config, seed=ns.seed)
    result = train(model, split, _train_config(resolved, ns.seed))
    if result.diverged:
        print("warning: training diverged; checkpoint holds the last finite state", file=sys.stderr)
    metadata = {
        "epochs": resolved["epochs"],
        "seed": ns.seed,
        "loss_weights": vars(LossWeights()),
        "best_epoch": result.best_epoch,
        "best_val_mpsnr": result.best_val_mpsnr,
    }
    save_checkpoint(result.model, ns.out, metadata)
    outputs = [ns.out]
    if ns.log:
        _write_log(ns.log, result.history)
        outputs.append(ns.log)
    resolved["seed"] = ns.seed
    _write_manifest(Path(str(ns.out) + ".manifest.json"), "train", resolved, [ns.split], outputs)
    tail = result.history[-1] if result.history else {}
    print(f"trained {resolved['epochs']} epochs -> {ns.out} (last: {json.dumps(tail, sort_keys=True)})")
    return 4 if result.diverged else 0


def _cmd_distill(ns) -> int:
    file_cfg = _load_config_file(ns.config)
    split = load_split(ns.split)
    teacher, _ = load_checkpoint(ns.teacher)
    tcfg = teacher.config
    # The student inherits the teacher's architecture at half the depth
    # unless flags or the config file say otherwise.
    student_defaults = {
        "channels": tcfg.feature_channels,
        "blocks": max(1, tcfg.num_blocks // 2),
        "k1": tcfg.kernel_sizes[0],
        "k2": tcfg.kernel_sizes[1],
        "d1": tcfg.dilations[0],
        "d2": tcfg.dilations[1],
        "lkca_groups": tcfg.lkca_groups,
        "ca_reduction": tcfg.ca_reduction,
        "groups": MODEL_DEFAULTS["groups"],
        "drop_path": tcfg.drop_path_rate,
    }
    resolved = _resolve(ns, {**student_defaults, **TRAIN_DEFAULTS, **DISTILL_DEFAULTS}, file_cfg)
    student_blocks = resolved["blocks"]
    if student_blocks >= tcfg.num_blocks:
        raise ValueError(
            f"student must be shallower than the teacher ({tcfg.num_blocks} blocks); "
            f"got --blocks {student_blocks}"
        )
    config = _model_config(resolved, tcfg.bands, tcfg.scale_factor)
    student = LkcaNet(config, seed=ns.seed)
    dcfg = _distill_config(resolved)
    result = distill(teacher, student, split, _train_config(resolved, ns.seed), dcfg)
    if result.diverged:
        print("warning: distillation diverged; checkpoint holds the last finite state", file=sys.stderr)
    metadata = {
        "epochs": resolved["epochs"],
        "seed": ns.seed,
        "teacher": str(ns.teacher),
        "loss_weights": vars(dcfg.weights),
        "decay": vars(dcfg.decay),
        "kd_target": dcfg.kd_target,
        "best_epoch": result.best_epoch,
        "best_val_mpsnr": result.best_val_mpsnr,
    }
    save_checkpoint(result.model, ns.out, metadata)
    outputs = [ns.out]
    if ns.log:
        _write_log(ns.log, result.history)
        outputs.append(ns.log)
    resolved["seed"] = ns.seed
    _write_manifest(
        Path(str(ns.out) + ".manifest.json"), "distill", resolved, [ns.split, ns.teacher], outputs
    )
    tail = result.history[-1] if result.history else {}
    print(f"distilled {resolved['epochs']} epochs -> {ns.out} (last: {json.dumps(tail, sort_keys=True)})")
    return 4 if result.diverged else 0


def _cmd_analyze_rank(ns) -> int:
    model, _ = load_checkpoint(ns.checkpoint)
    report = analyze_upsampler(model, layer=ns.layer)
    print(report.to_json())
    outputs = []
    if ns.out_json:
        Path(ns.out_json).write_text(report.to_json() + "\n", encoding="utf-8")
        outputs.append(ns.out_json)
    if ns.out_csv:
        Path(ns.out_csv).write_text(report.curve_csv(), encoding="utf-8")
        outputs.append(ns.out_csv)
    if outputs:
        _write_manifest(
            Path(str(outputs[0]) + ".manifest.json"),
            "analyze-rank",
            {"layer": ns.layer},
            [ns.checkpoint],
            outputs,
        )
    return 0


def _cmd_approximate(ns) -> int:
    model, metadata = load_checkpoint(ns.checkpoint)
    if model.config.upsampler_groups != 1:
        raise ValueError(
            f"checkpoint upsampler is already {model.config.upsampler_spec().kind}"
        )
    rng = np.random.default_rng(ns.seed)
    spec, weights = build_grouped(
        model.params["upsampler.weight"].value, ns.groups, init=ns.init, rng=rng
    )
    new_config = model.config.with_upsampler_groups(ns.groups)
    grouped = LkcaNet(new_config, seed=ns.seed)
    state = model.state_arrays()
    state["upsampler.weight"] = weights
    grouped.load_state(state)
    metadata = dict(metadata)
    metadata["approximated_from"] = str(ns.checkpoint)
    metadata["upsampler_init"] = ns.init
    save_checkpoint(grouped, ns.out, metadata)
    _write_manifest(
        Path(str(ns.out) + ".manifest.json"),
        "approximate",
        {"groups": ns.groups, "init": ns.init, "seed": ns.seed},
        [ns.checkpoint],
        [ns.out],
    )
    print(
        f"rewrote upsampler to {spec.kind}: {spec.param_count() * ns.groups} -> "
        f"{spec.param_count()} parameters"
    )
    return 0


def _cmd_eval(ns) -> int:
    split = load_split(ns.split)
    r = split.manifest["scale_factor"]
    if ns.baseline:
        scorer: LkcaNet | str = ns.baseline
        label = ns.baseline
    else:
        if not ns.checkpoint:
            raise ValueError("eval needs --checkpoint or --baseline")
        scorer, _ = load_checkpoint(ns.checkpoint)
        label = str(ns.checkpoint)
    averaged, per_region = evaluate(scorer, split.test, r, tile=ns.tile, margin=ns.margin)
    payload = {
        "model": label,
        "scale_factor": r,
        "regions": [m.as_dict() for m in per_region],
        "average": averaged.as_dict(),
        "notes": averaged.notes,
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    outputs = []
    if ns.out_json:
        Path(ns.out_json).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        outputs.append(ns.out_json)
    if ns.out_csv:
        lines = [MetricResult.csv_header()] + [m.as_csv_row() for m in per_region] + [averaged.as_csv_row()]
        Path(ns.out_csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(ns.out_csv)
    if outputs:
        _write_manifest(
            Path(str(outputs[0]) + ".manifest.json"),
            "eval",
            {"model": label},
            [ns.split],
            outputs,
        )
    return 0


def _cmd_bench(ns) -> int:
    file_cfg = _load_config_file(ns.config)
    resolved = _resolve(ns, MODEL_DEFAULTS, file_cfg)
    bands = getattr(ns, "bands", None) if getattr(ns, "bands", None) is not None else file_cfg.get("bands")
    scale = getattr(ns, "scale", None) if getattr(ns, "scale", None) is not None else file_cfg.get("scale")
    if bands is None or scale is None:
        raise ValueError("bench needs --bands and --scale (or a --config providing them)")
    config = _model_config(resolved, bands, scale)
    try:
        h, w = (int(v) for v in ns.input_size.split("x"))
    except ValueError:
        raise ValueError(f"--input-size must look like 32x32, got {ns.input_size!r}") from None

    params = param_breakdown(config)
    flops = flops_breakdown(config, h, w)
    total_params = sum(params.values())
    upsampler_share = params["upsampler"] / total_params
    grouped_counts = {
        g: config.upsampler_spec().param_count() // g
        for g in (1, 2, 4, 8, 16)
        if config.feature_channels % g == 0 and config.upsampler_out % g == 0
    }
    payload = {
        "config": config.to_dict(),
        "input_size": [h, w],
        "params_total": total_params,
        "params_upsampler": params["upsampler"],
        "upsampler_share": upsampler_share,
        "upsampler_by_groups": grouped_counts,
        "flops_total": sum(flops.values()),
        "params_by_layer": params,
        "flops_by_layer": flops,
    }
    if ns.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
        return 0
    print(f"configuration: {config.upsampler_spec().kind} upsampler, {bands} bands, x{scale}")
    print(f"parameters: {total_params:,} total; upsampler {params['upsampler']:,} "
          f"({upsampler_share:.1%} share)")
    for g, count in grouped_counts.items():
        tag = "full" if g == 1 else f"grouped({g})"
        print(f"  upsampler {tag:>12}: {count:,}")
    print(f"flops at {h}x{w}: {sum(flops.values()):,}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed for every stochastic step")
    p.add_argument("--deterministic", action="store_true",
                   help="force single-worker reductions (runs are bit-reproducible)")
    p.add_argument("--config", default=None, help="JSON config file (flags override it)")
    p.add_argument("--json", action="store_true", help="machine-readable output/errors")
    p.add_argument("--threads", type=int, default=1, help="worker parallelism cap")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--channels", type=int, default=argparse.SUPPRESS, help="feature channels C (default 128)")
    g.add_argument("--blocks", type=int, default=argparse.SUPPRESS, help="number of attention blocks (default 16)")
    g.add_argument("--k1", type=int, default=argparse.SUPPRESS, help="first depthwise kernel size (default 5)")
    g.add_argument("--k2", type=int, default=argparse.SUPPRESS, help="second depthwise kernel size (default 7)")
    g.add_argument("--d1", type=int, default=argparse.SUPPRESS, help="first dilation rate (default 5)")
    g.add_argument("--d2", type=int, default=argparse.SUPPRESS, help="second dilation rate (default 7)")
    g.add_argument("--lkca-groups", dest="lkca_groups", type=int, default=argparse.SUPPRESS,
                   help="groups of the 1x1 fusion conv (default 4)")
    g.add_argument("--ca-reduction", dest="ca_reduction", type=int, default=argparse.SUPPRESS,
                   help="channel-attention reduction (default 16)")
    g.add_argument("--groups", type=int, default=argparse.SUPPRESS,
                   help="upsampler groups; 1 = full convolution (default 1)")
    g.add_argument("--drop-path", dest="drop_path", type=float, default=argparse.SUPPRESS,
                   help="stochastic-depth rate during training (default 0.1)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=argparse.SUPPRESS, help="training epochs (default 10)")
    g.add_argument("--batch-size", dest="batch_size", type=int, default=argparse.SUPPRESS,
                   help="patches per step (default 8)")
    g.add_argument("--lr", type=float, default=argparse.SUPPRESS, help="initial learning rate (default 2e-3)")
    g.add_argument("--final-lr", dest="final_lr", type=float, default=argparse.SUPPRESS,
                   help="final learning rate (default 2e-4)")
    g.add_argument("--schedule", choices=("cosine", "step"), default=argparse.SUPPRESS,
                   help="learning-rate schedule (default cosine)")
    g.add_argument("--grad-clip", dest="grad_clip", type=float, default=argparse.SUPPRESS,
                   help="global-norm gradient clip (default off)")
    g.add_argument("--log", default=None, help="JSON-lines per-epoch log path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lkcanet",
        description="Hyperspectral super-resolution: training, low-rank upsampler "
        "analysis, and distillation workflows.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    cube = sub.add_parser("cube", help="inspect and convert cube files",
                          formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    cube_sub = cube.add_subparsers(dest="cube_command", required=True)
    info = cube_sub.add_parser("info", help="print cube header and stats",
                               formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    info.add_argument("path")
    _add_common(info)
    info.set_defaults(handler=_cmd_cube_info)
    convert = cube_sub.add_parser("convert", help="convert a .npy array to a .hsc cube",
                                  formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    convert.add_argument("src")
    convert.add_argument("dst")
    convert.add_argument("--name", default=None, help="dataset name stored in metadata")
    _add_common(convert)
    convert.set_defaults(handler=_cmd_cube_convert)

    prepare = sub.add_parser("prepare", help="build a train/val/test split from a cube",
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    prepare.add_argument("--cube", required=True)
    prepare.add_argument("--dataset", required=True,
                         choices=("chikusei", "houston2018", "pavia", "custom"))
    prepare.add_argument("--scale", type=int, required=True, help="super-resolution factor r")
    prepare.add_argument("--patch-size", dest="patch_size", type=int, default=argparse.SUPPRESS,
                         help="HR patch size (default 16*scale: 64 at r=4, 128 at r=8)")
    prepare.add_argument("--overlap", type=int, default=argparse.SUPPRESS,
                         help="HR patch overlap (default 8*scale: 32 at r=4, 64 at r=8)")
    prepare.add_argument("--regions", default=None,
                         help="custom test regions as JSON [[row,col,h,w],...]")
    prepare.add_argument("--out", required=True, help="output split directory")
    _add_common(prepare)
    prepare.set_defaults(handler=_cmd_prepare)

    tr = sub.add_parser("train", help="train a model on a prepared split",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    tr.add_argument("--split", required=True, help="split directory from `prepare`")
    tr.add_argument("--out", required=True, help="output checkpoint path")
    _add_model_flags(tr)
    _add_train_flags(tr)
    _add_common(tr)
    tr.set_defaults(handler=_cmd_train)

    di = sub.add_parser("distill", help="train a student against a frozen teacher",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    di.add_argument("--teacher", required=True, help="teacher checkpoint")
    di.add_argument("--split", required=True)
    di.add_argument("--out", required=True)
    di.add_argument("--alpha", type=float, default=argparse.SUPPRESS,
                    help="initial distillation weight (default 0.01)")
    di.add_argument("--decay-factor", dest="decay_factor", type=float, default=argparse.SUPPRESS,
                    help="distillation decay factor d (default 0.66)")
    di.add_argument("--decay-every", dest="decay_every", type=int, default=argparse.SUPPRESS,
                    help="epochs per decay step f (default 10)")
    di.add_argument("--kd-target", dest="kd_target", choices=("post_shuffle", "reconstruction"),
                    default=argparse.SUPPRESS, help="alignment tensor (default post_shuffle)")
    _add_model_flags(di)
    _add_train_flags(di)
    _add_common(di)
    di.set_defaults(handler=_cmd_distill)

    ar = sub.add_parser("analyze-rank", help="SVD the upsampler and export its spectrum",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ar.add_argument("--checkpoint", required=True)
    ar.add_argument("--layer", default="upsampler", help="layer to analyze")
    ar.add_argument("--out-json", dest="out_json", default=None, help="rank report path")
    ar.add_argument("--out-csv", dest="out_csv", default=None, help="cumulative-curve CSV path")
    _add_common(ar)
    ar.set_defaults(handler=_cmd_analyze_rank)

    ap = sub.add_parser("approximate", help="rewrite a checkpoint's upsampler as grouped",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--groups", type=int, required=True)
    ap.add_argument("--init", choices=("random", "svd_blocks"), default="random",
                    help="grouped-weight initialization")
    ap.add_argument("--out", required=True)
    _add_common(ap)
    ap.set_defaults(handler=_cmd_approximate)

    ev = sub.add_parser("eval", help="score a checkpoint or baseline on test regions",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ev.add_argument("--split", required=True)
    ev.add_argument("--checkpoint", default=None)
    ev.add_argument("--baseline", choices=("bicubic",), default=None)
    ev.add_argument("--tile", type=int, default=None, help="LR tile size for tiled forward")
    ev.add_argument("--margin", type=int, default=None,
                    help="tile context margin (default: receptive radius)")
    ev.add_argument("--out-json", dest="out_json", default=None)
    ev.add_argument("--out-csv", dest="out_csv", default=None)
    _add_common(ev)
    ev.set_defaults(handler=_cmd_eval)

    be = sub.add_parser("bench", help="parameter/FLOPs breakdown incl. upsampler share",
                        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    be.add_argument("--bands", type=int, default=argparse.SUPPRESS)
    be.add_argument("--scale", type=int, default=argparse.SUPPRESS)
    be.add_argument("--input-size", dest="input_size", default="32x32",
                    help="LR input size HxW for the FLOPs column")
    _add_model_flags(be)
    _add_common(be)
    be.set_defaults(handler=_cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    want_json = getattr(ns, "json", False)
    try:
        return ns.handler(ns)
    except _NUMERIC_ERRORS as exc:
        _report_error(exc, want_json)
        return 4
    except _VALIDATION_ERRORS as exc:
        _report_error(exc, want_json)
        return 3


def _report_error(exc: Exception, as_json: bool) -> None:
    if as_json:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
