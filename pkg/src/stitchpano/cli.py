"""Command-line surface: generation, ablation sweeps, evaluation, captions.

Exit codes: 0 on success, 1 on usage errors, 2 on backend/runtime errors.
Any flag may also be supplied through a JSON config file (--config);
explicit flags win over the file, which wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backends import (
    BackendConfig,
    MockSchedule,
    make_mock,
    remote_denoiser,
    with_concurrency,
)
from .captions import CaptionRule, prepare_caption
from .errors import StitchPanoError, UsageError
from .evalkit import (
    clip_score,
    crop_patch,
    fid,
    load_embeddings,
    load_locations,
    sample_locations,
    save_locations,
    seam_components,
)
from .sampler import (
    MODE_MULTIDIFFUSION,
    MODE_STITCHDIFFUSION,
    Conditioning,
    SamplerConfig,
    run,
    write_manifest,
)
from .tensors import (
    Canvas,
    Rng,
    export_image,
    import_image,
    read_array,
    read_tensor,
    write_tensor,
)

# Latent-space defaults; --pixel-space scales the geometry by 8 for
# mock-only pixel experiments.
DEFAULTS = {
    "prompt": "360-degree panoramic image",
    "height": 64,
    "window_width": 128,
    "stride": 16,
    "canvas_width": None,  # derived: 2*height + window_width
    "channels": None,      # 4 in latent space, 3 in pixel space
    "steps": 50,
    "seed": 0,
    "mode": "stitch",
    "stitch_passes": 2,
    "stitch_order": "pre",
    "concat_order": "rightmost-first",
    "periodic_init": True,
    "enforce_periodicity": False,
    "backend": "mock:seeded",
    "out": "out",
    "max_inflight": 1,
    "pixel_space": False,
    "timeout": 60.0,
    "retries": 2,
    "export_png": True,
}

_MODE_ALIASES = {
    "multi": MODE_MULTIDIFFUSION,
    "multidiffusion": MODE_MULTIDIFFUSION,
    "stitch": MODE_STITCHDIFFUSION,
    "stitchdiffusion": MODE_STITCHDIFFUSION,
}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit 1."""

    def error(self, message):
        raise UsageError(message)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def _add_generate_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file supplying any flag (flags win)")
    parser.add_argument("--prompt")
    parser.add_argument("--height", type=int)
    parser.add_argument("--window-width", type=int, dest="window_width")
    parser.add_argument("--canvas-width", type=int, dest="canvas_width")
    parser.add_argument("--stride", type=int)
    parser.add_argument("--channels", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--mode", choices=sorted(_MODE_ALIASES))
    parser.add_argument("--stitch-passes", type=int, dest="stitch_passes")
    parser.add_argument("--stitch-order", choices=["pre", "post"], dest="stitch_order")
    parser.add_argument(
        "--concat-order",
        choices=["rightmost-first", "leftmost-first"],
        dest="concat_order",
    )
    parser.add_argument("--periodic-init", type=_parse_bool, dest="periodic_init")
    parser.add_argument(
        "--enforce-periodicity", type=_parse_bool, dest="enforce_periodicity"
    )
    parser.add_argument("--backend", help="URL or mock:NAME (identity|constant:C|blur:R|seeded)")
    parser.add_argument("--out")
    parser.add_argument("--max-inflight", type=int, dest="max_inflight")
    parser.add_argument(
        "--pixel-space", action="store_const", const=True, dest="pixel_space",
        help="treat all geometry values as latent cells and scale them by 8",
    )
    parser.add_argument("--timeout", type=float)
    parser.add_argument("--retries", type=int)
    parser.add_argument("--export-png", type=_parse_bool, dest="export_png")


def _merge_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in file_values.items():
            normalized = key.replace("-", "_")
            if normalized not in settings:
                raise UsageError(f"unknown config key {key!r}")
            settings[normalized] = value
    for key in settings:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            settings[key] = flag_value
    return settings


def _build_config(settings: dict) -> SamplerConfig:
    scale = 8 if settings["pixel_space"] else 1
    height = settings["height"] * scale
    window_width = settings["window_width"] * scale
    stride = settings["stride"] * scale
    canvas_width = settings["canvas_width"]
    if canvas_width is None:
        canvas_width = 2 * height + window_width
    else:
        canvas_width = canvas_width * scale
    channels = settings["channels"]
    if channels is None:
        channels = 3 if settings["pixel_space"] else 4
    mode = _MODE_ALIASES.get(str(settings["mode"]).lower())
    if mode is None:
        raise UsageError(f"unknown mode {settings['mode']!r}")
    return SamplerConfig(
        height=height,
        window_width=window_width,
        canvas_width=canvas_width,
        stride=stride,
        steps=settings["steps"],
        seed=settings["seed"],
        channels=channels,
        mode=mode,
        stitch_passes=settings["stitch_passes"],
        stitch_order=settings["stitch_order"],
        concat_order=settings["concat_order"],
        periodic_init=settings["periodic_init"],
        enforce_periodicity=settings["enforce_periodicity"],
    )


def _build_backend(settings: dict, steps: int):
    spec = settings["backend"]
    if spec.startswith("mock:"):
        handle = make_mock(spec[len("mock:"):], MockSchedule.linear(steps))
        return with_concurrency(handle, settings["max_inflight"])
    if spec.startswith("http://") or spec.startswith("https://"):
        return remote_denoiser(
            BackendConfig(
                endpoint=spec,
                timeout=settings["timeout"],
                max_inflight=settings["max_inflight"],
                retries=settings["retries"],
            )
        )
    raise UsageError(f"backend must be an http(s) URL or mock:NAME, got {spec!r}")


def _generate_once(settings: dict, out_dir: Path) -> dict:
    config = _build_config(settings)
    backend = _build_backend(settings, config.steps)
    conditioning = Conditioning(prompt=settings["prompt"])
    result = run(config, backend, conditioning)

    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    j0_path = out_dir / "j0.ptsr"
    jsyn_path = out_dir / "jsyn.ptsr"
    write_tensor(result.j0, j0_path)
    write_tensor(result.jsyn, jsyn_path)
    outputs["j0"] = str(j0_path)
    outputs["jsyn"] = str(jsyn_path)
    if settings["export_png"] and result.jsyn.channels in (1, 3):
        png_path = out_dir / "jsyn.png"
        export_image(result.jsyn, png_path, value_range=(-3.0, 3.0))
        outputs["png"] = str(png_path)
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, result, outputs)
    outputs["manifest"] = str(manifest_path)

    d_wrap, d_interior, ratio = seam_components(result.jsyn)
    return {
        "outputs": outputs,
        "seam_ratio": ratio,
        "d_wrap": d_wrap,
        "d_interior": d_interior,
        "steps": config.steps,
        "backend": result.backend_id,
    }


def _cmd_generate(args: argparse.Namespace) -> int:
    settings = _merge_settings(args)
    summary = _generate_once(settings, Path(settings["out"]))
    print(f"wrote {summary['outputs']['jsyn']} (seam ratio {summary['seam_ratio']:.4f})")
    print(f"manifest: {summary['outputs']['manifest']}")
    return 0


_ABLATION_PARAMS = ("stride", "stitch-passes", "stitch-order", "trigger-word")


def _cmd_ablate(args: argparse.Namespace) -> int:
    settings = _merge_settings(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("--values must list at least one value")
    base_out = Path(settings["out"])
    entries = []
    for value in values:
        sweep = dict(settings)
        if args.param == "stride":
            sweep["stride"] = int(value)
        elif args.param == "stitch-passes":
            sweep["stitch_passes"] = int(value)
        elif args.param == "stitch-order":
            if value not in ("pre", "post"):
                raise UsageError(f"stitch-order value must be pre or post, got {value!r}")
            sweep["stitch_order"] = value
        elif args.param == "trigger-word":
            on = _parse_bool(value)
            rule = CaptionRule()
            base_prompt = sweep["prompt"]
            sweep["prompt"] = prepare_caption(base_prompt, rule) if on else base_prompt
        run_dir = base_out / f"{args.param}-{value}"
        summary = _generate_once(sweep, run_dir)
        summary["param"] = args.param
        summary["value"] = value
        entries.append(summary)
        print(
            f"{args.param}={value}: seam ratio {summary['seam_ratio']:.4f} "
            f"(wrap {summary['d_wrap']:.4f} / interior {summary['d_interior']:.4f})"
        )
    report_path = base_out / "ablation_report.json"
    base_out.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump({"param": args.param, "runs": entries}, fh, indent=2)
        fh.write("\n")
    print(f"report: {report_path}")
    return 0


def _load_image_any(path: str) -> Canvas:
    if path.endswith(".png"):
        return import_image(path)
    return read_tensor(path)


def _cmd_eval(args: argparse.Namespace) -> int:
    if args.metric == "clip-score":
        value = clip_score(load_embeddings(args.gen), load_embeddings(args.real))
        print(f"clip-score: {value:.6f}")
        result = {"clip_score": value}
    elif args.metric == "fid":
        value = fid(load_embeddings(args.gen), load_embeddings(args.real))
        print(f"fid: {value:.6f}")
        result = {"fid": value}
    elif args.metric == "seam":
        d_wrap, d_interior, ratio = seam_components(_load_image_any(args.image))
        print(f"seam ratio: {ratio:.6f} (wrap {d_wrap:.6f} / interior {d_interior:.6f})")
        result = {"seam_ratio": ratio, "d_wrap": d_wrap, "d_interior": d_interior}
    elif args.metric == "crop":
        return _eval_crop(args)
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown metric {args.metric!r}")
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2)
            fh.write("\n")
    return 0


def _eval_crop(args: argparse.Namespace) -> int:
    image_paths = [p.strip() for p in args.images.split(",") if p.strip()]
    if not image_paths:
        raise UsageError("--images must list at least one file")
    images = [_load_image_any(p) for p in image_paths]
    dims = images[0].shape[:2]
    for path, image in zip(image_paths, images):
        if image.shape[:2] != dims:
            raise UsageError(
                f"all images must share dimensions; {path} is {image.shape[:2]}, "
                f"expected {dims}"
            )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.locations:
        locations = load_locations(args.locations)
    else:
        locations = sample_locations(
            dims, args.count, args.size, Rng(args.seed), n_images=len(images)
        )
    locations_path = out_dir / "locations.json"
    save_locations(locations_path, locations)
    for index, location in enumerate(locations):
        patch = crop_patch(images[location.image_index], location)
        write_tensor(patch, out_dir / f"patch_{index:05d}.ptsr")
    print(f"cropped {len(locations)} patches into {out_dir} (locations: {locations_path})")
    return 0


def _cmd_prep_captions(args: argparse.Namespace) -> int:
    blocklist = (
        tuple(entry for entry in args.blocklist.split(",") if entry)
        if args.blocklist
        else CaptionRule().blocklist
    )
    rule = CaptionRule(blocklist=blocklist, trigger=args.trigger or CaptionRule().trigger)
    try:
        with open(args.infile, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read {args.infile}: {exc}") from exc
    prepared = [prepare_caption(line, rule) for line in lines]
    with open(args.outfile, "w", encoding="utf-8") as fh:
        fh.write("\n".join(prepared))
        if prepared:
            fh.write("\n")
    print(f"prepared {len(prepared)} captions -> {args.outfile}")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    for path in args.paths:
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                print(f"{path}:")
                print(json.dumps(json.load(fh), indent=2, sort_keys=True))
            continue
        arr = read_array(path)
        print(
            f"{path}: shape {arr.shape}, dtype {arr.dtype}, "
            f"min {arr.min():.6f}, max {arr.max():.6f}, "
            f"mean {arr.mean():.6f}, std {arr.std():.6f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stitchpano", description=__doc__)
    parser.add_argument("--version", action="version", version=f"stitchpano {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run the sampler and write outputs + manifest")
    _add_generate_flags(gen)
    gen.set_defaults(func=_cmd_generate)

    abl = sub.add_parser("ablate", help="sweep one parameter and report seam metrics")
    abl.add_argument("--param", required=True, choices=_ABLATION_PARAMS)
    abl.add_argument("--values", required=True, help="comma-separated sweep values")
    _add_generate_flags(abl)
    abl.set_defaults(func=_cmd_ablate)

    ev = sub.add_parser("eval", help="metrics over embeddings, panoramas, and patches")
    ev_sub = ev.add_subparsers(dest="metric", required=True)
    for metric in ("clip-score", "fid"):
        m = ev_sub.add_parser(metric)
        m.add_argument("--gen", required=True, help="rank-2 PTSR embedding file")
        m.add_argument("--real", required=True, help="rank-2 PTSR embedding file")
        m.add_argument("--out", help="optional JSON output path")
        m.set_defaults(func=_cmd_eval, metric=metric)
    seam = ev_sub.add_parser("seam")
    seam.add_argument("--image", required=True, help="panorama (.ptsr or .png)")
    seam.add_argument("--out", help="optional JSON output path")
    seam.set_defaults(func=_cmd_eval, metric="seam")
    crop = ev_sub.add_parser("crop")
    crop.add_argument("--images", required=True, help="comma-separated panoramas")
    crop.add_argument("--count", type=int, default=1000)
    crop.add_argument("--size", type=int, default=512)
    crop.add_argument("--seed", type=int, default=0)
    crop.add_argument("--locations", help="reuse a recorded locations file")
    crop.add_argument("--out", required=True, help="output directory")
    crop.set_defaults(func=_cmd_eval, metric="crop")

    prep = sub.add_parser("prep-captions", help="clean captions and prepend the trigger word")
    prep.add_argument("--in", dest="infile", required=True)
    prep.add_argument("--out", dest="outfile", required=True)
    prep.add_argument("--blocklist", help="comma-separated exact substrings to remove")
    prep.add_argument("--trigger", help="trigger phrase to prepend")
    prep.set_defaults(func=_cmd_prep_captions)

    insp = sub.add_parser("inspect", help="summarize PTSR tensors or JSON manifests")
    insp.add_argument("paths", nargs="+")
    insp.set_defaults(func=_cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except StitchPanoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
