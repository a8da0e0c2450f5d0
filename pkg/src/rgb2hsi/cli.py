"""Command-line pipeline: scene synthesis through training, inference and evaluation.

Every subcommand accepts ``--config file.json`` whose keys mirror the flag
names (dashes become underscores); a flag given on the command line wins.
Outputs go under ``--out``. Exit status is 0 on success, 1 when arguments,
configuration or inputs are invalid, and 2 when a validated run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import torch

from rgb2hsi.dataset import (
    TARGET_WAVELENGTHS,
    PatchSet,
    extract_patches,
    geographic_split,
    load_patchset,
    pad_to_multiple,
    save_patchset,
)
from rgb2hsi.hypercube import (
    NORMALIZED,
    RADIANCE,
    SceneSpec,
    SpectralCube,
    generate_scene,
    labels_to_cube,
    load_cube,
    normalize_cube,
    resample_bands,
    save_cube,
    wavelength_grid,
)
from rgb2hsi.metrics import evaluate, interpolate_bspline, mean_spectrum_predictor, render_curves, sample_signature
from rgb2hsi.rgbsynth import RGBImage, builtin_csf, load_csf, synthesize_rgb
from rgb2hsi.ssrgan import INFERENCE, DiscriminatorConfig, GeneratorConfig, generator_forward
from rgb2hsi.training import TrainingConfig, generator_from_checkpoint, load_checkpoint, save_checkpoint, train

log = logging.getLogger("rgb2hsi")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad arguments, configuration or inputs; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ options


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable[[str], Any]
    default: Any = None
    help: str = ""
    required: bool = False


def _bool(text: str) -> bool:
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _points(text: str) -> list[tuple[int, int]]:
    pts = []
    for chunk in str(text).split(";"):
        if not chunk.strip():
            continue
        try:
            r, c = (int(v) for v in chunk.split(","))
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"points look like 'r,c;r,c', got {chunk!r}") from exc
        pts.append((r, c))
    if not pts:
        raise argparse.ArgumentTypeError("at least one point is needed")
    return pts


SCENE_OPTIONS = [
    Option("width", int, 256), Option("height", int, 256),
    Option("n_materials", int, 6), Option("n_rectangles", int, 24),
    Option("smoothness", float, 32.0), Option("noise_sigma", float, 0.0),
    Option("grid_start", float, 400.0), Option("grid_step", float, 10.0), Option("grid_count", int, 31),
    Option("seed", int, required=True),
]

COMMANDS: dict[str, tuple[str, list[Option]]] = {
    "synth-scene": ("render a synthetic labelled scene", SCENE_OPTIONS),
    "resample": ("boxcar-resample a cube onto a uniform grid", [
        Option("cube", Path, required=True, help="input cube container"),
        Option("grid_start", float, 400.0), Option("grid_step", float, 10.0), Option("grid_count", int, 31),
        Option("half_window", float, 5.0),
        Option("ceiling", float, help="radiance ceiling; required for radiance cubes"),
    ]),
    "synthesize-rgb": ("project a normalized cube to RGB through a CSF", [
        Option("cube", Path, required=True),
        Option("csf", str, "builtin", help="CSF csv path or 'builtin'"),
    ]),
    "split-patches": ("geographic train/test split and patch sampling", [
        Option("rgb", Path, required=True), Option("cube", Path, required=True),
        Option("fraction", float, 0.6), Option("axis", str, "columns"),
        Option("size", int, 64), Option("n_train", int, 500), Option("n_test", int, 100),
        Option("seed", int, required=True),
    ]),
    "train": ("adversarial training with checkpoints", [
        Option("patches", Path, required=True),
        Option("lambda_l1", float, 100.0), Option("epochs", int, 50),
        Option("lr_start", float, 2e-3), Option("lr_end", float, 2e-4),
        Option("batch_size", int, 4), Option("seed", int, required=True),
        Option("aux_loss", str, "l1"), Option("schedule", str, "linear"), Option("dtype", str, "float32"),
        Option("depth", int, 6), Option("dropout", float, 0.5),
        Option("width_multiplier", float, 1.0), Option("batch_norm", _bool, False),
        Option("inference_dropout", _bool, False),
        Option("preset", str, "rf70"), Option("d_width_multiplier", float,
                                              help="discriminator width multiplier (default: width_multiplier)"),
        Option("resume", Path, help="checkpoint directory to continue from"),
        Option("until", int, help="stop after this many completed epochs"),
    ]),
    "infer": ("predict a 31-band cube from an RGB container", [
        Option("checkpoint", Path, required=True), Option("rgb", Path, required=True),
    ]),
    "evaluate": ("score a checkpoint on the test split", [
        Option("checkpoint", Path, required=True), Option("patches", Path, required=True),
        Option("batch_size", int, 16), Option("baseline", _bool, True,
                                              help="also score the mean-spectrum baseline"),
    ]),
    "signature": ("ground-truth vs predicted spectral curves at points", [
        Option("truth", Path, required=True), Option("predicted", Path, required=True),
        Option("points", _points, required=True, help="'r,c;r,c;...'"),
        Option("samples_per_interval", int, 10), Option("scale", str, "unit"),
    ]),
}

GENERATOR_WIDTHS = GeneratorConfig().widths


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rgb2hsi", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (summary, options) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", type=Path, help="JSON file with option values")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        for opt in options:
            flag = "--" + opt.name.replace("_", "-")
            default = "" if opt.default is None else f" (default: {opt.default})"
            p.add_argument(flag, dest=opt.name, type=opt.type, default=None, help=opt.help + default)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config and explicit flags, in rising priority."""
    options = COMMANDS[command][1]
    known = {o.name: o for o in options}
    from_file: dict = {}
    if args.config is not None:
        try:
            from_file = json.loads(args.config.read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    extra = set(from_file) - set(known) - _NESTED.get(command, set())
    if extra:
        raise UsageError(f"unknown config keys for {command}: {sorted(extra)}")
    values: dict = {}
    for name, opt in known.items():
        flag = getattr(args, name)
        if flag is not None:
            values[name] = flag
        elif name in from_file:
            try:
                values[name] = _coerce(opt, from_file[name])
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {name}: {exc}") from exc
        elif opt.required:
            raise UsageError(f"{command} needs --{name.replace('_', '-')}")
        else:
            values[name] = opt.default
    for key in _NESTED.get(command, set()):
        if key in from_file:
            values[key] = from_file[key]
    return values


def _coerce(opt: Option, raw: Any) -> Any:
    if opt.type is _points and isinstance(raw, list):
        return [(int(r), int(c)) for r, c in raw]
    if opt.type is int and isinstance(raw, float) and not raw.is_integer():
        raise ValueError(f"expected an integer, got {raw}")
    return opt.type(raw)


# scene materials/rectangles and nested network configs are config-file only
_NESTED = {"synth-scene": {"materials", "rectangles"}, "train": {"generator", "discriminator"}}


# ------------------------------------------------------------------ commands
#
# Each ``prepare_*`` validates and loads everything, then returns a thunk that
# writes outputs. Nothing touches the output directory before the thunk runs.


def _require(path: Path, what: str) -> None:
    if not Path(str(path) + ".json").exists() and not path.exists():
        raise UsageError(f"{what} {path} does not exist")


def _cube(path: Path, what: str) -> SpectralCube:
    _require(path, what)
    return load_cube(path)


def prepare_synth_scene(v: dict, out: Path):
    spec = SceneSpec.from_dict(v)
    cube, labels = generate_scene(spec)

    def run():
        save_cube(cube, out / "scene")
        save_cube(labels_to_cube(labels), out / "labels")
        (out / "scene_spec.json").write_text(json.dumps(v, indent=2, sort_keys=True) + "\n")
    return run


def prepare_resample(v: dict, out: Path):
    cube = _cube(v["cube"], "cube")
    if cube.units == RADIANCE:
        if v["ceiling"] is None:
            raise UsageError("radiance cube given; pass --ceiling to normalize it")
        cube = normalize_cube(cube, v["ceiling"])
    targets = wavelength_grid(v["grid_start"], v["grid_step"], v["grid_count"])
    resampled = resample_bands(cube, targets, v["half_window"])
    return lambda: save_cube(resampled, out / "resampled")


def prepare_synthesize_rgb(v: dict, out: Path):
    cube = _cube(v["cube"], "cube")
    if v["csf"] == "builtin":
        csf = builtin_csf(cube.wavelengths)
    else:
        if not Path(v["csf"]).exists():
            raise UsageError(f"CSF file {v['csf']} does not exist")
        csf = load_csf(v["csf"])
    rgb = synthesize_rgb(cube, csf)
    return lambda: save_cube(rgb.to_cube(), out / "rgb")


def prepare_split_patches(v: dict, out: Path):
    rgb = RGBImage.from_cube(_cube(v["rgb"], "rgb"))
    hsi = _cube(v["cube"], "cube")
    if (rgb.height, rgb.width) != (hsi.height, hsi.width):
        raise UsageError(f"rgb is {rgb.height}x{rgb.width} but cube is {hsi.height}x{hsi.width}")
    extent = hsi.width if v["axis"] == "columns" else hsi.height
    region = geographic_split(extent, v["fraction"], v["axis"])
    ps = extract_patches(rgb, hsi, region, v["size"], v["n_train"], v["n_test"], seed=v["seed"],
                         sources=(Path(v["rgb"]).name, Path(v["cube"]).name))
    return lambda: save_patchset(ps, out / "patches")


def _training_config(v: dict) -> TrainingConfig:
    depth = v["depth"]
    if not 1 <= depth <= len(GENERATOR_WIDTHS):
        raise UsageError(f"--depth must lie in [1, {len(GENERATOR_WIDTHS)}]; set generator.widths in the config for deeper nets")
    gen = dict(depth=depth, widths=GENERATOR_WIDTHS[:depth],
               dropout=v["dropout"], width_multiplier=v["width_multiplier"],
               batch_norm=v["batch_norm"], inference_dropout=v["inference_dropout"])
    gen.update(v.get("generator") or {})
    dis = dict(preset=v["preset"], width_multiplier=v["d_width_multiplier"] or v["width_multiplier"])
    dis.update(v.get("discriminator") or {})
    return TrainingConfig(
        lambda_l1=v["lambda_l1"], epochs=v["epochs"], lr_start=v["lr_start"], lr_end=v["lr_end"],
        batch_size=v["batch_size"], seed=v["seed"], aux_loss=v["aux_loss"], schedule=v["schedule"],
        dtype=v["dtype"], generator=GeneratorConfig.from_dict(gen), discriminator=DiscriminatorConfig.from_dict(dis),
    )


def _patchset(path: Path) -> PatchSet:
    if not (Path(path) / "manifest.json").exists():
        raise UsageError(f"patch set {path} does not exist")
    return load_patchset(path)


def prepare_train(v: dict, out: Path):
    config = _training_config(v)
    ps = _patchset(v["patches"])
    if not ps.split("train"):
        raise UsageError(f"the train split of {v['patches']} is empty")
    if ps.size % 2 ** config.generator.depth:
        raise UsageError(f"patch size {ps.size} is not divisible by 2**depth={2 ** config.generator.depth}")
    resume = None
    if v["resume"] is not None:
        resume = load_checkpoint(v["resume"])

    def run():
        result = train(config, ps, checkpoint_dir=out / "checkpoints", resume=resume, until=v["until"])
        save_checkpoint(result.checkpoint, out / "final")
        history = [r.__dict__ for r in result.history]
        (out / "history.json").write_text(json.dumps(history, indent=1) + "\n")
    return run


def prepare_infer(v: dict, out: Path):
    gen = generator_from_checkpoint(v["checkpoint"])
    rgb = RGBImage.from_cube(_cube(v["rgb"], "rgb"))

    def run():
        padded, crop = pad_to_multiple(rgb, 2 ** gen.config.depth)
        pred = generator_forward(gen, torch.from_numpy(padded.data), mode=INFERENCE).double().numpy()
        cube = SpectralCube(data=crop.crop(pred), wavelengths=TARGET_WAVELENGTHS, units=NORMALIZED, radiance_ceiling=1.0)
        save_cube(cube, out / "predicted")
    return run


def prepare_evaluate(v: dict, out: Path):
    ck = load_checkpoint(v["checkpoint"])
    gen = generator_from_checkpoint(ck)
    ps = _patchset(v["patches"])
    if not ps.split("test"):
        raise UsageError(f"the test split of {v['patches']} is empty; nothing to evaluate")
    if v["batch_size"] < 1:
        raise UsageError("batch_size must be >= 1")

    def run():
        echo = {"training": ck.manifest["training"], "epoch": ck.manifest["epoch"], "batch_size": v["batch_size"]}
        if v["baseline"]:
            base = evaluate(mean_spectrum_predictor(ps), ps, v["batch_size"])
            echo["baseline_mean_spectrum"] = {"rmse_8bit": base.rmse_8bit, "psnr_unit": base.to_dict()["psnr_unit"]}
        report = evaluate(gen, ps, v["batch_size"], config=echo)
        (out / "report.json").write_text(report.to_json())
    return run


def prepare_signature(v: dict, out: Path):
    truth = _cube(v["truth"], "truth cube")
    pred = _cube(v["predicted"], "predicted cube")
    if (truth.height, truth.width) != (pred.height, pred.width):
        raise UsageError(f"truth is {truth.height}x{truth.width} but prediction is {pred.height}x{pred.width}")
    if v["scale"] not in ("unit", "eight_bit"):
        raise UsageError(f"scale must be 'unit' or 'eight_bit', got {v['scale']!r}")
    curves = []
    for point in v["points"]:
        try:
            sigs = (sample_signature(truth, point, "ground_truth"), sample_signature(pred, point, "predicted"))
        except IndexError as exc:
            raise UsageError(str(exc)) from exc
        pair = [interpolate_bspline(s, v["samples_per_interval"], v["scale"]) for s in sigs]
        curves.append((point, render_curves(pair, ["ground_truth", "predicted"])))

    def run():
        for (r, c), (csv_text, svg) in curves:
            (out / f"signature_r{r}_c{c}.csv").write_text(csv_text)
            (out / f"signature_r{r}_c{c}.svg").write_text(svg)
    return run


PREPARE = {
    "synth-scene": prepare_synth_scene,
    "resample": prepare_resample,
    "synthesize-rgb": prepare_synthesize_rgb,
    "split-patches": prepare_split_patches,
    "train": prepare_train,
    "infer": prepare_infer,
    "evaluate": prepare_evaluate,
    "signature": prepare_signature,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("a command is required")
        logging.basicConfig(stream=sys.stderr, level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        values = resolve(args.command, args)
        action = PREPARE[args.command](values, args.out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, TypeError, OSError) as exc:
        # input validation raised by the library (bad cube, CSF, checkpoint, config)
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID

    try:
        args.out.mkdir(parents=True, exist_ok=True)
        action()
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime failure
        print(f"error: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    log.info("%s finished; outputs in %s", args.command, args.out)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
