"""Command-line front end.

Every subcommand validates its inputs before writing, writes through
temporary files, and reports on standard error. Exit status is 0 on
success, 1 for invalid arguments or data, 2 for I/O failures.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .edt import EdtOptions, normalize_sdm, sdm_from_labels, sdm_volume
from .errors import ConfigurationError, DomainError, VolumeIOError
from .heaviside import HeavisideConfig, seg_from_sdm
from .losses import one_hot_channels
from .metrics import evaluate
from .nn.checkpoint import CHECKPOINT_FORMAT, load_parameters, save_parameters
from .nn.unet import NetworkConfig
from .phantom import PhantomSpec, corrupt_slicewise, generate, inject_decoy
from .trainer import MODES, TrainCase, TrainConfig, evaluate_loss, infer, objective, train
from .volume import FORMAT_VERSION, LabelVolume, ScalarVolume, SdmVolume, read_nifti_subset, read_volume, write_volume

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

# contour levels and their colours for slice-dump: red, orange, yellow, green
CONTOURS = ((0.0, (255, 0, 0)), (0.1, (255, 165, 0)), (0.2, (255, 255, 0)), (0.3, (0, 200, 0)))


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(text.encode() if isinstance(text, str) else text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_any(path):
    """``(spacing, array)`` from a native ``.json`` volume or a ``.nii`` file."""
    p = Path(path)
    header, data = read_nifti_subset(p) if p.suffix in (".nii",) else read_volume(p)
    return header.spacing, data


def _labels(path, num_classes=None) -> LabelVolume:
    spacing, data = _read_any(path)
    if not np.issubdtype(data.dtype, np.integer):
        if not np.all(data == np.round(data)):
            raise DomainError(f"{path}: label volume holds non-integer values")
        data = data.astype(np.int64)
    if num_classes is None:
        num_classes = max(1, int(data.max()))
    return LabelVolume(data, spacing, num_classes)


def _scalar(path) -> ScalarVolume:
    spacing, data = _read_any(path)
    return ScalarVolume(data.astype(np.float64), spacing)


# -- subcommands


def cmd_edt(a):
    labels = _labels(a.input)
    if not 1 <= a.class_id <= labels.num_classes:
        raise DomainError(f"class {a.class_id} not in 1..{labels.num_classes}")
    opts = EdtOptions(use_spacing=not a.voxel_units, algorithm=a.algorithm)
    sdm = sdm_from_labels(labels, a.class_id, opts)
    data = sdm.data
    if a.normalize:
        data = normalize_sdm(data)[0].data
    write_volume(a.out, data, labels.spacing, "f32")
    _say(f"wrote {a.out} (class {a.class_id}, range {data.min():.4g}..{data.max():.4g})")


def cmd_convert(a):
    sdm = _scalar(a.sdm)
    cfg = HeavisideConfig(a.k)
    if a.hard:
        write_volume(a.out, (sdm.data < 0).astype(np.uint8), sdm.spacing, "u8")
    else:
        write_volume(a.out, seg_from_sdm(sdm.data, cfg), sdm.spacing, "f32")
    _say(f"wrote {a.out}")


def cmd_metrics(a):
    pred = _labels(a.pred, a.classes) if a.classes else _labels(a.pred)
    gt = _labels(a.gt, a.classes) if a.classes else _labels(a.gt)
    n = a.classes or max(pred.num_classes, gt.num_classes)
    report = evaluate(pred, gt, n)
    _write_text(a.out, report.to_csv())
    _say(f"wrote {a.out}: mean dice {report.mean_dice:.4f}, mean HD {report.mean_hd:.3f} mm")


def cmd_phantom(a):
    try:
        obj = json.loads(Path(a.spec).read_text())
    except json.JSONDecodeError as exc:
        raise DomainError(f"{a.spec}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise DomainError("phantom spec must be a JSON object")
    obj["seed"] = a.seed
    spec = PhantomSpec.from_json(json.dumps(obj))
    image, labels = generate(spec)
    image = inject_decoy(image, spec)
    sdm = sdm_volume(labels)
    if a.corrupt:
        labels = corrupt_slicewise(labels, a.corrupt, a.seed)
    prefix = str(a.out_prefix)
    write_volume(prefix + "_image", image.data, image.spacing, "f32")
    write_volume(prefix + "_labels", labels.data, labels.spacing, "u8")
    write_volume(prefix + "_sdm", sdm.data[0], sdm.spacing, "f32")
    _say(f"wrote {prefix}_image.json, {prefix}_labels.json, {prefix}_sdm.json")


def _load_cases(directory, num_classes):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"case directory {directory} does not exist")
    stems = sorted(p.name[: -len("_image.json")] for p in directory.glob("*_image.json"))
    if not stems:
        raise DomainError(f"no *_image.json cases in {directory}")
    cases = []
    for stem in stems:
        image = _scalar(directory / f"{stem}_image.json")
        labels = _labels(directory / f"{stem}_labels.json", num_classes)
        sdm_path = directory / f"{stem}_sdm.json"
        if sdm_path.exists() and labels.num_classes == 1:
            spacing, data = _read_any(sdm_path)
            if np.abs(data).max() > 1:
                raise DomainError(f"{sdm_path}: training targets must be normalized SDMs")
            gt = SdmVolume(data[None].astype(np.float64), spacing, normalized=True)
        else:
            gt = sdm_volume(labels)
        cases.append(TrainCase(image, labels, gt))
    return stems, cases


def _net_config(a, num_classes):
    return NetworkConfig(levels=a.net_levels, init_channels=a.init_channels, channel_cap=a.channel_cap,
                         num_classes=num_classes)


def cmd_train(a):
    tcfg = TrainConfig(mode=a.mode, epochs=a.epochs, seed=a.seed, lr0=a.lr0, lam=a.lam, k=a.k)
    stems, cases = _load_cases(a.cases, a.classes)
    n = a.classes or max(c.labels.num_classes for c in cases)
    net_cfg = _net_config(a, n)
    net_cfg.check_input(cases[0].image.dims)

    def progress(rec):
        if a.verbose:
            _say(f"epoch {rec.epoch:4d} lr {rec.lr:.3g} total {rec.total:.5f}")

    params, log = train(cases, net_cfg, tcfg, progress)
    out = Path(a.out)
    final_net = net_cfg.replace(head=tcfg.head, seed=tcfg.seed)
    config = {"network": final_net.to_dict(), "train": asdict(tcfg), "cases": stems}
    save_parameters(out / "params", params, final_net.to_dict())
    _write_text(out / "trainlog.csv", log.to_csv())
    _write_text(out / "config.json", json.dumps(config, indent=2) + "\n")
    _say(f"trained {len(cases)} case(s) for {tcfg.epochs} epochs; final total {log.records[-1].total:.5f}; wrote {out}")


def _load_checkpoint(path):
    path = Path(path)
    prefix = path / "params" if path.is_dir() else path
    arrays, cfg = load_parameters(prefix)
    if not cfg:
        raise DomainError(f"{prefix}.json carries no network configuration")
    return arrays, NetworkConfig(**cfg)


def cmd_infer(a):
    arrays, net_cfg = _load_checkpoint(a.ckpt)
    image = _scalar(a.image)
    net_cfg.check_input(image.dims)
    head, labels = infer(image, arrays, net_cfg, a.k)
    prefix = str(a.out_prefix)
    write_volume(prefix + "_labels", labels.data, labels.spacing, "u8")
    if isinstance(head, SdmVolume):
        vols, tag = head.volumes, "sdm"
    else:
        vols, tag = head, "prob"
    for c, v in enumerate(vols, start=1):
        suffix = f"_{tag}" if len(vols) == 1 else f"_{tag}_c{c}"
        write_volume(prefix + suffix, v.data, v.spacing, "f32")
    _say(f"wrote {prefix}_labels.json and {len(vols)} {tag} volume(s)")


def cmd_eval_loss(a):
    labels = _labels(a.labels, a.classes)
    n = labels.num_classes
    lcfg = TrainConfig(mode=a.mode, lam=a.lam, k=a.k)
    if a.gt_sdm:
        spacing, data = _read_any(a.gt_sdm)
        gt = SdmVolume(data[None].astype(np.float64), spacing, normalized=True)
    else:
        gt = sdm_volume(labels)
    if gt.num_classes != n:
        raise DomainError(f"ground-truth SDM has {gt.num_classes} classes, labels {n}")
    if a.ckpt:
        if not a.image:
            raise DomainError("--ckpt needs --image")
        arrays, net_cfg = _load_checkpoint(a.ckpt)
        case = TrainCase(_scalar(a.image), labels, gt)
        parts, total = evaluate_loss(case, arrays, net_cfg, lcfg)
    elif a.pred:
        _, pred = _read_any(a.pred)
        pred = pred.astype(np.float64)[None]
        if pred.shape != gt.data.shape:
            raise DomainError(f"prediction shape {pred.shape[1:]} does not match labels {labels.dims}")
        parts, total, _ = objective(a.mode, pred, gt.data, one_hot_channels(labels.data, n),
                                    HeavisideConfig(a.k), lcfg.loss_config())
    else:
        raise DomainError("give either --pred or --ckpt with --image")
    for key in ("dice_loss", "l1_loss", "product_loss"):
        val = parts[key]
        _say(f"{key:13s} {'-' if val is None else f'{val:.9g}'}")
    _say(f"{'total':13s} {total:.9g}")
    if a.out:
        _write_text(a.out, json.dumps({**parts, "total": total, "mode": a.mode}, indent=2) + "\n")


def _slice(vol, axis, index):
    ax = "xyz".index(axis)
    if not 0 <= index < vol.shape[ax]:
        raise DomainError(f"index {index} outside 0..{vol.shape[ax] - 1} on axis {axis}")
    sl = np.take(vol, index, axis=ax)
    # rows run along the second remaining axis, columns along the first
    return sl.T


def _contour(field, level):
    below = field < level
    edge = np.zeros_like(below)
    edge[:-1] |= below[:-1] != below[1:]
    edge[1:] |= below[:-1] != below[1:]
    edge[:, :-1] |= below[:, :-1] != below[:, 1:]
    edge[:, 1:] |= below[:, :-1] != below[:, 1:]
    return edge & below


def render_slice(background: np.ndarray, sdm: np.ndarray | None, scale: int = 1) -> np.ndarray:
    """RGB uint8 image: background in gray, SDM iso-contours in colour."""
    bg = np.asarray(background, dtype=np.float64)
    lo, hi = bg.min(), bg.max()
    gray = np.zeros_like(bg) if hi == lo else (bg - lo) / (hi - lo)
    rgb = np.repeat((gray * 255).round().astype(np.uint8)[..., None], 3, axis=-1)
    if sdm is not None:
        for level, colour in reversed(CONTOURS):
            rgb[_contour(sdm, level)] = colour
    if scale > 1:
        rgb = rgb.repeat(scale, axis=0).repeat(scale, axis=1)
    return rgb


def ppm_bytes(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def cmd_slice_dump(a):
    sdm = _scalar(a.input).data
    sdm_sl = _slice(sdm, a.axis, a.index)
    if a.image:
        img = _scalar(a.image).data
        if img.shape != sdm.shape:
            raise DomainError(f"image dims {img.shape} differ from SDM dims {sdm.shape}")
        background = _slice(img, a.axis, a.index)
    else:
        background = sdm_sl
    if a.scale < 1:
        raise DomainError("--scale must be >= 1")
    rgb = render_slice(background, None if a.no_contours else sdm_sl, a.scale)
    _write_text(a.out, ppm_bytes(rgb))
    _say(f"wrote {a.out} ({rgb.shape[1]}x{rgb.shape[0]})")


# -- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdmseg", description="Signed-distance-map segmentation toolkit.")
    p.add_argument("--version", action="version",
                   version=f"sdmseg {__version__} (volume format {FORMAT_VERSION}, checkpoint {CHECKPOINT_FORMAT})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("edt", help="signed distance map of one class")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--class", dest="class_id", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--normalize", action="store_true")
    s.add_argument("--voxel-units", action="store_true")
    s.add_argument("--algorithm", default="separable-exact", choices=("separable-exact", "vector-propagation"))
    s.set_defaults(func=cmd_edt)

    s = sub.add_parser("convert", help="SDM to probabilities or a hard mask")
    s.add_argument("--sdm", required=True)
    s.add_argument("--k", type=float, default=1500.0)
    s.add_argument("--out", required=True)
    s.add_argument("--hard", action="store_true")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("metrics", help="Dice, HD, HD95 and ASD per class")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--classes", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("phantom", help="synthetic image, labels and SDM")
    s.add_argument("--spec", required=True)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--corrupt", type=int, default=0, help="slice-wise label corruption magnitude (voxels)")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("train", help="train a network on a case directory")
    s.add_argument("--mode", choices=MODES, default="sdm-joint")
    s.add_argument("--cases", required=True)
    s.add_argument("--classes", type=int)
    s.add_argument("--net-levels", type=int, default=2)
    s.add_argument("--init-channels", type=int, default=4)
    s.add_argument("--channel-cap", type=int, default=384)
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--lr0", type=float, default=5e-4)
    s.add_argument("--lam", type=float, default=10.0)
    s.add_argument("--k", type=float, default=1500.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="segment an image with a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--k", type=float, default=1500.0)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval-loss", help="print every loss component for one case")
    s.add_argument("--labels", required=True)
    s.add_argument("--classes", type=int)
    s.add_argument("--gt-sdm")
    s.add_argument("--pred", help="predicted SDM (or probabilities for dice-only)")
    s.add_argument("--ckpt")
    s.add_argument("--image")
    s.add_argument("--mode", choices=MODES, default="sdm-joint")
    s.add_argument("--lam", type=float, default=10.0)
    s.add_argument("--k", type=float, default=1500.0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_loss)

    s = sub.add_parser("slice-dump", help="one slice as a PPM with SDM contours")
    s.add_argument("--in", dest="input", required=True, help="SDM volume")
    s.add_argument("--image", help="draw over this image instead of the SDM")
    s.add_argument("--axis", choices=("x", "y", "z"), default="z")
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--scale", type=int, default=1)
    s.add_argument("--no-contours", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_slice_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _say(str(exc))
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = lambda msg, cat, *rest, **kw: _say(f"warning: {msg}")
        try:
            args.func(args)
        except (DomainError, ConfigurationError, ValueError) as exc:
            _say(f"error: {exc}")
            return EXIT_INVALID
        except (VolumeIOError, OSError) as exc:
            _say(f"I/O error: {exc}")
            return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
