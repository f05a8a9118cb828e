"""Command-line entry point: ``smar {simulate,train,infer,ablate,eval,export}``.

Every command reads an optional JSON run config (``--config``).  Any config
key can be overridden with a dotted flag, e.g. ``--train.lr 1e-3`` or
``--simulation.eval_cases=20``.  Failures exit nonzero and print one JSON
line ``{"error": <kind>, "message": <text>}`` on stderr.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .core import PRESETS, Geometry, read_json, read_tensor_dict, write_json, write_tensor_container
from .dataset import SimConfig, load_dataset, simulate_dataset
from .errors import ConfigError, SmarError
from .metrics import evaluate_cases
from .nn import load_model, save_model
from .pipeline import PIPELINE_MODES, run_mar
from .train import MODES, MaskBank, TrainConfig, train, write_history

log = logging.getLogger("smar")

ABLATION_ROWS = ("sinonet", "sinonet+fbp", "joint", "joint+mtr")

DEFAULT_CONFIG = {
    "seed": 0,
    "geometry": "desk-parallel",
    "mode": "joint+mtr",
    "simulation": SimConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "paths": {"dataset": "data", "checkpoints": "checkpoints", "reports": "reports"},
    "export": {"window_center": 50.0, "window_width": 380.0},
    "threshold_hu": 2000.0,
}


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``--a.b=value`` / ``--a.b value`` pairs to a nested config dict."""
    cfg = copy.deepcopy(cfg)
    i = 0
    while i < len(overrides):
        tok = overrides[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(overrides):
                raise ConfigError(f"missing value for --{key}")
            i += 1
            value = overrides[i]
        parts = key.replace("-", "_").split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(value)
        i += 1
    return cfg


def load_config(path: str | None, overrides: list[str]) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        user = read_json(path)
        for k, v in user.items():
            if isinstance(v, dict) and isinstance(cfg.get(k), dict):
                cfg[k].update(v)
            else:
                cfg[k] = v
    return apply_overrides(cfg, overrides)


def geometry_from(cfg: dict) -> Geometry:
    g = cfg["geometry"]
    if isinstance(g, str):
        if g not in PRESETS:
            raise ConfigError(f"unknown geometry preset {g!r}; choose from {sorted(PRESETS)}")
        return PRESETS[g]()
    return Geometry.from_dict(g)


def _dataclass_from(cls, d: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def checkpoint_name(mode: str) -> str:
    # joint and joint+mtr share one trained model
    return "joint" if mode == "joint+mtr" else mode


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict, out: str | None = None) -> dict:
    sim = _dataclass_from(SimConfig, {**cfg["simulation"], "seed": cfg["seed"]})
    target = out or cfg["paths"]["dataset"]
    manifest = simulate_dataset(sim, geometry_from(cfg), target)
    log.info("wrote dataset to %s (%d eval cases)", target, len(manifest["eval_cases"]))
    return manifest


def cmd_train(cfg: dict, out: str | None = None) -> Path:
    mode = cfg["mode"]
    if mode not in MODES:
        raise ConfigError(f"unknown ablation mode {mode!r}; choose from {list(MODES)}")
    ds = load_dataset(cfg["paths"]["dataset"])
    tcfg = dict(cfg["train"])
    tcfg["use_fbp_loss"], tcfg["use_imgnet"] = MODES[mode]
    tcfg["seed"] = cfg["seed"]
    tc = _dataclass_from(TrainConfig, tcfg)
    out_dir = Path(out or cfg["paths"]["checkpoints"])
    out_dir.mkdir(parents=True, exist_ok=True)
    name = checkpoint_name(mode)
    log_path = out_dir / f"{name}.loss.jsonl"
    with open(log_path, "w") as fh:
        result = train(ds.sinograms, MaskBank(ds.train_masks, ds.geometry), ds.geometry, tc,
                       on_iteration=lambda rec: (fh.write(json.dumps(rec) + "\n"), fh.flush()))
    ckpt = out_dir / f"{name}.smar"
    save_model(ckpt, result.sinonet, result.imgnet,
               meta={"mode": mode, "geometry": ds.geometry.to_dict(), "train": tc.to_dict()})
    log.info("wrote %s", ckpt)
    return ckpt


def _load_input(path: str):
    tensors = read_tensor_dict(path)
    if "sinogram" in tensors:
        return tensors["sinogram"], None
    if "image_hu" in tensors:
        return None, tensors["image_hu"]
    raise ConfigError(f"{path}: expected a 'sinogram' or 'image_hu' tensor")


def cmd_infer(cfg: dict, input_path: str, checkpoint: str | None, out: str) -> Path:
    mode = cfg["mode"]
    if mode not in PIPELINE_MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {list(PIPELINE_MODES)}")
    sino, image = _load_input(input_path)
    sinonet = imgnet = None
    geometry = None
    if checkpoint:
        ck = load_model(checkpoint)
        sinonet, imgnet = ck.sinonet, ck.imgnet
        if "geometry" in ck.meta:
            geometry = Geometry.from_dict(ck.meta["geometry"])
    geometry = geometry or geometry_from(cfg)
    res = run_mar(geometry, mode, sinogram=sino, image_hu=image, sinonet=sinonet, imgnet=imgnet,
                  threshold_hu=cfg["threshold_hu"])
    tensors = [("image_hu", res.image_hu), ("mask", res.mask.astype(np.float32))]
    if res.s_corr is not None:
        tensors.append(("s_corr", res.s_corr))
    write_tensor_container(out, tensors)
    return Path(out)


def _pipeline(geometry, mode, ck, threshold):
    def run(case):
        return run_mar(geometry, mode, sinogram=case.s_ma,
                       sinonet=ck.sinonet if ck else None, imgnet=ck.imgnet if ck else None,
                       threshold_hu=threshold).image_hu
    return run


def cmd_eval(cfg: dict, checkpoint: str | None, out: str | None = None) -> dict:
    mode = cfg["mode"]
    ds = load_dataset(cfg["paths"]["dataset"])
    if not ds.cases:
        raise ConfigError("dataset has no evaluation cases")
    ck = load_model(checkpoint) if checkpoint else None
    report_path = Path(out or Path(cfg["paths"]["reports"]) / f"eval-{mode}.json")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    rep = evaluate_cases(ds.cases, _pipeline(ds.geometry, mode, ck, cfg["threshold_hu"]), report_path)
    return {"mode": mode, **rep.to_dict()}


def cmd_ablate(cfg: dict, checkpoint_dir: str | None = None, out: str | None = None) -> dict:
    """Evaluate the four ablation rows (plus the LI baseline) over the eval set."""
    ds = load_dataset(cfg["paths"]["dataset"])
    if not ds.cases:
        raise ConfigError("dataset has no evaluation cases")
    ck_dir = Path(checkpoint_dir or cfg["paths"]["checkpoints"])
    rows, mtr_ok = [], True
    for mode in ("li",) + ABLATION_ROWS:
        ck = None
        if mode != "li":
            path = ck_dir / f"{checkpoint_name(mode)}.smar"
            if not path.exists():
                raise ConfigError(f"missing checkpoint {path}; run `smar train --mode {mode}` first")
            ck = load_model(path)
        results = {}

        def run(case, mode=mode, ck=ck):
            res = run_mar(ds.geometry, mode, sinogram=case.s_ma, sinonet=ck and ck.sinonet,
                          imgnet=ck and ck.imgnet, threshold_hu=cfg["threshold_hu"])
            results[case.id] = res
            return res.image_hu

        rep = evaluate_cases(ds.cases, run).to_dict()
        if mode == "joint+mtr":
            for res in results.values():
                if res.s_corr is not None:
                    untraced = ~res.trace
                    mtr_ok &= bool(np.array_equal(res.s_corr[untraced], res.s_li[untraced]))
        rows.append({"mode": mode, "mean_rmse_hu": rep["mean_rmse_hu"], "std_rmse_hu": rep["std_rmse_hu"],
                     "mean_ssim": rep["mean_ssim"], "cases": rep["cases"]})
    report = {
        "baseline": rows[0],
        "rows": rows[1:],
        "mtr_untraced_bins_preserved": mtr_ok,
        "num_cases": len(ds.cases),
    }
    path = Path(out or Path(cfg["paths"]["reports"]) / "ablation.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_json(path, report)
    return report


def window_to_gray(image_hu: np.ndarray, center: float, width: float) -> np.ndarray:
    """clamp((hu - (center - width/2)) / width) * 255, rounded half up."""
    if not width > 0:
        raise ValueError("window width must be positive")
    lo = center - width / 2.0
    v = np.clip((np.asarray(image_hu, np.float64) - lo) / width, 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path: str | Path, gray: np.ndarray) -> None:
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(gray, np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], np.uint8, count=w * h).reshape(h, w)


def cmd_export(image_path: str, window_center: float, window_width: float, out: str) -> Path:
    tensors = read_tensor_dict(image_path)
    image = tensors.get("image_hu")
    if image is None:
        image = next(iter(tensors.values()), None)
    if image is None or image.ndim != 2:
        raise ConfigError(f"{image_path}: no 2-D image tensor")
    write_pgm(out, window_to_gray(image, window_center, window_width))
    return Path(out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="global seed (u64)")
    common.add_argument("--mode", help="ablation / pipeline mode")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--dataset", help="dataset directory (overrides paths.dataset)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="generate phantoms, masks and eval cases")
    sub.add_parser("train", parents=[common], help="self-supervised training for one ablation mode")
    p = sub.add_parser("infer", parents=[common], help="run the MAR pipeline on one input")
    p.add_argument("--input", required=True, help="SMAR file with 'sinogram' or 'image_hu'")
    p.add_argument("--checkpoint")
    p = sub.add_parser("eval", parents=[common], help="score one mode on the eval cases")
    p.add_argument("--checkpoint")
    p = sub.add_parser("ablate", parents=[common], help="four-row ablation report")
    p.add_argument("--checkpoints", help="directory holding <mode>.smar checkpoints")
    p = sub.add_parser("export", parents=[common], help="window an image into a PGM")
    p.add_argument("--input", required=True)
    p.add_argument("--window-center", type=float)
    p.add_argument("--window-width", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, rest)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.mode is not None:
            cfg["mode"] = args.mode
        if args.dataset is not None:
            cfg["paths"]["dataset"] = args.dataset
        cmd = args.command
        if cmd == "simulate":
            result = {"eval_cases": len(cmd_simulate(cfg, args.out)["eval_cases"])}
        elif cmd == "train":
            result = {"checkpoint": str(cmd_train(cfg, args.out))}
        elif cmd == "infer":
            if not args.out:
                raise ConfigError("infer needs --out")
            result = {"output": str(cmd_infer(cfg, args.input, args.checkpoint, args.out))}
        elif cmd == "eval":
            rep = cmd_eval(cfg, args.checkpoint, args.out)
            result = {k: rep[k] for k in ("mode", "mean_rmse_hu", "std_rmse_hu", "mean_ssim")}
        elif cmd == "ablate":
            rep = cmd_ablate(cfg, args.checkpoints, args.out)
            result = {r["mode"]: r["mean_rmse_hu"] for r in [rep["baseline"]] + rep["rows"]}
        else:
            if not args.out:
                raise ConfigError("export needs --out")
            center = args.window_center if args.window_center is not None else cfg["export"]["window_center"]
            width = args.window_width if args.window_width is not None else cfg["export"]["window_width"]
            result = {"output": str(cmd_export(args.input, center, width, args.out))}
    except (SmarError, OSError, ValueError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
