"""Command-line entry point: ``nlps render|solve|eval|init-sweep``.

Every command takes a JSON run configuration.  A ``manifest.json`` written by
an earlier run is accepted in place of a config and reproduces that run.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 solver
divergence, 5 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io as nio
from . import metrics
from . import neural_surface as ns
from . import optimizer as opt
from . import photometric as ph
from . import synth
from .errors import ConfigError, DivergenceError
from .geometry import CameraModel

log = logging.getLogger("nlps")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_OTHER = 0, 2, 3, 4, 5

_KNOWN_KEYS = {
    "camera", "lights", "lights_file", "scene", "noise_sigma", "dataset", "architecture",
    "schedule", "seed", "z0", "z0_list", "derivatives", "detach_albedo", "batch_size",
    "compute_dtype", "shadow_ratio", "output_dir", "estimate_dir", "gt_dir",
}
_DTYPES = {"float32": np.float32, "float64": np.float64}


# ---------------------------------------------------------------- config

def load_config(path) -> dict:
    """Read a run config (or a manifest) and resolve relative paths against its folder."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        cfg = nio.read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if "config" in cfg and "config_sha256" in cfg:
        cfg = cfg["config"]
    cfg = dict(cfg)
    for key in ("lights_file", "dataset", "estimate_dir", "gt_dir"):
        if isinstance(cfg.get(key), str) and not os.path.isabs(cfg[key]):
            cfg[key] = str((path.parent / cfg[key]).resolve())
    return cfg


def validate_config(cfg: dict, needs_input=True) -> dict:
    """Check field types, mutual exclusion and referenced paths; fill defaults."""
    unknown = set(cfg) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    cfg = dict(cfg)
    if needs_input:
        if ("scene" in cfg) == ("dataset" in cfg):
            raise ConfigError("exactly one of 'scene' and 'dataset' must be given")
        if "dataset" in cfg and not Path(cfg["dataset"]).is_dir():
            raise ConfigError(f"dataset directory not found: {cfg['dataset']}")
        if "scene" in cfg:
            if "camera" not in cfg:
                raise ConfigError("a synthetic scene needs a 'camera'")
            if "lights" not in cfg and "lights_file" not in cfg:
                raise ConfigError("a synthetic scene needs 'lights' or 'lights_file'")
    if "lights" in cfg and "lights_file" in cfg:
        raise ConfigError("'lights' and 'lights_file' are mutually exclusive")
    if "lights_file" in cfg and not Path(cfg["lights_file"]).is_file():
        raise ConfigError(f"lights file not found: {cfg['lights_file']}")
    if cfg.setdefault("derivatives", "analytic") not in ("analytic", "finite"):
        raise ConfigError(f"derivatives must be 'analytic' or 'finite', got {cfg['derivatives']!r}")
    if cfg.setdefault("compute_dtype", "float64") not in _DTYPES:
        raise ConfigError(f"compute_dtype must be one of {sorted(_DTYPES)}")
    cfg.setdefault("seed", 0)
    cfg.setdefault("z0", 3.0)
    cfg.setdefault("detach_albedo", False)
    cfg.setdefault("shadow_ratio", ph.SHADOW_RATIO)
    cfg.setdefault("output_dir", "nlps_out")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        cfg["architecture"] = ns.ArchitectureSpec.from_dict(cfg.get("architecture", {})).to_dict()
        cfg["schedule"] = opt.Schedule.from_dict(cfg.get("schedule", {})).to_dict()
        if "camera" in cfg:
            _camera(cfg["camera"])
        if "lights" in cfg:
            _lights_from_spec(cfg["lights"])
        if "scene" in cfg:
            synth.scene_from_dict(cfg["scene"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def _camera(spec: dict) -> CameraModel:
    if "focal_mm" in spec:
        cam = CameraModel.from_focal_mm(spec["focal_mm"], spec["sensor_width_mm"],
                                        int(spec["width"]), int(spec["height"]))
        if "principal_point" in spec:
            cam = CameraModel(cam.f_pixels, cam.width, cam.height, tuple(spec["principal_point"]))
        return cam
    return CameraModel.from_dict(spec)


def _lights_from_spec(spec):
    if isinstance(spec, list):
        return [ph.PointLight.from_dict(d) for d in spec]
    if isinstance(spec, dict) and "grid" in spec:
        return synth.make_grid_rig(**spec["grid"])
    raise ConfigError("'lights' must be a list of lights or {'grid': {...}}")


def _config_lights(cfg):
    if "lights_file" in cfg:
        return nio.read_lights(cfg["lights_file"])
    if "lights" in cfg:
        return _lights_from_spec(cfg["lights"])
    return None


# ---------------------------------------------------------------- commands

def cmd_render(cfg: dict, out=None) -> Path:
    """Render the configured synthetic scene into a dataset directory."""
    cfg = validate_config(cfg)
    if "scene" not in cfg:
        raise ConfigError("render needs a 'scene'")
    out = nio.ensure_writable(out or cfg["output_dir"])
    cam = _camera(cfg["camera"])
    lights = _config_lights(cfg)
    scene = synth.scene_from_dict(cfg["scene"])
    stack, gt = synth.render(scene, lights, cam, noise_sigma=float(cfg.get("noise_sigma", 0.0)),
                             seed=cfg["seed"])
    nio.write_dataset(out, stack, lights, cam, gt)
    nio.write_manifest(out, cfg, {"command": "render"})
    return out


def _load_inputs(cfg, out):
    if "scene" in cfg:
        ds = cmd_render(cfg, out / "dataset")
    else:
        ds = Path(cfg["dataset"])
    stack, lights, cam, gt = nio.read_dataset(ds)
    override = _config_lights(cfg) if "dataset" in cfg else None
    if override is not None:
        lights = override
    if "camera" in cfg and "dataset" in cfg:
        cam = _camera(cfg["camera"])
    return stack, lights, cam, gt


def _solve_into(cfg, stack, lights, cam, gt, out: Path, z0: float):
    arch = ns.ArchitectureSpec.from_dict(cfg["architecture"])
    schedule = opt.Schedule.from_dict(cfg["schedule"])
    masked = ph.shadow_mask(stack, float(cfg["shadow_ratio"]))
    try:
        res = opt.solve(
            masked, lights, cam, arch, schedule, cfg["seed"], z0=z0,
            derivatives=cfg["derivatives"], detach_albedo=bool(cfg["detach_albedo"]),
            batch_size=cfg.get("batch_size"), dtype=_DTYPES[cfg["compute_dtype"]],
        )
    except DivergenceError as exc:
        if exc.checkpoint is not None:
            nio.ensure_writable(out)
            exc.checkpoint.save(out / "checkpoint_last_good.bin")
        raise
    nio.write_maps(out, res.maps)
    nio.write_loss_csv(out / "loss.csv", res.history)
    res.checkpoint.save(out / "checkpoint.bin")
    summary = {"final_loss": res.final_loss, "iterations": res.iterations,
               "converged": res.converged, "z0": z0}
    report = None
    if gt is not None:
        report = metrics.evaluate(res.maps, gt)
        nio.write_json(out / "report.json", report.to_dict())
        report.save_maps(out / "angle_error.png", out / "depth_error.png")
        summary.update(report.to_dict())
    nio.write_json(out / "summary.json", summary)
    return res, report


def cmd_solve(cfg: dict, out=None) -> dict:
    """Solve a dataset (rendering it first for synthetic configs) and write all outputs."""
    cfg = validate_config(cfg)
    out = nio.ensure_writable(out or cfg["output_dir"])
    stack, lights, cam, gt = _load_inputs(cfg, out)
    res, report = _solve_into(cfg, stack, lights, cam, gt, out, float(cfg["z0"]))
    nio.write_manifest(out, cfg, {"command": "solve"})
    log.info("solve finished: loss %.3e after %d iterations", res.final_loss, res.iterations)
    return nio.read_json(out / "summary.json")


def cmd_eval(estimate_dir, gt_dir, out=None) -> metrics.EvalReport:
    """Compare the maps in ``estimate_dir`` against the ground truth in ``gt_dir``."""
    estimate_dir, gt_dir = Path(estimate_dir), Path(gt_dir)
    est = nio.read_maps(estimate_dir)
    prefix = "gt_" if (gt_dir / "gt_depth.pfm").exists() else ""
    gmask = nio.read_pfm(gt_dir / "mask.pfm") > 0.5 if (gt_dir / "mask.pfm").exists() else None
    gt = nio.read_maps(gt_dir, prefix=prefix, mask=gmask)
    report = metrics.evaluate(est, gt)
    out = nio.ensure_writable(out or estimate_dir)
    nio.write_json(out / "report.json", report.to_dict())
    report.save_maps(out / "angle_error.png", out / "depth_error.png")
    return report


def cmd_init_sweep(cfg: dict, out=None) -> list[dict]:
    """Solve once per initial depth in ``z0_list`` with a shared seed; tabulate and plot."""
    cfg = validate_config(cfg)
    z0s = cfg.get("z0_list")
    if not isinstance(z0s, list) or len(z0s) < 2:
        raise ConfigError("init-sweep needs 'z0_list' with at least two values")
    out = nio.ensure_writable(out or cfg["output_dir"])
    stack, lights, cam, gt = _load_inputs(cfg, out)
    rows = []
    for i, z0 in enumerate(z0s):
        sub = out / f"z0_{i:02d}"
        res, report = _solve_into(cfg, stack, lights, cam, gt, sub, float(z0))
        row = {"z0": float(z0), "final_loss": res.final_loss, "iterations": res.iterations}
        if report is not None:
            row.update(mange_deg=report.mange_deg, mabse_m=report.mabse)
        rows.append(row)
    fields = list(rows[0])
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        wr.writeheader()
        wr.writerows(rows)
    if gt is not None:
        _plot_sweep(rows, out / "sweep.png")
    nio.write_manifest(out, cfg, {"command": "init-sweep"})
    return rows


def _plot_sweep(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    z0 = [r["z0"] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3))
    a1.plot(z0, [r["mange_deg"] for r in rows], "o-")
    a1.set_xlabel("initial depth z0 (m)")
    a1.set_ylabel("MAngE (deg)")
    a2.plot(z0, [1000 * r["mabse_m"] for r in rows], "o-")
    a2.set_xlabel("initial depth z0 (m)")
    a2.set_ylabel("MAbsE (mm)")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlps", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("render", "solve", "eval", "init-sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "eval", help="run config or manifest JSON")
        sp.add_argument("--derivatives", choices=["analytic", "finite"])
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="BLAS threads (default: $NLPS_THREADS)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            sp.add_argument("--estimate", help="directory with depth/normal PFMs")
            sp.add_argument("--gt", help="directory with ground-truth PFMs")
    return parser


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("NLPS_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"NLPS_THREADS must be an integer, got {env!r}") from None
    return None


def _run(args) -> None:
    cfg = load_config(args.config) if args.config else {}
    if args.derivatives:
        cfg["derivatives"] = args.derivatives
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out:
        cfg["output_dir"] = str(Path(args.out).resolve())
    if args.command == "render":
        print(cmd_render(cfg))
    elif args.command == "solve":
        print(json.dumps(cmd_solve(cfg), indent=2))
    elif args.command == "init-sweep":
        for row in cmd_init_sweep(cfg):
            print(json.dumps(row))
    else:
        est = args.estimate or cfg.get("estimate_dir")
        gt = args.gt or cfg.get("gt_dir")
        if not est or not gt:
            raise ConfigError("eval needs --estimate and --gt (or estimate_dir/gt_dir)")
        for d in (est, gt):
            if not Path(d).is_dir():
                raise ConfigError(f"directory not found: {d}")
        print(cmd_eval(est, gt, args.out).to_json())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        n = _threads(args)
        if n is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=n):
                _run(args)
        else:
            _run(args)
    except ConfigError as exc:
        print(f"nlps: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"nlps: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"nlps: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        print(f"nlps: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
