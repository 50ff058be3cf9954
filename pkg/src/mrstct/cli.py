"""Command-line entry point: ``mrstct <command> ...``.

Commands compose into the usual workflow::

    mrstct phantom --kind shepp_logan --size 128 --pixel-size 2 --out truth
    mrstct simulate --image truth --config configs/mrst2.json --out sino
    mrstct fbp --sino sino --like truth --out fbp
    mrstct learn --images train1 train2 --config configs/mrst2.json --out mrst2.model
    mrstct reconstruct --sino sino --model mrst2.model --config configs/mrst2.json \\
        --init fbp --out recon
    mrstct evaluate --reference truth --recon FBP=fbp MRST2=recon

Results go to files and stdout; progress and the resolved run configuration
go to stderr. Failures print one JSON line to stderr and exit nonzero.
"""
import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np
from threadpoolctl import threadpool_limits

from . import ctsim, io, metrics, mrst, recon
from .imaging import ConfigError, PatchConfig, extract_patches

log = logging.getLogger("mrstct")

EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_FORMAT = 5
EXIT_NUMERIC = 6

_pos_int = {"type": "integer", "minimum": 1}
_nonneg_list = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}


def _section(props):
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = _section({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "patch": _section({"side": _pos_int, "stride": _pos_int}),
    "geometry": _section({
        "n_angles": _pos_int,
        "n_detectors": {"type": ["integer", "null"], "minimum": 1},
        "detector_spacing": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }),
    "noise": _section({
        "incident_photons": {"type": ["number", "string"]},
        "seed": {"type": "integer", "minimum": 0},
    }),
    "learn": _section({
        "thresholds": _nonneg_list,
        "iterations": _pos_int,
        "n_patches": {"type": ["integer", "null"], "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
    }),
    "recon": _section({
        "method": {"enum": ["mrst", "st"]},
        "beta": {"type": "number", "minimum": 0},
        "gammas": _nonneg_list,
        "outer_iters": _pos_int,
        "inner_iters": _pos_int,
        "subsets": _pos_int,
        "alpha": {"type": "number", "exclusiveMinimum": 1, "exclusiveMaximum": 2},
        "rho_min": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    }),
})

DEFAULTS = {
    "patch": {"side": 8, "stride": 1},
    "geometry": {"n_angles": 180, "n_detectors": None, "detector_spacing": None},
    "noise": {"incident_photons": 1e4, "seed": None},
    "learn": {"thresholds": [40.0, 20.0], "iterations": 200, "n_patches": 20000, "seed": 0},
    "recon": {"method": "mrst", "beta": 1e-5, "gammas": [40.0, 20.0], "outer_iters": 200,
              "inner_iters": 2, "subsets": 4, "alpha": 1.999, "rho_min": 1e-2},
}


class CliError(Exception):
    def __init__(self, kind, code, message):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def _apply_override(cfg, item):
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise CliError("config", EXIT_CONFIG, f"override {item!r} is not key.path=value")
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise CliError("config", EXIT_CONFIG, f"override {key!r} descends into a scalar")
    node[parts[-1]] = val


def load_config(path=None, overrides=()):
    """Read, override and validate a run configuration; returns the merged dict.

    Every schema violation is reported in one :class:`CliError`, each with its
    key path.
    """
    user = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise CliError("missing", EXIT_MISSING, f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError("config", EXIT_CONFIG, f"{path}: invalid JSON: {exc}") from None
    for item in overrides:
        _apply_override(user, item)
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(user), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = ["/".join(str(k) for k in e.absolute_path) or "<root>" for e in errors]
        raise CliError("config", EXIT_CONFIG,
                       "; ".join(f"{m}: {e.message}" for m, e in zip(msgs, errors)))
    cfg = _merge(DEFAULTS, user)
    photons = cfg["noise"]["incident_photons"]
    if isinstance(photons, str):
        if photons.lower() not in ("inf", "infinity"):
            raise CliError("config", EXIT_CONFIG,
                           "noise/incident_photons: string value must be 'inf'")
        cfg["noise"]["incident_photons"] = float("inf")
    elif photons <= 0:
        raise CliError("config", EXIT_CONFIG, "noise/incident_photons: must be positive")
    return cfg


def _patch_config(cfg):
    return PatchConfig(cfg["patch"]["side"], cfg["patch"]["stride"])


def geometry_for(cfg, img):
    g = cfg["geometry"]
    spacing = g["detector_spacing"] or img.pixel_size
    n_det = g["n_detectors"]
    if n_det is None:
        n_det = ctsim.Geometry.covering(img.width, img.height, spacing, 1).n_detectors
    return ctsim.Geometry(g["n_angles"], n_det, spacing)


def recon_config(cfg):
    r = cfg["recon"]
    return recon.ReconConfig(beta=r["beta"], gammas=r["gammas"], outer_iters=r["outer_iters"],
                             inner_iters=r["inner_iters"], subsets=r["subsets"],
                             alpha=r["alpha"], rho_min=r["rho_min"], patch=_patch_config(cfg))


def _header(command, **fields):
    log.info("run %s", json.dumps({"command": command, **fields}, sort_keys=True, default=str))


def _need(path):
    p = Path(path)
    if not (p.exists() or p.with_suffix(".hdr").exists()):
        raise CliError("missing", EXIT_MISSING, f"input not found: {path}")
    return p


# ---------------------------------------------------------------- commands

def cmd_phantom(args):
    _header("phantom", kind=args.kind, width=args.width or args.size,
            height=args.height or args.size, pixel_size=args.pixel_size, out=args.out)
    img = ctsim.make_phantom(args.kind, args.width or args.size, args.height or args.size,
                             args.pixel_size)
    io.save_image(args.out, img)


def cmd_simulate(args):
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg["noise"]["seed"] = args.seed
    if args.i0 is not None:
        cfg["noise"]["incident_photons"] = args.i0
    if cfg["noise"]["seed"] is None:
        raise CliError("config", EXIT_CONFIG, "noise/seed: simulate needs --seed or noise.seed")
    img = io.load_image(_need(args.image))
    geo = geometry_for(cfg, img)
    _header("simulate", image=str(args.image), geometry=geo.__dict__, noise=cfg["noise"],
            out=args.out)
    sino = ctsim.simulate_lowdose(img, geo, cfg["noise"]["incident_photons"],
                                  cfg["noise"]["seed"])
    io.save_sinogram(args.out, sino)


def _grid(args):
    if args.like is not None:
        ref = io.load_image(_need(args.like))
        return ref.width, ref.height, ref.pixel_size
    if args.size is None:
        raise CliError("config", EXIT_CONFIG, "give --like or --size")
    return args.size, args.size, args.pixel_size


def cmd_fbp(args):
    sino = io.load_sinogram(_need(args.sino))
    w, h, ps = _grid(args)
    _header("fbp", sino=str(args.sino), width=w, height=h, pixel_size=ps, out=args.out)
    io.save_image(args.out, ctsim.fbp(sino, w, h, ps))


def cmd_learn(args):
    cfg = load_config(args.config, args.set)
    lc = cfg["learn"]
    patch = _patch_config(cfg)
    _header("learn", images=[str(p) for p in args.images], patch=cfg["patch"], learn=lc,
            out=args.out)
    data = np.concatenate(
        [extract_patches(io.load_image(_need(p)), patch) for p in args.images], axis=1)
    n = lc["n_patches"]
    if n is not None and n < data.shape[1]:
        rng = np.random.default_rng(lc["seed"])
        data = data[:, np.sort(rng.choice(data.shape[1], n, replace=False))]
    config = mrst.LearnConfig(lc["iterations"], lc["thresholds"], patch, lc["seed"])
    model, _, trace = mrst.learn(data, config)
    log.info("learned %d-layer model on %d patches; objective %.6g -> %.6g",
             model.layers, data.shape[1], trace[0], trace[-1])
    io.save_model(args.out, model)


def cmd_reconstruct(args):
    cfg = load_config(args.config, args.set)
    rc = recon_config(cfg)
    sino = io.load_sinogram(_need(args.sino))
    model = io.load_model(_need(args.model))
    init = io.load_image(_need(args.init))
    _header("reconstruct", sino=str(args.sino), model=str(args.model), init=str(args.init),
            patch=cfg["patch"], recon=cfg["recon"], out=args.out)
    if cfg["recon"]["method"] == "st":
        if model.layers != 1:
            raise CliError("config", EXIT_CONFIG,
                           f"recon/method: 'st' needs a 1-layer model, got {model.layers}")
        img = recon.reconstruct_single_layer(sino, model.transforms[0], rc, init)
    else:
        ref = io.load_image(_need(args.reference)) if args.reference else None
        roi = metrics.circular_roi(init.width, init.height) if ref is not None else None
        stream = open(args.log, "w") if args.log else None
        try:
            img = recon.reconstruct(sino, model, rc, init, reference=ref, roi=roi,
                                    log_stream=stream).image
        finally:
            if stream is not None:
                stream.close()
    io.save_image(args.out, img)


def evaluate_table(reference, recons, roi):
    """Rows of RMSE (HU), PSNR (dB) and SSIM, one column per reconstruction."""
    names = list(recons)
    rows = [["metric"] + names]
    for label, fn, fmt in (("RMSE", metrics.rmse, "{:.2f}"), ("PSNR", metrics.psnr, "{:.2f}"),
                           ("SSIM", metrics.ssim, "{:.4f}")):
        rows.append([label] + [fmt.format(fn(reference, recons[n], roi)) for n in names])
    return "\n".join("\t".join(r) for r in rows) + "\n"


def cmd_evaluate(args):
    ref = io.load_image(_need(args.reference))
    recons = {}
    for item in args.recon:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        recons[name] = io.load_image(_need(path))
    _header("evaluate", reference=str(args.reference), recon=args.recon, roi=args.roi)
    roi = metrics.circular_roi(ref.width, ref.height, args.roi)
    table = evaluate_table(ref, recons, roi)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table)


# ------------------------------------------------------------------ parser

def build_parser():
    parser = argparse.ArgumentParser(prog="mrstct", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. recon.beta=2e-5")

    p = sub.add_parser("phantom", help="write a synthetic phantom")
    p.add_argument("--kind", choices=["shepp_logan", "disk", "uniform"], default="shepp_logan")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--pixel-size", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("simulate", help="simulate low-dose transmission data")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--i0", type=float, help="incident photons per ray (inf: noiseless)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    with_config(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fbp", help="filtered backprojection")
    p.add_argument("--sino", type=Path, required=True)
    p.add_argument("--like", type=Path, help="image whose grid to use")
    p.add_argument("--size", type=int)
    p.add_argument("--pixel-size", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("learn", help="learn an MRST model from training images")
    p.add_argument("--images", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    with_config(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("reconstruct", help="PWLS reconstruction with a learned model")
    p.add_argument("--sino", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--init", type=Path, required=True)
    p.add_argument("--reference", type=Path, help="ground truth for the RMSE trace")
    p.add_argument("--log", type=Path, help="write per-iteration JSON lines here")
    p.add_argument("--out", type=Path, required=True)
    with_config(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="RMSE/PSNR/SSIM table over a circular ROI")
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--recon", nargs="+", required=True, metavar="[NAME=]PATH")
    p.add_argument("--roi", type=float, default=1.0, help="ROI radius fraction")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(name)s %(levelname)s %(message)s", stream=sys.stderr,
                        force=True)
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except CliError as exc:
        return _fail(exc.kind, exc.code, str(exc))
    except io.FormatError as exc:
        return _fail("format", EXIT_FORMAT, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing", EXIT_MISSING, str(exc))
    except ConfigError as exc:
        return _fail("config", EXIT_CONFIG, str(exc))
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        return _fail("numeric", EXIT_NUMERIC, str(exc))
    return 0


def _fail(kind, code, message):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message}) + "\n")
    return code


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
