"""Command-line pipeline: mask, fit, maps, zmap, score, simulate.

Data travels through files only; progress and summaries go to stderr. Exit
codes: 0 success, 2 input/validation error, 3 numerical failure. Options may
come from a key=value config file (`--config`); explicit flags win.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import (
    ConditioningError,
    DomainError,
    FormatError,
    ValidationError,
    VolnormError,
)
from .estimation import CovariateRecord, fit_grid
from .geometry import build_grid, build_mask
from .interpolation import MODE_SUM_TO_ONE, MODE_SUM_TO_ZERO
from .normative import (
    ZMap,
    age_effect_map,
    parameter_maps,
    predict_mean,
    score_cohort,
    subject_zmap,
    summarize_scores,
)
from .synthesis import SyntheticSpec, generate_cohort, parse_spec_file
from . import io as vio

_SEX_FLAGS = {"F": 0, "M": 1, "0": 0, "1": 1}

# Hard defaults, overridable by config file, overridable by flags.
_DEFAULTS = {
    "sd": 2.0,
    "threshold": 0.5,
    "spacing": 8.0,
    "bandwidth": None,
    "mode": MODE_SUM_TO_ZERO,
    "q": 0.9999,
    "jobs": 1,
    "seed": 0,
}
_CONFIG_TYPES = {
    "sd": float,
    "threshold": float,
    "spacing": float,
    "bandwidth": float,
    "mode": str,
    "q": float,
    "jobs": int,
    "seed": int,
}


def _load_config(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in _CONFIG_TYPES:
                raise ValidationError(f"{path}:{lineno}: unknown option {key!r}")
            try:
                values[key] = _CONFIG_TYPES[key](raw)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: bad value for {key}: {raw!r}")
    return values


def _resolve(args, name):
    value = getattr(args, name, None)
    if value is not None:
        return value
    config = getattr(args, "_config_values", {})
    if name in config:
        return config[name]
    return _DEFAULTS[name]


def _progress(message: str) -> None:
    print(message, file=sys.stderr)


def _parse_sex(raw: str) -> int:
    if raw not in _SEX_FLAGS:
        raise ValidationError(f"sex must be F, M, 0 or 1, got {raw!r}")
    return _SEX_FLAGS[raw]


def _cmd_mask(args) -> int:
    template = vio.read_volume(args.template)
    mask = build_mask(template, _resolve(args, "sd"), _resolve(args, "threshold"))
    vio.write_mask(mask, args.out)
    _progress(f"mask: {mask.count} of {mask.flags.size} voxels selected")
    return 0


def _cmd_fit(args) -> int:
    records = {r.subject_id: r for r in vio.read_covariates(args.covariates)}
    mask = vio.read_mask(args.mask)
    images, covars = [], []
    for vol_path in args.volumes:
        sid = Path(vol_path).stem
        if sid not in records:
            raise ValidationError(f"no covariate row for volume {vol_path} (id {sid!r})")
        images.append(vio.read_volume(vol_path))
        covars.append(records[sid])
    grid = build_grid(mask, _resolve(args, "spacing"))
    model = fit_grid(
        images,
        covars,
        grid,
        jobs=_resolve(args, "jobs"),
        seed=_resolve(args, "seed"),
        rbf_bandwidth=_resolve(args, "bandwidth"),
        rbf_mode=_resolve(args, "mode"),
    )
    vio.save_model(model, args.out_model)
    n_conv = sum(f.converged for f in model.fits)
    n_clamped = sum(f.clamped for f in model.fits)
    _progress(
        f"fit: {grid.count} centers, {n_conv} converged, "
        f"{grid.count - n_conv} flagged, {n_clamped} clamped"
    )
    return 0


def _cmd_maps(args) -> int:
    model = vio.load_model(args.model)
    mask = vio.read_mask(args.mask)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bandwidth = getattr(args, "bandwidth", None)
    mode = getattr(args, "mode", None)
    if args.which == "params":
        fields = parameter_maps(model, mask, bandwidth, mode)
        for name, img in fields.items():
            vio.write_volume(img, out_dir / f"{name}.nvol")
        _progress(f"maps: wrote {len(fields)} parameter fields to {out_dir}")
    elif args.which == "predict":
        if args.age is None or args.sex is None:
            raise ValidationError("--which predict requires --age and --sex")
        sex = _parse_sex(args.sex)
        img = predict_mean(model, args.age, sex, mask, bandwidth, mode)
        path = out_dir / f"mean_age{args.age:g}_sex{'M' if sex else 'F'}.nvol"
        vio.write_volume(img, path)
        _progress(f"maps: wrote {path}")
    elif args.which == "age-effect":
        if args.sex is None:
            raise ValidationError("--which age-effect requires --sex")
        sex = _parse_sex(args.sex)
        img = age_effect_map(model, sex, mask, bandwidth, mode)
        path = out_dir / f"age_effect_sex{'M' if sex else 'F'}.nvol"
        vio.write_volume(img, path)
        _progress(f"maps: wrote {path}")
    return 0


def _cmd_zmap(args) -> int:
    model = vio.load_model(args.model)
    mask = vio.read_mask(args.mask)
    img = vio.read_volume(args.volume)
    record = CovariateRecord(
        subject_id=args.subject_id or Path(args.volume).stem,
        age=args.age,
        sex=_parse_sex(args.sex),
        group=args.group,
    )
    zmap = subject_zmap(
        img,
        record,
        model,
        mask,
        bandwidth=getattr(args, "bandwidth", None),
        mode=getattr(args, "mode", None),
        method=args.method,
    )
    vio.write_volume(zmap.to_volume(), args.out)
    _progress(f"zmap: {record.subject_id} -> {args.out}")
    return 0


def _cmd_score(args) -> int:
    mask = vio.read_mask(args.mask)
    groups = {}
    if args.covariates:
        groups = {r.subject_id: r.group for r in vio.read_covariates(args.covariates)}
    inside = mask.voxel_indices()
    q = _resolve(args, "q")
    zmaps = []
    for zpath in args.zmaps:
        img = vio.read_volume(zpath)
        if img.dims != mask.dims:
            raise ValidationError(
                f"{zpath}: dims {img.dims} do not match mask {mask.dims}"
            )
        sid = Path(zpath).stem
        zmaps.append(
            ZMap(
                subject_id=sid,
                dims=img.dims,
                voxel_size=img.voxel_size,
                mask_indices=inside,
                values=img.data[inside],
                provenance={"covariates": {"group": groups.get(sid, "UNKNOWN")}},
            )
        )
    scores = score_cohort(zmaps, q)
    vio.write_scores(scores, args.out)
    for group, stats in summarize_scores(scores).items():
        _progress(
            f"score[{group}]: n={stats['n']} mean={stats['mean']:.4f} "
            f"median={stats['median']:.4f} sd={stats['sd']:.4f}"
        )
    return 0


def _cmd_simulate(args) -> int:
    spec = parse_spec_file(args.spec) if args.spec else SyntheticSpec()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides["n_subjects"] = args.n
    if args.n_diseased is not None:
        overrides["n_diseased"] = args.n_diseased
    if overrides:
        spec = replace(spec, **overrides)
    cohort = generate_cohort(spec)

    out_dir = Path(args.out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "truth").mkdir(parents=True, exist_ok=True)
    for img, rec in zip(cohort.images, cohort.covariates):
        vio.write_volume(img, out_dir / "images" / f"{rec.subject_id}.nvol")
    vio.write_covariates(cohort.covariates, out_dir / "covariates.csv")
    vio.write_volume(cohort.template, out_dir / "template.nvol")
    vio.write_mask(cohort.mask, out_dir / "mask.nvol")
    for name, img in cohort.truth.items():
        vio.write_volume(img, out_dir / "truth" / f"{name}.nvol")
    _progress(
        f"simulate: {spec.n_subjects} subjects "
        f"({spec.n_diseased} diseased), seed {spec.seed} -> {out_dir}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volnorm",
        description="Voxelwise skew-normal normative modelling of 3D volumes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key=value option file; flags win")

    p = sub.add_parser("mask", help="build a brain mask from a binary template")
    add_common(p)
    p.add_argument("template", help="binary template volume (NVOL1)")
    p.add_argument("--sd", type=float, help="smoothing sd in voxels (default 2)")
    p.add_argument("--threshold", type=float, help="mask threshold (default 0.5)")
    p.add_argument("--out", required=True, help="output mask volume")
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("fit", help="fit the normative model on a training cohort")
    add_common(p)
    p.add_argument("volumes", nargs="+", help="training volumes; file stem = subject id")
    p.add_argument("--covariates", required=True, help="covariates CSV")
    p.add_argument("--mask", required=True, help="mask volume")
    p.add_argument("--spacing", type=float, help="grid spacing in mm (default 8)")
    p.add_argument("--bandwidth", type=float, help="RBF sd in mm (default 2/3 spacing)")
    p.add_argument("--mode", choices=[MODE_SUM_TO_ZERO, MODE_SUM_TO_ONE])
    p.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p.add_argument("--seed", type=int, help="seed recorded in model metadata")
    p.add_argument("--out-model", required=True, help="output model file")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("maps", help="write parameter/prediction/effect maps")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--which", required=True, choices=["params", "predict", "age-effect"])
    p.add_argument("--age", type=float, help="age for --which predict")
    p.add_argument("--sex", help="sex (F/M or 0/1) for predict and age-effect")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--mode", choices=[MODE_SUM_TO_ZERO, MODE_SUM_TO_ONE])
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_maps)

    p = sub.add_parser("zmap", help="transform a subject volume into a z-map")
    add_common(p)
    p.add_argument("volume")
    p.add_argument("--model", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--age", type=float, required=True)
    p.add_argument("--sex", required=True, help="F/M or 0/1")
    p.add_argument("--group", default="UNKNOWN")
    p.add_argument("--subject-id", help="defaults to the volume file stem")
    p.add_argument("--method", default="grid-z", choices=["grid-z", "param-fields"])
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--mode", choices=[MODE_SUM_TO_ZERO, MODE_SUM_TO_ONE])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_zmap)

    p = sub.add_parser("score", help="deviation scores for z-map volumes")
    add_common(p)
    p.add_argument("zmaps", nargs="+")
    p.add_argument("--mask", required=True)
    p.add_argument("--q", type=float, help="tail quantile (default 0.9999)")
    p.add_argument("--covariates", help="optional CSV for group labels")
    p.add_argument("--out", required=True, help="output scores CSV")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("simulate", help="generate a synthetic cohort with ground truth")
    add_common(p)
    p.add_argument("--spec", help="synthetic spec file (key=value)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="override number of subjects")
    p.add_argument("--n-diseased", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        args._config_values = _load_config(args.config)
    try:
        return args.func(args)
    except ConditioningError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (FormatError, ValidationError, DomainError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except VolnormError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
