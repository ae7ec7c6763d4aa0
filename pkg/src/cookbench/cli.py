"""Command-line entry point: ``cookbench <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import default_config_text, load_config
from .cook import combine_fingerprints, craft_dataset, random_noise_dataset, write_traces_csv
from .data import ProvenanceKind, load_dataset, save_dataset, synth_dataset
from .errors import ConstraintError, FormatError, NumericError, ParameterError, ShapeError
from .evalkit import build_report, format_table, write_report_csv
from .nn import build_spec, init_params, load_params, params_fingerprint, save_params
from .ssim import SsimConfig, ssim_batch_min
from .tensor import derive_seed
from .trainer import train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("cookbench")


class ConfigError(Exception):
    pass


def _cfg(args):
    return load_config(args.config, seed=args.seed, out=args.out)


def cmd_synth(args) -> None:
    cfg = _cfg(args)
    tr, te = synth_dataset(cfg.recipe, derive_seed(cfg.seed, pipeline.SEED_DATA))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(out / f"raw_train_seed{cfg.seed}.dcd", tr)
    save_dataset(out / f"raw_test_seed{cfg.seed}.dcd", te)
    print(f"wrote {len(tr)} train / {len(te)} test samples to {out}")


def _spec_for(arch: str, ds):
    return build_spec(arch, ds.sample_shape, ds.num_classes)


def cmd_train(args) -> None:
    cfg = _cfg(args)
    ds = load_dataset(args.data)
    spec = _spec_for(cfg.arch, ds)
    stream_init, stream_shuffle = (
        (pipeline.SEED_SURR_INIT, pipeline.SEED_SURR_SHUFFLE)
        if args.role == "surrogate"
        else (pipeline.SEED_PROT_INIT, pipeline.SEED_PROT_SHUFFLE)
    )
    init = init_params(spec, derive_seed(cfg.seed, stream_init))
    tcfg = replace(cfg.train, shuffle_seed=derive_seed(cfg.seed, stream_shuffle))
    params, history = train(spec, init, ds, tcfg)
    ckpt = Path(args.ckpt)
    save_params(ckpt, spec, params)
    history.write_csv(ckpt.with_suffix(".history.csv"))
    print(f"{args.role} trained: final train acc {history.acc[-1]:.4f}; checkpoint {ckpt}")


def cmd_cook(args) -> None:
    cfg = _cfg(args)
    ds = load_dataset(args.data)
    spec = _spec_for(cfg.arch, ds)
    surrogate = load_params(args.surrogate, spec)
    craft = cfg.craft_config(direction=args.direction, seed=derive_seed(cfg.seed, pipeline.SEED_CRAFT))
    cooked, traces = craft_dataset(spec, surrogate, ds, craft)
    out = Path(args.dest)
    save_dataset(out, cooked)
    pipeline.write_manifest(pipeline.manifest_path(out), craft, spec, surrogate)
    write_traces_csv(out.with_suffix(".traces.csv"), traces)
    worst = ssim_batch_min(ds, load_dataset(out), craft.ssim_cfg)
    print(f"cooked {len(cooked)} samples ({craft.label()}); min SSIM {worst:.4f}; wrote {out}")


def cmd_noise(args) -> None:
    cfg = _cfg(args)
    ds = load_dataset(args.data)
    craft = cfg.craft_config()
    sigma = cfg.noise_sigma if args.sigma is None else args.sigma
    noisy = random_noise_dataset(ds, sigma, derive_seed(cfg.seed, pipeline.SEED_NOISE_TRAIN), craft.ssim_threshold, craft.ssim_cfg)
    save_dataset(args.dest, noisy)
    print(f"noise baseline sigma {noisy.provenance.sigma:g}; wrote {args.dest}")


def _check_provenance(raw_test, cooked_path: Path, cooked, spec, surrogate, force: bool) -> None:
    if cooked.provenance.kind is not ProvenanceKind.COOKED:
        return
    man_path = pipeline.manifest_path(cooked_path)
    problem = None
    manifest = None
    if not man_path.is_file():
        problem = f"no provenance manifest next to {cooked_path}"
    else:
        manifest = json.loads(man_path.read_text())
        expected = combine_fingerprints(int(manifest["craft_fingerprint"]), params_fingerprint(spec, surrogate))
        if expected != cooked.provenance.fingerprint:
            problem = f"{cooked_path} was not cooked against this surrogate checkpoint"
    if problem:
        if not force:
            raise ConstraintError(problem + " (use --force to evaluate anyway)")
        log.warning("%s; continuing because of --force", problem)
    if manifest is not None:
        c = manifest["craft_config"]
        sc = c["ssim_cfg"]
        ssim_cfg = SsimConfig(window=sc["window"], k1=sc["k1"], k2=sc["k2"], dynamic_range=sc["dynamic_range"], mode=sc["mode"])
        worst = ssim_batch_min(raw_test, cooked, ssim_cfg)
        if worst < c["ssim_threshold"]:
            raise ConstraintError(f"{cooked_path}: min SSIM {worst:.4f} below {c['ssim_threshold']}")


def cmd_eval(args) -> None:
    cfg = _cfg(args)
    raw = load_dataset(args.raw)
    cooked = load_dataset(args.protected_data)
    if raw.sample_shape != cooked.sample_shape or len(raw) != len(cooked):
        raise ShapeError("raw and protected test sets are not aligned")
    spec = _spec_for(cfg.arch, raw)
    surrogate = load_params(args.surrogate, spec)
    protected = load_params(args.protected_model, spec)
    try:
        _check_provenance(raw, Path(args.protected_data), cooked, spec, surrogate, args.force)
    except ConstraintError as exc:
        raise ConfigError(str(exc)) from exc
    report = build_report((spec, surrogate), (spec, protected), raw, cooked, method=args.method, seed=cfg.seed, epsilon=cfg.epsilon)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_csv(out / f"eval_seed{cfg.seed}.csv", [report])
    text = format_table([report])
    (out / f"eval_seed{cfg.seed}.txt").write_text(text)
    print(text, end="")


def cmd_run(args) -> None:
    result = pipeline.run_experiment(_cfg(args))
    print(result.report_txt.read_text(), end="")


def cmd_ablate(args) -> None:
    result = pipeline.ablate(_cfg(args))
    print(result.report_txt.read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cookbench", description=__doc__.splitlines()[0])
    parser.add_argument("--print-defaults", action="store_true", help="print the default configuration and exit")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--force", action="store_true", help="accept cross-fingerprint pairings")
    sub = parser.add_subparsers(dest="command")

    sub.add_parser("synth", parents=[common], help="write a synthetic dataset").set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a surrogate or protected model")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--role", choices=("surrogate", "protected"), default="surrogate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cook", parents=[common], help="craft a protected dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--direction", choices=("antiadv", "adv"))
    p.set_defaults(func=cmd_cook)

    p = sub.add_parser("noise", parents=[common], help="Gaussian-noise baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--sigma", type=float)
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("eval", parents=[common], help="four-cell report from existing artifacts")
    p.add_argument("--surrogate", required=True)
    p.add_argument("--protected-model", required=True)
    p.add_argument("--raw", required=True, help="raw test set")
    p.add_argument("--protected-data", required=True, help="protected test set")
    p.add_argument("--method", default="antiadv")
    p.set_defaults(func=cmd_eval)

    sub.add_parser("run", parents=[common], help="full experiment").set_defaults(func=cmd_run)
    sub.add_parser("ablate", parents=[common], help="sweep the 24-cell ablation grid plus noise").set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.print_defaults:
        print(default_config_text(), end="")
        return EXIT_OK
    if not args.command:
        parser.print_help()
        return EXIT_CONFIG
    try:
        args.func(args)
    except (ConfigError, ParameterError, ShapeError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipeline.StageError as exc:
        code = EXIT_CONFIG if isinstance(exc.cause, (ParameterError, ShapeError, FormatError, FileNotFoundError)) else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (NumericError, ConstraintError, Exception) as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
