"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numeric failure during training.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("lfpfe")


def _pin_threads() -> None:
    # must run before numpy loads its BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, "1")


# ------------------------------------------------------------------ commands

def cmd_gen_data(args) -> int:
    from . import dataset

    if args.from_manifest:
        manifest = dataset.regenerate(args.from_manifest, args.out)
    else:
        seed = _env_seed(args.seed)
        manifest = dataset.generate(args.out, args.scenes, args.m, args.n, args.h, args.w,
                                    args.max_disparity, seed, args.test_scenes)
    print(f"wrote {len(manifest['scenes'])} scenes to {args.out} (content {manifest['content_hash'][:12]})")
    return EXIT_OK


def _env_seed(seed: int) -> int:
    from .config import ConfigError

    raw = os.environ.get("PFE_SEED")
    if raw in (None, ""):
        return seed
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"PFE_SEED must be an integer, got {raw!r}") from None


def _config_from_args(args, task: str):
    from .config import ExperimentConfig

    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig(task=task)
    overrides = {
        "task": task, "data": args.data, "stages": args.t, "units": args.j, "channels": args.channels,
        "epochs": args.epochs, "pre_epochs": args.pre_epochs, "finetune_epochs": args.finetune_epochs,
        "batch": args.batch, "patch": args.patch, "max_lr": args.max_lr, "seed": args.seed,
        "test_scenes": args.test_scenes, "steps_per_epoch": args.steps_per_epoch,
    }
    if task == "cr":
        overrides.update(s=args.s, normalize_cms=args.normalize_cms or None)
    else:
        overrides.update(sigma=args.sigma, ca_layout=args.ca_layout)
    if args.deterministic:
        overrides["deterministic"] = True
    return cfg.update(**overrides).with_env()


def _split_out(out: str) -> tuple[Path, Path]:
    """``--out`` may name the checkpoint file or the run directory."""
    p = Path(out)
    if p.suffix == ".ckpt":
        return p.parent, p
    return p, p / "model.ckpt"


def cmd_train_task(args, task: str) -> int:
    cfg = _config_from_args(args, task)
    run_dir, ckpt = _split_out(args.out or cfg.out)
    summary = run_experiment(cfg, run_dir, ckpt)
    _print_summary(summary)
    return EXIT_OK


def cmd_train(args) -> int:
    from .config import ExperimentConfig

    cfg = ExperimentConfig.load(args.config).with_env()
    if args.deterministic:
        cfg = cfg.update(deterministic=True)
    run_dir, ckpt = _split_out(args.out or cfg.out)
    summary = run_experiment(cfg, run_dir, ckpt)
    _print_summary(summary)
    return EXIT_OK


def run_experiment(cfg, run_dir: Path, ckpt: Path) -> dict:
    """Train, save, evaluate on the held-out split and write the report."""
    import time

    from . import dataset, report
    from .models import build_model, live_parameter_count, save_model
    from .training import train_cr, train_dn

    cfg.validate()
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    data_dir = Path(cfg.data) if cfg.data else run_dir / "data"
    if not cfg.data:
        dataset.generate(data_dir, cfg.scenes, cfg.m, cfg.n, cfg.h, cfg.w, cfg.max_disparity,
                         cfg.data_seed, cfg.test_scenes)
    data = load_data(data_dir, cfg.test_scenes)
    _, train_scenes = data.subset("train")
    test_names, test_scenes = data.subset("test")
    m, n = data.scenes.shape[1:3]

    net = {"kind": cfg.task, "m": m, "n": n, "stages": cfg.stages, "units": cfg.units, "channels": cfg.channels}
    if cfg.task == "cr":
        net.update(s=cfg.s, normalize_cms=cfg.normalize_cms)
    else:
        net.update(ca_layout=cfg.ca_layout)
    model = build_model(net, seed=cfg.seed)
    template_count = model.num_weights()
    log.info("training %s on %d scenes (%d weights)", cfg.task, len(train_scenes), template_count)

    t0 = time.perf_counter()
    tc = cfg.train_config()
    if cfg.task == "cr":
        hist = train_cr(model, train_scenes, tc)
    else:
        hist = train_dn(model, train_scenes, cfg.sigma, tc)
    train_seconds = time.perf_counter() - t0

    extra = {"sigma": cfg.sigma} if cfg.task == "dn" else {}
    save_model(model, ckpt, extra)
    cfg.save(run_dir / "config.ini")
    history = hist.to_dict()
    history.pop("seconds")
    report.write_json(history, run_dir / "history.json")
    report.plot_loss(history, run_dir / "loss.png")

    summary = evaluate_and_report(model, test_names, test_scenes, run_dir, cfg.sigma, seed=cfg.seed)
    summary.update(
        task=cfg.task, train_seconds=round(train_seconds, 2), steps=len(hist.loss),
        final_loss=hist.loss[-1] if hist.loss else None,
        params_template=template_count, params_live=live_parameter_count(model),
        checkpoint=str(ckpt),
    )
    report.write_json(summary, run_dir / "summary.json")
    write_run_manifest(run_dir, cfg, data.files, ckpt)
    return summary


def load_data(path, test_scenes: int = 10):
    from . import dataset

    return dataset.load_dataset(path, test_scenes)


def evaluate_and_report(model, names, scenes, out_dir: Path, sigma: float = 20.0, seed: int = 0) -> dict:
    from . import report
    from .models import gate_mode
    from .training import denoise, evaluate_cr, evaluate_dn, reconstruct_stages

    out_dir.mkdir(parents=True, exist_ok=True)
    kind = model.config()["kind"]
    if kind == "cr":
        rows = evaluate_cr(model, scenes, names)
        report.write_csv(rows, out_dir / "metrics.csv", report.CR_COLUMNS)
        summary = report.summarize_cr(rows)
        report.plot_stage_psnr(rows, out_dir / "stage_psnr.png")
        if len(scenes):
            _, outs = reconstruct_stages(model, scenes[0])
            panels = {"truth": scenes[0]}
            panels.update({f"stage {t}": o for t, o in enumerate(outs)})
            report.plot_epis(panels, out_dir / "epi.png")
    else:
        rows = evaluate_dn(model, scenes, sigma, seed, names)
        report.write_csv(rows, out_dir / "metrics.csv", report.DN_COLUMNS)
        summary = report.summarize_dn(rows)
        report.plot_view_psnr(rows, model.m, model.n, out_dir / "view_psnr.png")
        if len(scenes):
            from .lightfield import NoiseSpec, add_noise

            noisy = add_noise(scenes[0], NoiseSpec(sigma, seed)).data
            report.plot_epis({"truth": scenes[0], "noisy": noisy, "denoised": denoise(model, noisy)},
                             out_dir / "epi.png")
    if gate_mode(model) in ("hard", "pruned"):
        arches = model.architectures() if gate_mode(model) == "hard" else _stored_arches(model)
        report.plot_architecture(arches, out_dir / "architecture.png")
    return summary


def _stored_arches(model):
    from .models import model_arches

    return model_arches(model)


def write_run_manifest(run_dir: Path, cfg, data_files, ckpt: Path) -> None:
    import platform

    import numpy as np

    from . import __version__, dataset, report

    text = cfg.to_text()
    files = [f for p in data_files for f in (sorted(Path(p).glob("*")) if Path(p).is_dir() else [Path(p)])]
    report.write_json({
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": text,
        "inputs_hash": dataset.content_hash(files, text.encode()),
        "checkpoint_hash": dataset.git_blob_hash(ckpt.read_bytes()),
    }, run_dir / "run_manifest.json")


def _print_summary(summary: dict) -> None:
    for key in sorted(summary):
        value = summary[key]
        if isinstance(value, float):
            value = f"{value:.4f}"
        elif isinstance(value, dict):
            continue
        print(f"{key}\t{value}")


def cmd_eval(args) -> int:
    from .models import load_model

    model, meta = load_model(args.ckpt)
    data = load_data(args.data, args.test_scenes)
    names, scenes = data.subset(args.split)
    sigma = args.sigma if args.sigma is not None else meta.get("extra", {}).get("sigma", 20.0)
    seed = _env_seed(args.seed)
    out = Path(args.out)
    summary = evaluate_and_report(model, names, scenes, out, sigma, seed)
    from . import report
    from .models import live_parameter_count

    summary["params_live"] = live_parameter_count(model)
    summary["params_template"] = live_parameter_count(model, template=True)
    report.write_json(summary, out / "summary.json")
    _print_summary(summary)
    print(f"metrics\t{out / 'metrics.csv'}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    import numpy as np

    from .io import LFFormatError, save_lf
    from .models import load_model
    from .training import reconstruct_stages

    model, _ = load_model(args.ckpt)
    if model.config()["kind"] != "cr":
        raise LFFormatError(f"{args.ckpt} is not a reconstruction checkpoint")
    cms = _load_array(args.cms, 3, "measurements (S, H, W)")
    if args.mask:
        model.projection.set_code(_load_array(args.mask, 3, "mask (S, M, N)"))
    if cms.shape[0] != model.s:
        raise LFFormatError(f"{args.cms}: {cms.shape[0]} measurements, model expects {model.s}")
    _, outs = reconstruct_stages(model, np.zeros((model.m, model.n) + cms.shape[1:], np.float32), cms)
    save_lf(outs[-1], args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_array(path, ndim: int, what: str):
    import numpy as np

    from .io import LFFormatError

    try:
        a = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise LFFormatError(f"{path}: cannot read {what}: {exc}") from None
    if a.ndim != ndim:
        raise LFFormatError(f"{path}: expected {what}, got shape {a.shape}")
    return a.astype(np.float32)


def cmd_denoise(args) -> int:
    from .io import LFFormatError, load_lf, save_lf
    from .models import load_model
    from .training import denoise

    model, _ = load_model(args.ckpt)
    if model.config()["kind"] != "dn":
        raise LFFormatError(f"{args.ckpt} is not a denoising checkpoint")
    lf = load_lf(getattr(args, "in")).data
    if lf.shape[:2] != (model.m, model.n):
        raise LFFormatError(f"angular size {lf.shape[:2]} does not match model {(model.m, model.n)}")
    save_lf(denoise(model, lf), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_derive_arch(args) -> int:
    from . import report
    from .models import live_parameter_count, load_model, save_model
    from .pfe import architecture_report

    model, meta = load_model(args.ckpt)
    if not model.gate_banks():
        raise ValueError("checkpoint is already pruned")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arches = model.architectures(args.threshold)
    text = "\n".join(architecture_report(a, t) for t, a in enumerate(arches))
    (out / "architecture.txt").write_text(text + "\n")
    report.write_json([a.to_dict() for a in arches], out / "architecture.json")
    report.plot_architecture(arches, out / "architecture.png")
    pruned = model.prune(args.threshold)
    save_model(pruned, out / "pruned.ckpt", meta.get("extra"))
    print(text)
    print(f"params_template\t{live_parameter_count(model, template=True)}")
    print(f"params_pruned\t{pruned.num_weights()}")
    return EXIT_OK


def cmd_export_epi(args) -> int:
    from .io import load_lf, save_png
    from .report import epi_images

    lf = load_lf(args.lf).data
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in epi_images(lf, args.u, args.x, args.v, args.y).items():
        save_png(img, out / f"{name}.png")
        print(out / f"{name}.png")
    return EXIT_OK


def cmd_param_count(args) -> int:
    from .models import build_model, live_parameter_count, load_model

    if args.ckpt:
        model, _ = load_model(args.ckpt)
    else:
        cfg = {"kind": args.kind, "m": args.m, "n": args.n, "stages": args.t, "units": args.j,
               "channels": args.channels, "s": args.s}
        model = build_model(cfg)
    print(live_parameter_count(model, template=args.template))
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_train_args(p, task: str) -> None:
    p.add_argument("--config", help="experiment config file; flags override it")
    p.add_argument("--data", help="scene directory (default: generate a synthetic set)")
    p.add_argument("--t", type=int, help="stages")
    p.add_argument("--j", type=int, help="units per stage")
    p.add_argument("--channels", type=int)
    p.add_argument("--epochs", type=int, help="gated epochs")
    p.add_argument("--pre-epochs", type=int, help="template pre-training epochs")
    p.add_argument("--finetune-epochs", type=int, help="hard-mask fine-tune epochs after derivation")
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--max-lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--test-scenes", type=int)
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--out", help="checkpoint path (*.ckpt) or run directory")
    if task == "cr":
        p.add_argument("--s", type=int, help="number of coded measurements")
        p.add_argument("--normalize-cms", action="store_true")
    else:
        p.add_argument("--sigma", type=float, help="noise level on the 0-255 scale")
        p.add_argument("--ca-layout", choices=("per_view", "joint"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lfpfe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic scene set with a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=50)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--h", type=int, default=64)
    p.add_argument("--w", type=int, default=64)
    p.add_argument("--max-disparity", type=int, default=2)
    p.add_argument("--test-scenes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--from-manifest", help="regenerate the set described by a manifest")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-cr", help="train the coded-aperture reconstruction network")
    _add_train_args(p, "cr")
    p.set_defaults(func=lambda a: cmd_train_task(a, "cr"))

    p = sub.add_parser("train-dn", help="train the denoising network")
    _add_train_args(p, "dn")
    p.set_defaults(func=lambda a: cmd_train_task(a, "dn"))

    p = sub.add_parser("reconstruct", help="reconstruct a light field from coded measurements (.npy)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cms", required=True, help=".npy array (S, H, W)")
    p.add_argument("--mask", help=".npy aperture code (S, M, N); default: the learned code")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("denoise", help="denoise a light field")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("eval", help="metrics CSV, summary and figures for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int, default=0, help="noise seed for denoising evaluation")
    p.add_argument("--test-scenes", type=int, default=10)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("derive-arch", help="threshold the gates, report and prune")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_derive_arch)

    p = sub.add_parser("export-epi", help="write EPI slices as 8-bit PNG")
    p.add_argument("--lf", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--u", type=int)
    p.add_argument("--x", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--y", type=int)
    p.set_defaults(func=cmd_export_epi)

    p = sub.add_parser("param-count", help="count live (or template) weights")
    p.add_argument("--ckpt")
    p.add_argument("--template", action="store_true")
    p.add_argument("--kind", choices=("cr", "dn"), default="cr")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--t", type=int, default=6)
    p.add_argument("--j", type=int, default=8)
    p.add_argument("--channels", type=int, default=32)
    p.set_defaults(func=cmd_param_count)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "deterministic", False) or os.environ.get("PFE_DETERMINISTIC"):
        _pin_threads()
    try:
        sys.stdout.reconfigure(line_buffering=True)
    except AttributeError:
        pass
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(message)s")

    from .autodiff import CheckpointError
    from .config import ConfigError
    from .io import LFFormatError
    from .lightfield import ShapeError
    from .training import NumericError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LFFormatError, CheckpointError, ShapeError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
