"""Command-line front door.

Subcommands: summary (per-layer efficiency tables), train-toy (synthetic
training run), eval (checkpoint evaluation with optional test-time
augmentation), bench (latency harness).

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure
during a run.  Every run echoes its fully-resolved model configuration.
The heavyweight imports happen after argument parsing so --threads can pin
the math library's pool size via environment variables.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


def _atomic_write_text(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_hw(text: str):
    for sep in ("x", ","):
        if sep in text:
            a, b = text.split(sep, 1)
            return int(a), int(b)
    raise argparse.ArgumentTypeError(
        f"expected HxW (e.g. 256x192), got {text!r}")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("LAPX_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SystemExit(
                f"lapx: LAPX_SEED must be an integer, got {env!r}") from None
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lapx",
        description="Lightweight multi-stage hourglass pose estimation kit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_input_hw=True):
        p.add_argument("--preset", help="named model preset")
        p.add_argument("--config", help="model config JSON file")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default: LAPX_SEED env var, else 0)")
        p.add_argument("--json-out", help="also write results as JSON here")
        if with_input_hw:
            p.add_argument("--input-hw", type=_parse_hw, default=None,
                           help="input extent HxW (default: config value)")

    p = sub.add_parser("summary", help="per-layer parameter/MAC report")
    common(p)
    p.add_argument("--out", help="write the text report here (default stdout)")

    p = sub.add_parser("train-toy", help="train on the synthetic stick-figure task")
    common(p)
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--keypoints", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None, help="heatmap sigma")
    p.add_argument("--samples", type=int, default=300, help="training set size")
    p.add_argument("--val-samples", type=int, default=64)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr-preset", choices=("toy", "mpii", "coco"), default="toy")
    p.add_argument("--augment", action="store_true",
                   help="enable train-time flip/rotate/scale augmentation")
    p.add_argument("--target-pckh", type=float, default=None,
                   help="stop once val PCKh reaches this value")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on synthetic data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--synth", type=int, default=64,
                   help="evaluate on this many synthetic samples")
    p.add_argument("--quarter-offset", action="store_true")
    p.add_argument("--flip-test", action="store_true")
    p.add_argument("--heatmap-shift", action="store_true",
                   help="1-px shift of the flipped maps (needs --flip-test)")
    p.add_argument("--dump-predictions", help="write decoded poses as JSON here")
    p.add_argument("--dump-heatmaps",
                   help="write final-stage heatmaps as a tensor container here")

    p = sub.add_parser("bench", help="forward-latency harness")
    common(p)
    p.add_argument("--checkpoint", help="optional weights to load")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--threads", type=int, default=1,
                   help="math-library thread cap (set before numpy loads)")
    p.add_argument("--out", help="write the text report here (default stdout)")

    return parser


def _resolve_config(args):
    from .model import ModelConfig, preset_config, load_config_file, ConfigError

    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        cfg = preset_config(args.preset)
    elif args.config:
        cfg = load_config_file(args.config)
    else:
        cfg = ModelConfig()

    overrides = {}
    if getattr(args, "input_hw", None) is not None:
        overrides["input_hw"] = args.input_hw
    if getattr(args, "stages", None) is not None:
        overrides["stages"] = args.stages
    if getattr(args, "channels", None) is not None:
        overrides["channels"] = args.channels
    if getattr(args, "keypoints", None) is not None:
        overrides["keypoints"] = args.keypoints
    if getattr(args, "sigma", None) is not None:
        overrides["sigma"] = args.sigma
    if overrides:
        d = cfg.to_dict()
        d["input_hw"] = list(overrides.get("input_hw", cfg.input_hw))
        d["num_stages"] = overrides.get("stages", cfg.num_stages)
        d["channels"] = overrides.get("channels", cfg.channels)
        d["num_keypoints"] = overrides.get("keypoints", cfg.num_keypoints)
        d["heatmap_sigma"] = overrides.get("sigma", cfg.heatmap_sigma)
        if d["nonlocal_stages"] is not None:
            d["nonlocal_stages"] = [s for s in d["nonlocal_stages"]
                                    if s <= d["num_stages"]]
        if d["enc_blocks"] is not None and len(d["enc_blocks"]) != cfg.num_pool_levels:
            d["enc_blocks"] = None
        from .model import config_from_json
        cfg = config_from_json(json.dumps(d))
    return cfg


def _echo_config(cfg):
    from .model import config_to_json
    sys.stdout.write("resolved config:\n")
    sys.stdout.write(config_to_json(cfg))


def cmd_summary(args) -> int:
    from .model import build_model
    from .analysis import efficiency_report, report_to_json, report_to_text

    cfg = _resolve_config(args)
    _echo_config(cfg)
    seed = _resolve_seed(args)
    model = build_model(cfg, seed)
    dims = (1, 3) + cfg.input_hw
    report = efficiency_report(model, dims)
    text = report_to_text(report)
    if args.out:
        _atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.json_out:
        _atomic_write_text(args.json_out, report_to_json(report))
        print(f"wrote {args.json_out}")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    if args.epochs < 1:
        raise SystemExit("lapx train-toy: --epochs must be >= 1")
    if args.samples < 1 or args.val_samples < 1:
        raise SystemExit("lapx train-toy: dataset sizes must be >= 1")

    from .model import config_to_json
    from .synth import synth_dataset
    from .train import LR_PRESETS, toy_settings, train_loop

    cfg = _resolve_config(args)
    _echo_config(cfg)
    seed = _resolve_seed(args)
    os.makedirs(args.out_dir, exist_ok=True)

    train_set = synth_dataset(args.samples, cfg.input_hw, cfg.num_keypoints,
                              seed=seed)
    val_set = synth_dataset(args.val_samples, cfg.input_hw, cfg.num_keypoints,
                            seed=seed + 10_000)
    settings = toy_settings(
        batch_size=args.batch_size,
        lr_schedule=LR_PRESETS[args.lr_preset],
        augment=args.augment,
        log_path=os.path.join(args.out_dir, "log.jsonl"),
        checkpoint_path=os.path.join(args.out_dir, "checkpoint.lapx"),
        optimizer_path=os.path.join(args.out_dir, "optimizer.lapx"),
        target_pckh=args.target_pckh,
    )
    _atomic_write_text(os.path.join(args.out_dir, "config.json"),
                       config_to_json(cfg))
    model, log = train_loop(cfg, train_set, val_set, args.epochs, seed, settings)
    best = max(rec["val_pckh"] for rec in log)
    summary = {"epochs_run": len(log), "best_val_pckh": best,
               "final_val_pckh": log[-1]["val_pckh"],
               "final_loss": log[-1]["loss"], "seed": seed}
    print(f"best val PCKh@0.5: {best:.2f} over {len(log)} epochs")
    if args.json_out:
        _atomic_write_text(args.json_out, json.dumps(summary, indent=2) + "\n")
        print(f"wrote {args.json_out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .model import build_model
    from .weights import load_model, save_tensors
    from .synth import synth_dataset
    from .train import predict_poses
    from .metrics import pckh
    from .codec import annotations_to_json

    cfg = _resolve_config(args)
    _echo_config(cfg)
    seed = _resolve_seed(args)
    model = build_model(cfg, seed)
    load_model(model, args.checkpoint)
    samples = synth_dataset(args.synth, cfg.input_hw, cfg.num_keypoints,
                            seed=seed + 10_000)
    shift = 1 if args.heatmap_shift else 0
    if shift and not args.flip_test:
        raise SystemExit("lapx eval: --heatmap-shift requires --flip-test")
    preds = predict_poses(model, samples, quarter_offset=args.quarter_offset,
                          flip_test=args.flip_test, shift_px=shift)
    gts = [s.annotation for s in samples]
    per_joint, total = pckh(preds, gts)
    print("PCKh@0.5 per joint:")
    for name, value in per_joint.items():
        print(f"  {name:<12} {value:7.2f}")
    print(f"PCKh@0.5 total: {total:.2f}")
    if args.dump_predictions:
        doc = {str(i): [p] for i, p in enumerate(preds)}
        _atomic_write_text(args.dump_predictions, annotations_to_json(doc))
        print(f"wrote {args.dump_predictions}")
    if args.dump_heatmaps:
        from .engine import Tensor, no_grad
        tensors = {}
        for i, s in enumerate(samples):
            with no_grad():
                outs = model(Tensor(np.stack([s.image])))
            for stage, hm in enumerate(outs, start=1):
                tensors[f"heatmap/{i}/{stage}"] = hm.data[0]
        save_tensors(args.dump_heatmaps, tensors)
        print(f"wrote {args.dump_heatmaps}")
    if args.json_out:
        doc = {"pckh_total": total, "pckh_per_joint": per_joint,
               "quarter_offset": args.quarter_offset,
               "flip_test": args.flip_test, "heatmap_shift": bool(shift),
               "samples": len(samples), "seed": seed}
        _atomic_write_text(args.json_out, json.dumps(doc, indent=2) + "\n")
        print(f"wrote {args.json_out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .model import build_model
    from .weights import load_model
    from .analysis import bench_latency, bench_to_json, bench_to_text

    cfg = _resolve_config(args)
    _echo_config(cfg)
    seed = _resolve_seed(args)
    model = build_model(cfg, seed)
    if args.checkpoint:
        load_model(model, args.checkpoint)
    dims = (1, 3) + cfg.input_hw
    report = bench_latency(model, dims, warmup=args.warmup, iters=args.iters,
                           threads=args.threads, seed=seed)
    text = bench_to_text(report)
    if args.out:
        _atomic_write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.json_out:
        _atomic_write_text(args.json_out, bench_to_json(report))
        print(f"wrote {args.json_out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if getattr(args, "threads", None):
        if "numpy" not in sys.modules:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS",
                        "VECLIB_MAXIMUM_THREADS"):
                os.environ.setdefault(var, str(args.threads))

    from .model import ConfigError
    from .weights import FormatError, MissingTensorError, ShapeMismatchError
    from .train import NumericsError

    handlers = {
        "summary": cmd_summary,
        "train-toy": cmd_train_toy,
        "eval": cmd_eval,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except NumericsError as e:
        print(f"lapx: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, MissingTensorError, ShapeMismatchError) as e:
        print(f"lapx: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        if isinstance(e.code, str):
            print(e.code, file=sys.stderr)
            return EXIT_USAGE
        return e.code if e.code is not None else EXIT_OK
    except FileNotFoundError as e:
        print(f"lapx: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"lapx: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
