"""Command-line entry point.

Subcommands: gen-synth, preprocess, train, eval, gradcheck, info.
Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 gradient
check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import echo_config, load_run_config
from .gradcheck import NonFiniteError, model_grad_check, tiny_model_config
from .model import (ModelConfig, cost_breakdown, init_params, load_checkpoint,
                    param_count, flops_estimate)
from .preprocess import ConfigurationError, WindowSkip, assemble_sample, segment_windows
from .sampleio import (FormatError, Labels, read_frame_dir, read_label_csv,
                       read_landmark_csv, write_sample)
from .synth import gen_dataset
from .tensor import ContractError
from .train import Dataset, evaluate, train_loop

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_GRADCHECK = 4

GRADCHECK_TOLERANCE = 1e-4


def _cmd_gen_synth(args) -> int:
    cfg = load_run_config(args.config)
    if args.n is not None:
        cfg.synth.n_samples = args.n
    if args.seed is not None:
        cfg.synth.seed = args.seed
    manifest = gen_dataset(cfg.synth, args.out)
    echo_config(cfg, args.out)
    print(f"wrote {len(manifest['samples'])} samples to {args.out}")
    return EXIT_OK


def _cmd_preprocess(args) -> int:
    cfg = load_run_config(args.config)
    pp = cfg.preprocess
    stream = read_frame_dir(args.frames)
    landmarks = read_landmark_csv(args.landmarks)
    labels = read_label_csv(args.labels)
    t_frames = stream.frames.shape[0]
    if landmarks.shape[0] != t_frames or labels.shape[0] != t_frames:
        raise ConfigurationError(
            f"stream lengths disagree: {t_frames} frames, "
            f"{landmarks.shape[0]} landmark rows, {labels.shape[0]} label rows")
    windows = segment_windows(t_frames, pp.window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written, skipped = 0, 0
    entries = []
    for start, stop in windows:
        mid = (start + stop) // 2
        h, r, d, c = labels[mid]
        try:
            bundle = assemble_sample(stream, landmarks, (start, stop),
                                     Labels(h, r, int(d), int(c)),
                                     pp.regions, pp.filter)
        except WindowSkip as e:
            skipped += 1
            print(f"skipping window [{start}, {stop}): {e}", file=sys.stderr)
            continue
        name = f"sample_{written:05d}.vdms"
        write_sample(bundle, out / name)
        entries.append({"file": name, "h": float(h), "r": float(r),
                        "d": int(d), "c": int(c), "window": [start, stop]})
        written += 1
    (out / "manifest.json").write_text(json.dumps(
        {"version": 1, "samples": entries}, indent=1))
    echo_config(cfg, args.out)
    if not windows:
        print(f"warning: stream of {t_frames} frames is shorter than one "
              f"window ({pp.window.f}); no samples written", file=sys.stderr)
    print(f"wrote {written} samples, skipped {skipped} windows")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    dataset = Dataset.from_dir(args.data)
    ps = init_params(cfg.model, seed=cfg.train.seed)
    if args.init_ckpt:
        ps = load_checkpoint(args.init_ckpt)
    echo_config(cfg, args.out)
    final = train_loop(ps, dataset, cfg.train, cfg.loss, args.out,
                       resume_from=args.resume,
                       log=lambda msg: print(msg, file=sys.stderr))
    print(f"final checkpoint: {final}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    ps = load_checkpoint(args.ckpt)
    dataset = Dataset.from_dir(args.data)
    report = evaluate(ps, dataset, cfg.loss)
    print(report.to_json())
    print(report.to_table(), file=sys.stderr)
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    if args.tiny:
        model_cfg = tiny_model_config()
        loss_cfg = load_run_config(args.config).loss
    else:
        cfg = load_run_config(args.config)
        model_cfg = ModelConfig(**{**vars(cfg.model), "dtype": "float64"})
        loss_cfg = cfg.loss
    err = model_grad_check(model_cfg, loss_cfg)
    print(f"max relative gradient error: {err:.3e} "
          f"(tolerance {GRADCHECK_TOLERANCE:.0e})")
    return EXIT_OK if err < GRADCHECK_TOLERANCE else EXIT_GRADCHECK


def _cmd_info(args) -> int:
    cfg = load_run_config(args.config)
    info = cost_breakdown(cfg.model)
    info["total"]["params"] = param_count(cfg.model)
    info["total"]["flops"] = flops_estimate(cfg.model)
    print(json.dumps(info, indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="videodms",
                                description="driver-state model toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=None, help="override sample count")
    g.add_argument("--seed", type=int, default=None, help="override seed")
    g.set_defaults(fn=_cmd_gen_synth)

    g = sub.add_parser("preprocess", help="window a frame stream into samples")
    g.add_argument("--frames", required=True, help="frames.json manifest")
    g.add_argument("--landmarks", required=True, help="per-frame landmark CSV")
    g.add_argument("--labels", required=True, help="per-frame label CSV (h,r,d,c)")
    g.add_argument("--config", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_preprocess)

    g = sub.add_parser("train", help="train on a directory of samples")
    g.add_argument("--config", default=None)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=None, help="override seed")
    g.add_argument("--resume", default=None, help="train_state .npz to resume from")
    g.add_argument("--init-ckpt", default=None, help="start from a .vdck checkpoint")
    g.set_defaults(fn=_cmd_train)

    g = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--config", default=None)
    g.set_defaults(fn=_cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--config", default=None)
    g.add_argument("--tiny", action="store_true",
                   help="use the built-in scaled-down 64-bit model")
    g.set_defaults(fn=_cmd_gradcheck)

    g = sub.add_parser("info", help="parameter and FLOP accounting")
    g.add_argument("--config", default=None)
    g.set_defaults(fn=_cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (FormatError, FileNotFoundError, IsADirectoryError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except NonFiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_GRADCHECK
    except (ConfigurationError, ContractError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
