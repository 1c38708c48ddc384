"""Command-line entry point: ``camsam2 <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from camsam2.config import OpgConfig, Settings, load_settings
from camsam2.errors import ConfigError, DataError, PromptError

log = logging.getLogger("camsam2")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
OPG_FIELDS = [f.name for f in dataclasses.fields(OpgConfig)]


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 already; keep the message short
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_common(p: argparse.ArgumentParser, opg: bool = False) -> None:
    p.add_argument("--config", help="flat 'key = value' file; command-line flags win")
    p.add_argument("--seed", type=int, help="global seed (run.seed)")
    if opg:
        for name in OPG_FIELDS:
            p.add_argument(f"--opg.{name}", dest=f"opg_{name}", metavar="V")


def _add_prompt(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prompt", choices=("point", "box", "mask"), default="point")
    p.add_argument("--clicks", type=int, default=1)
    p.add_argument("--prompt-seed", type=int, default=42)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="camsam2", description="Camouflage adapter on a desk-scale SAM2-style tracker.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic camouflage dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=32)
    p.add_argument("--strength", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--label-stride", type=int, default=1)
    p.add_argument("--distractors", type=int, default=0, help="non-target movers per clip")

    p = sub.add_parser("pretrain-base", help="train and freeze the surrogate on easy clips")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    _add_common(p)

    p = sub.add_parser("train", help="train the adapter on a frozen base")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--base", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--loss-log", help="write per-step losses to this file")
    _add_common(p, opg=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ckpt", required=True)
    _add_prompt(p)
    p.add_argument("--toggle", choices=("on", "off"), default="on")
    p.add_argument("--csv")
    p.add_argument("--curve", help="optional per-frame Dice plot (PNG)")
    _add_common(p, opg=True)

    p = sub.add_parser("infer", help="segment one video directory")
    p.add_argument("--video", required=True)
    p.add_argument("--ckpt", required=True)
    _add_prompt(p)
    p.add_argument("--toggle", choices=("on", "off"), default="on")
    p.add_argument("--overlay-dir")
    _add_common(p, opg=True)

    p = sub.add_parser("overhead", help="latency and parameter accounting")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--video", required=True)
    p.add_argument("--frames", type=int, default=100)
    _add_common(p, opg=True)
    return ap


def _settings(args) -> Settings:
    overrides = {}
    if getattr(args, "seed", None) is not None and args.command != "synth":
        overrides["run.seed"] = str(args.seed)
    for name in OPG_FIELDS:
        v = getattr(args, f"opg_{name}", None)
        if v is not None:
            overrides[f"opg.{name}"] = v
    return load_settings(getattr(args, "config", None), overrides)


def _opg_override(args, settings: Settings) -> OpgConfig | None:
    """OPG config to impose on a loaded checkpoint, or None to keep the stored one."""
    given = any(getattr(args, f"opg_{n}", None) is not None for n in OPG_FIELDS)
    return settings.opg if (given or args.config) else None


def cmd_synth(args) -> int:
    from camsam2.synthcam import SynthConfig, generate_dataset, write_dataset

    cfg = SynthConfig(H=args.size, W=args.size, n_frames=args.frames, strength=args.strength,
                      label_stride=args.label_stride, distractors=args.distractors, seed=args.seed)
    path = write_dataset(generate_dataset(args.clips, cfg), args.out, args.split)
    print(f"wrote {args.clips} clips to {path}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from camsam2.harness.checkpoint import save_base
    from camsam2.harness.train import TrainLog, pretrain_base
    from camsam2.synthcam import read_dataset

    s = _settings(args)
    clips = read_dataset(args.data, args.split)
    tl = TrainLog()
    base = pretrain_base(clips, s.run, s.model, steps=args.steps, log_=tl)
    save_base(args.out, base, extra={"losses": tl.losses})
    print(f"base saved to {args.out}; final loss {tl.losses[-1]:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    from camsam2.harness.checkpoint import load_base, save_model
    from camsam2.harness.train import TrainLog, train_adapter
    from camsam2.synthcam import read_dataset

    s = _settings(args)
    base = load_base(args.base)
    clips = read_dataset(args.data, args.split)
    tl = TrainLog()
    out = Path(args.out)
    model, opt = train_adapter(clips, base, s.run, s.opg, steps=args.steps, log_=tl,
                               dump_dir=out.parent / "nan_dumps")
    save_model(out, model, opt.state_dict(), extra={"losses": tl.losses})
    if args.loss_log:
        Path(args.loss_log).write_text("".join(f"{i + 1}\t{v:.6f}\n" for i, v in enumerate(tl.losses)))
    print(f"adapter saved to {out}; loss {tl.losses[0]:.4f} -> {tl.losses[-1]:.4f}")
    return EXIT_OK


def _protocol(args, toggle: str):
    from camsam2.harness.infer import EvalProtocol

    if args.clicks < 1:
        raise ConfigError("--clicks must be >= 1")
    return EvalProtocol(prompt=args.prompt, clicks=args.clicks, seed=args.prompt_seed, toggle=toggle == "on")


def cmd_eval(args) -> int:
    from camsam2.harness.checkpoint import load_model
    from camsam2.harness.infer import evaluate
    from camsam2.synthcam import read_dataset

    s = _settings(args)
    model = load_model(args.ckpt, _opg_override(args, s))
    proto = _protocol(args, args.toggle)
    clips = read_dataset(args.data, args.split)
    o = model.opg_cfg
    extra = {"toggle": args.toggle, "prompt": args.prompt, "clicks": args.clicks, "k": o.k,
             "distance": o.distance, "sampling": o.sampling, "clustering": o.clustering}
    rows, overall = evaluate(clips, model, proto, args.csv, extra)
    if args.curve:
        from camsam2.harness.infer import infer_video, first_prompt, plot_curve
        from camsam2.metrics import dice_iou

        per = {}
        for clip in clips[:4]:
            pred = infer_video(clip, first_prompt(clip, proto), model, proto.toggle)
            per[clip.clip_id] = [dice_iou(p, g)[0] for p, g in zip(pred.probabilities, clip.masks) if g is not None]
        plot_curve(per, args.curve)
    print(f"{len(rows)} videos  " + "  ".join(f"{k}={v}" for k, v in overall.percent_row().items()))
    return EXIT_OK


def cmd_infer(args) -> int:
    from camsam2.harness.checkpoint import load_model
    from camsam2.harness.infer import first_prompt, infer_video, save_overlays
    from camsam2.synthcam import read_clip

    s = _settings(args)
    model = load_model(args.ckpt, _opg_override(args, s))
    clip = read_clip(args.video)
    pred = infer_video(clip, first_prompt(clip, _protocol(args, args.toggle)), model, args.toggle == "on")
    if args.overlay_dir:
        save_overlays(clip, pred, args.overlay_dir)
    areas = [int(m.sum()) for m in pred.masks]
    print(f"{clip.clip_id}: {len(areas)} frames, mask areas {areas}")
    return EXIT_OK


def cmd_overhead(args) -> int:
    from camsam2.harness.checkpoint import load_model
    from camsam2.harness.overhead import measure_overhead
    from camsam2.synthcam import read_clip

    s = _settings(args)
    model = load_model(args.ckpt, _opg_override(args, s))
    report = measure_overhead(model, read_clip(args.video), args.frames)
    print("\n".join(report.lines()))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "pretrain-base": cmd_pretrain, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "overhead": cmd_overhead}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PromptError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
