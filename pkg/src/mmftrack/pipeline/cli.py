"""Command-line entry point: init-weights, synth, track, eval, selftest."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from ..weights import init_store, load_store, save_store
from .config import STRATEGIES, load_json_section, load_tracker_config
from .evaluation import evaluate_entries
from .io import load_results, read_sequence, result_to_dict, write_json, write_sequence
from .synthetic import SynthConfig, camera_matrices, generate_synthetic
from .tracker import track_sequence


def cmd_init_weights(args) -> int:
    cfg = load_tracker_config(args.config)
    ws = init_store(cfg, args.seed)
    save_store(ws, args.out)
    print(f"wrote {len(ws)} tensors to {args.out}")
    return 0


def cmd_synth(args) -> int:
    scfg = SynthConfig.from_dict(load_json_section(args.config, "synth"))
    syn = generate_synthetic(scfg, args.seed)
    k, tr = camera_matrices(scfg)
    write_sequence(syn.sequence, args.out, k, tr)
    print(f"wrote {len(syn.sequence)} frames to {args.out}")
    return 0


def cmd_track(args) -> int:
    cfg = load_tracker_config(args.config)
    overrides = {}
    if args.strategy:
        overrides["strategy"] = args.strategy
    if args.diagnostic:
        overrides["diagnostic"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    seq = read_sequence(args.seq)
    if seq.gt is None:
        print("error: the sequence has no gt.txt to take the initial box from", file=sys.stderr)
        return 2
    ws = None
    if args.weights:
        ws = load_store(args.weights)
    elif not cfg.diagnostic:
        print("error: --weights is required unless --diagnostic is set", file=sys.stderr)
        return 2
    res = track_sequence(seq, seq.gt[0], cfg, ws)
    extra = {"strategy": cfg.strategy, "diagnostic": cfg.diagnostic, "success": res.success, "precision": res.precision}
    write_json(args.out, result_to_dict(res, extra))
    print(f"tracked {len(res.frames)} frames; success {res.success:.2f}, precision {res.precision:.2f}")
    return 0


def cmd_eval(args) -> int:
    metrics = evaluate_entries(load_results(args.pred), args.gt)
    write_json(args.out, metrics)
    for cat, v in metrics["per_category"].items():
        print(f"{cat}: success {v['success']:.2f} precision {v['precision']:.2f} ({v['frames']} frames)")
    return 0


def cmd_selftest(args) -> int:
    from ..selftest import all_checks

    results = all_checks(quick=args.quick)
    for r in results:
        print(r.line())
    return 0 if all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmftrack", description="Multi-modal 3D single-object tracker")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init-weights", help="write a seeded random weight file")
    s.add_argument("--config", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_init_weights)

    s = sub.add_parser("synth", help="generate a synthetic sequence directory")
    s.add_argument("--config", type=Path)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("track", help="track the frame-0 gt box through a sequence")
    s.add_argument("--seq", type=Path, required=True)
    s.add_argument("--weights", type=Path)
    s.add_argument("--config", type=Path)
    s.add_argument("--strategy", choices=STRATEGIES)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--diagnostic", action="store_true")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("eval", help="score results.json against gt")
    s.add_argument("--pred", type=Path, required=True)
    s.add_argument("--gt", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="run the oracle suites")
    s.add_argument("--quick", action="store_true", help="smaller instance counts")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
