"""``fdnet`` command line.

Exit codes: 0 on success, 1 for invalid input, 2 for a numerical failure
(non-finite training loss or a failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .data import DatasetIndex, read_gray, read_mask, split_dataset, synth_generate
from .metrics import evaluate_dataset
from .persistence import FormatError
from .training import NumericalError

log = logging.getLogger("fdnet")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


def _cmd_synth(args) -> int:
    index = synth_generate(args.n, args.size, args.seed, args.out, args.contrast)
    print(f"wrote {len(index.entries)} samples to {args.out}")
    return EXIT_OK


def _cmd_split(args) -> int:
    index = split_dataset(DatasetIndex.load(args.root), args.ratio, args.seed)
    index.save()
    n_train = len(index.subset("train"))
    print(f"train={n_train} test={len(index.entries) - n_train}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = pipeline.TrainConfig.from_json(args.config)
    if args.data:
        cfg.data = args.data
    if args.out:
        cfg.out = args.out

    def report(row):
        if row["step"] % max(args.log_every, 1) == 0:
            log.info("step %d total %.4f lr %.5f", row["step"], row["total"], row["lr"])

    result = pipeline.train(cfg, callback=report)
    print(f"checkpoint {result.checkpoint}")
    print(f"loss log {result.loss_log}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    written = pipeline.infer(args.ckpt, args.inp, args.out)
    print(f"wrote {len(written)} maps to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    preds = {p.stem: p for p in pred_dir.glob("*.png")}
    gts = {p.stem: p for p in gt_dir.glob("*.png")}
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise ValueError(f"no prediction for {len(missing)} ground-truth masks, first: {missing[0]}")
    if not gts:
        raise ValueError(f"no ground-truth masks in {gt_dir}")
    pairs = [(k, read_gray(preds[k]), read_mask(gts[k])) for k in sorted(gts)]
    report = evaluate_dataset(pairs)
    report.to_csv(args.out)
    for k, v in report.as_dict().items():
        print(f"{k} {v:.4f}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    reports = pipeline.gradcheck_cmd(args.scope, seed=args.seed, corrupt=args.corrupt)
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.op_name:48s} rel={r.max_rel_error:.2e} abs={r.max_abs_error:.2e} n={r.n_checked}")
    failed = sum(not r.passed for r in reports)
    print(f"{len(reports) - failed}/{len(reports)} passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic camouflage dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--contrast", type=float, default=0.5)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("split", help="assign train/test splits in a dataset index")
    p.add_argument("--root", default="data")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset root, overrides the config")
    p.add_argument("--out", help="run directory, overrides the config")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="write probability maps for a folder of images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score prediction PNGs against masks")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    p.add_argument("--scope", choices=("ops", "modules", "full"), default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", action="store_true", help="inject a wrong gradient (should fail)")
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, FormatError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
