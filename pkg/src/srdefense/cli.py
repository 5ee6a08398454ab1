"""``srdefense`` command line: a thin layer over :mod:`srdefense.experiments`."""

import argparse
import json
import logging
import sys

from . import experiments
from .config import dump_config, load_config
from .errors import SRDefenseError


def _common(p):
    p.add_argument("--config", help="run configuration file (dotted key = value)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="override the output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="srdefense", description="wavelet denoising + super-resolution defense workbench")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (or load the cached) classifier")
    _common(p)
    p.add_argument("--arch", help="smallcnn or resnet-<9n+2>; defaults to model.arch")

    p = sub.add_parser("train-sr", help="train (or load the cached) super-resolution network")
    _common(p)
    p.add_argument("--scale", type=int, choices=(2, 3, 4))

    p = sub.add_parser("attack", help="write adversarial PNGs and a manifest")
    _common(p)
    p.add_argument("--attack", required=True, help="attack label or kind")
    p.add_argument("--count", type=int, help="number of images (default dataset.subset)")
    p.add_argument("--dest", help="output directory (default <out>/attacks/<label>)")

    p = sub.add_parser("defend", help="defend a directory of PNGs")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--stage", default="wd_sr", choices=sorted(experiments.STAGE_ALIASES) + ["wd_only", "sr_only"])

    p = sub.add_parser("evaluate", help="gray-box table (optionally white-box and interpolation tables)")
    _common(p)
    p.add_argument("--whitebox", action="store_true")
    p.add_argument("--interp", action="store_true", help="add the SR/interpolation comparison table")

    for name, text in (
        ("sweep", "scale x sigma grid search"),
        ("spectrum", "DCT spectrum PNG bundle"),
        ("cam", "class activation maps and peak agreement"),
        ("probe", "clean-vs-adversarial feature probe"),
        ("advtrain", "baseline / FGSM / robust training comparison"),
        ("transfer", "cross-model PGD transfer matrix"),
    ):
        _common(sub.add_parser(name, help=text))

    sub.add_parser("show-config", help="print the effective configuration").add_argument("--config")
    return parser


def _print_tables(record, path):
    for name, table in record.tables.items():
        print(f"[{name}]")
        print(table.format())
        extra = {k: v for k, v in table.metadata.items() if k in ("recommended", "violations", "same_model")}
        if extra:
            print(json.dumps(extra, indent=2))
    print(f"record: {path}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        if args.command == "show-config":
            sys.stdout.write(dump_config(load_config(args.config)))
            return 0
        cfg = load_config(args.config, args.seed, args.out)
        cmd = args.command
        if cmd == "train":
            clf, path = experiments.run_train(cfg, args.arch)
            print(f"{clf.fingerprint()} test_accuracy={clf.metadata.get('test_accuracy')} -> {path}")
        elif cmd == "train-sr":
            net, path = experiments.run_train_sr(cfg, args.scale)
            print(f"val_psnr={net.metadata.get('val_psnr')} bicubic={net.metadata.get('val_psnr_bicubic')} -> {path}")
        elif cmd == "attack":
            res, path = experiments.run_attack(cfg, args.attack, args.count, args.dest)
            print(f"success_rate={res.success.mean():.4f} max_linf={res.linf.max():.6f} -> {path}")
        elif cmd == "defend":
            print(experiments.run_defend(cfg, args.input, args.output, args.stage))
        elif cmd == "evaluate":
            _print_tables(*experiments.run_evaluate(cfg, args.whitebox, args.interp))
        elif cmd == "sweep":
            _print_tables(*experiments.run_sweep(cfg))
        elif cmd == "advtrain":
            _print_tables(*experiments.run_advtrain(cfg))
        elif cmd == "transfer":
            _print_tables(*experiments.run_transfer(cfg))
        elif cmd == "spectrum":
            report, path = experiments.run_spectrum(cfg)
            print(json.dumps(report.energy, indent=2))
            print(f"{len(report.files)} PNGs -> {path}")
        elif cmd == "cam":
            stats, path = experiments.run_cam(cfg)
            print(json.dumps(stats, indent=2))
            print(f"heatmaps -> {path}")
        elif cmd == "probe":
            report, path = experiments.run_probe(cfg)
            print(json.dumps(report.to_dict(), indent=2))
            print(f"projection -> {path}")
    except (SRDefenseError, ValueError, FileNotFoundError, FileExistsError) as exc:
        print(f"srdefense {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
