"""Command line interface: generate / train / eval / gradcheck."""

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, config, dataio, experiment, gradcheck, metrics, nn

log = logging.getLogger("fedsilo")

EXIT_OK = 0
EXIT_ERROR = 1


def _setup_logging():
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("FEDSILO_LOG", "info"),
                                         logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(args):
    cfg = config.load_config(args.config)
    if getattr(args, "seeds", None):
        cfg["run"]["n_seeds"] = args.seeds
    if getattr(args, "f32", False):
        cfg["run"]["dtype"] = "float32"
    return cfg


def cmd_generate(args):
    cfg = _load_config(args)
    counts = experiment.generate_centers(cfg, args.out)
    for c in counts:
        print(f"center_{c['center']}: train={c['train']} val={c['val']} "
              f"test={c['test']}")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args)
    report = experiment.run_experiment(cfg, args.data, args.out,
                                       threads=args.threads)
    print(f"strategy={report['strategy']} "
          f"mAUC={report['mauc_mean']:.4f} +/- {report['mauc_std']:.4f}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return EXIT_OK


def _collect_models(paths):
    """Map model files to center ids via a 'center<k>' filename token;
    files without one are treated as the single global model."""
    models = {}
    for p in paths:
        params = dataio.load_model(p)
        m = re.search(r"center(\d+)", Path(p).name)
        models[int(m.group(1)) if m else -1] = params
    return models


def cmd_eval(args):
    cfg = _load_config(args)
    spec = experiment.model_spec(cfg)
    models = _collect_models(args.models)
    out = {}

    if args.target is None:
        if not args.data:
            raise config.ConfigError("eval without --target requires --data")
        centers = experiment.load_centers(args.data, cfg["data"]["n_centers"])
        report = experiment.evaluate_run(cfg, centers, models)
        out["per_center_auc"] = {str(k): v for k, v in report.per_center_auc.items()}
        out["mauc"] = report.mauc
        for k, v in sorted(report.per_center_auc.items()):
            print(f"center {k}: AUC = {v:.4f}")
        print(f"mAUC = {report.mauc:.4f}")
    else:
        target_dir = Path(args.target)
        test = dataio.load_dataset(target_dir / "test.fsd")
        train = dataio.load_dataset(target_dir / "train.fsd")
        params = next(iter(models.values()))
        stats = {k: params[k] for k in nn.stat_keys(spec)}
        shared = params
        auc_plain = metrics.evaluate_out_of_domain(spec, shared, stats, test,
                                                   adapt=False)
        out["auc"] = auc_plain
        print(f"out-of-domain AUC (no adaptation) = {auc_plain:.4f}")
        if args.adabn:
            if not nn.stat_keys(spec):
                log.warning("--adabn is a no-op: model has no BN layers")
                out["auc_adabn"] = auc_plain
            else:
                bs = cfg["federation"]["batch_size"]
                n_batches = cfg["evaluation"]["adabn_batch_count"]
                batches = [train.images[i * bs:(i + 1) * bs]
                           for i in range(n_batches)
                           if train.images[i * bs:(i + 1) * bs].shape[0] > 0]
                auc_ad = metrics.evaluate_out_of_domain(
                    spec, shared, stats, test, adapt=True,
                    adaptation_batches=batches)
                out["auc_adabn"] = auc_ad
                print(f"out-of-domain AUC (AdaBN) = {auc_ad:.4f}")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump(out, f, indent=1)
            f.write("\n")
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = _load_config(args)
    if cfg["run"]["dtype"] != "float64":
        print("ERROR gradcheck requires the 64-bit build", file=sys.stderr)
        return EXIT_ERROR
    channels = args.channels or (4, 8)
    size = args.image_size
    failed = False
    for with_bn, tol in ((False, 1e-5), (True, 1e-4)):
        spec = nn.dcnn_spec(with_bn, channels, in_channels=cfg["data"]["channels"],
                            image_size=size)
        res = gradcheck.grad_check(spec, seed=cfg["run"]["seed"], h=args.h)
        name = "DCNN+BN" if with_bn else "DCNN"
        status = "ok" if res.max_rel_error < tol else "FAIL"
        print(f"{name}: max rel err {res.max_rel_error:.3e} (tol {tol:.0e}) "
              f"worst {res.worst_key} -> {status}")
        failed = failed or status == "FAIL"
    return EXIT_ERROR if failed else EXIT_OK


def _int_tuple(s):
    return tuple(int(p) for p in s.split(","))


def build_parser():
    parser = argparse.ArgumentParser(prog="fedsilo",
                                     description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic center datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="dataset root directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="run the configured strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seeds", type=int, help="override n_seeds")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--f32", action="store_true", help="train in 32-bit floats")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate model snapshots")
    p.add_argument("models", nargs="+", help="model snapshot file(s)")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset root for intra-center evaluation")
    p.add_argument("--target", help="foreign center directory for "
                                    "out-of-domain evaluation")
    p.add_argument("--adabn", action="store_true",
                   help="recompute BN statistics on the target train split")
    p.add_argument("--out", help="write metrics JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--config", required=True)
    p.add_argument("--channels", type=_int_tuple,
                   help="conv channels for the checked model (default 4,8)")
    p.add_argument("--image-size", type=int, default=8)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (config.ConfigError, dataio.FormatError, FileNotFoundError,
            ValueError, KeyError) as e:
        code = type(e).__name__
        print(f"ERROR [{code}] {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
