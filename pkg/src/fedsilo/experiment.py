"""Experiment orchestration: dataset layout, seeded runs, JSON reports."""

import concurrent.futures
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import __version__, dataio, datagen, federation, metrics, nn

log = logging.getLogger("fedsilo.experiment")

SINGLE_MODEL_STRATEGIES = ("Pooled", "FedAvg", "FedProx")
PERSONALIZED_STRATEGIES = ("Local", "SiloBN")


def synthetic_spec(cfg):
    d = cfg["data"]
    return datagen.SyntheticSpec(
        n_centers=d["n_centers"],
        samples_per_center=d["samples_per_center"],
        image_size=d["image_size"],
        channels=d["channels"],
        class_balance=d["class_balance"],
        shift_magnitude=d["shift_magnitude"],
        blob_amplitude=d["blob_amplitude"],
        noise_level=d["noise_level"],
        seed=d["data_seed"],
    )


def model_spec(cfg):
    m = cfg["model"]
    return nn.dcnn_spec(
        with_bn=m["with_bn"],
        conv_channels=m["conv_channels"],
        in_channels=cfg["data"]["channels"],
        image_size=cfg["data"]["image_size"],
        bn_momentum=m["bn_momentum"],
        bn_eps=m["bn_eps"],
    )


def federation_config(cfg, capture_updates=False):
    f = cfg["federation"]
    return federation.FederationConfig(
        strategy=f["strategy"],
        rounds=f["rounds"],
        local_updates=f["local_updates"],
        batch_size=f["batch_size"],
        fedprox_lambda=f["fedprox_lambda"],
        hyper=cfg.adam_hyper(),
        capture_updates=capture_updates,
    )


def run_dtype(cfg):
    name = cfg["run"]["dtype"]
    if name not in ("float64", "float32"):
        raise ValueError(f"dtype must be float64 or float32, got {name!r}")
    return np.dtype(name)


def generate_centers(cfg, out_dir):
    """Write center_<k>/{train,val,test}.fsd for the synthetic spec."""
    spec = synthetic_spec(cfg)
    d = cfg["data"]
    ratios = (d["train_ratio"], d["val_ratio"], d["test_ratio"])
    out_dir = Path(out_dir)
    counts = []
    for ds in datagen.generate_synthetic(spec):
        splits = datagen.split_partitions(ds, ratios, seed=d["data_seed"])
        center_dir = out_dir / f"center_{ds.center_id}"
        center_dir.mkdir(parents=True, exist_ok=True)
        for name, split in zip(("train", "val", "test"), splits):
            dataio.save_dataset(split, center_dir / f"{name}.fsd")
        counts.append({"center": ds.center_id,
                       "train": splits[0].n, "val": splits[1].n,
                       "test": splits[2].n})
    return counts


def load_centers(data_dir, n_centers):
    """Load the per-center splits written by generate_centers."""
    data_dir = Path(data_dir)
    centers = {}
    for k in range(n_centers):
        center_dir = data_dir / f"center_{k}"
        if not center_dir.is_dir():
            raise FileNotFoundError(f"missing dataset directory {center_dir}")
        centers[k] = {
            name: dataio.load_dataset(center_dir / f"{name}.fsd", center_id=k)
            for name in ("train", "val", "test")
        }
    return centers


def _make_silos(spec, centers, init_params, fed_cfg, seed, dtype):
    silos = []
    for k in sorted(centers):
        train = centers[k]["train"]
        silos.append(federation.make_silo(
            k, train.images.astype(dtype), train.labels.astype(np.int64),
            spec, init_params, fed_cfg, seed,
        ))
    return silos


def train_one_seed(cfg, centers, seed, capture_updates=False):
    """One full training run; returns (models, FederationResult).

    ``models`` maps center_id -> ParamSet for personalized strategies and
    holds the single entry {-1: ParamSet} otherwise.
    """
    spec = model_spec(cfg)
    fed_cfg = federation_config(cfg, capture_updates)
    dtype = run_dtype(cfg)
    init_params = nn.build_model(spec, seed, dtype=dtype)

    if fed_cfg.strategy == "Pooled":
        images = np.concatenate([centers[k]["train"].images for k in sorted(centers)])
        labels = np.concatenate([centers[k]["train"].labels for k in sorted(centers)])
        silos = [federation.make_silo(0, images.astype(dtype),
                                      labels.astype(np.int64), spec,
                                      init_params, fed_cfg, seed)]
    else:
        silos = _make_silos(spec, centers, init_params, fed_cfg, seed, dtype)

    result = federation.run_federation(silos, spec, fed_cfg)

    if fed_cfg.strategy == "Pooled":
        models = {-1: result.silos[0].params}
    elif fed_cfg.strategy in ("FedAvg", "FedProx"):
        models = {-1: result.silos[0].params}  # broadcast global, full key set
    else:
        models = {s.silo_id: s.params for s in result.silos}
    return models, result


def evaluate_run(cfg, centers, models):
    spec = model_spec(cfg)
    test_sets = {k: centers[k]["test"] for k in centers}
    if -1 in models:
        return metrics.evaluate_intra(spec, models[-1], test_sets)
    return metrics.evaluate_intra(spec, models, test_sets)


def run_seed(cfg, centers, seed):
    models, result = train_one_seed(cfg, centers, seed)
    report = evaluate_run(cfg, centers, models)
    round_losses = [
        {str(sid): loss for sid, loss in r.losses.items()} for r in result.rounds
    ]
    return {
        "seed": seed,
        "round_losses": round_losses,
        "per_center_auc": {str(k): v for k, v in report.per_center_auc.items()},
        "mauc": report.mauc,
    }, models, result


def run_experiment(cfg, data_dir, out_dir, n_seeds=None, threads=1):
    """Train across seeds, write report.json and model snapshots."""
    t0 = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    centers = load_centers(data_dir, cfg["data"]["n_centers"])
    n_seeds = n_seeds or cfg["run"]["n_seeds"]
    base_seed = cfg["run"]["seed"]
    seeds = [base_seed + i for i in range(n_seeds)]
    strategy = cfg["federation"]["strategy"]

    def one(seed):
        return run_seed(cfg, centers, seed)

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, seeds))
    else:
        results = [one(seed) for seed in seeds]

    seed_reports = []
    communicated = None
    models_dir = out_dir / "models"
    models_dir.mkdir(exist_ok=True)
    for (entry, models, result) in results:
        seed_reports.append(entry)
        if result.rounds and communicated is None:
            communicated = list(result.rounds[0].communicated_keys)
        for center_id, params in models.items():
            name = (f"seed{entry['seed']}_global.fsm" if center_id < 0
                    else f"seed{entry['seed']}_center{center_id}.fsm")
            dataio.save_model(params, models_dir / name)

    maucs = [e["mauc"] for e in seed_reports]
    report = {
        "tool_version": __version__,
        "strategy": strategy,
        "config_echo": cfg.echo(),
        "seeds": seed_reports,
        "mauc_mean": float(np.mean(maucs)),
        "mauc_std": float(np.std(maucs)),
        "communicated_keys": communicated or [],
        "wall_clock_s": time.time() - t0,
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1)
        f.write("\n")
    log.info("strategy=%s mAUC=%.4f +/- %.4f", strategy, report["mauc_mean"],
             report["mauc_std"])
    return report
