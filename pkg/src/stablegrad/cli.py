"""Command line entry point.

    stablegrad train --preset moons --out runs/moons
    stablegrad eval --checkpoint runs/moons/model.ckpt --preset moons --eps 0.1 --out runs/moons
    stablegrad laplacian-converge --preset circle --out runs/conv
    stablegrad sparsify-audit --preset default --out runs/audit
    stablegrad regions --checkpoint runs/moons/model.ckpt --preset moons --out runs/moons

Exit status: 0 on success, 1 on configuration errors, 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import TOOL
from . import config as cfgmod
from . import presets
from .adversary import AttackConfig, evaluate
from .datasets import KINDS, DatasetSpec, load_or_generate
from .errors import ConfigError, StablegradError
from .laplacian import (
    PointCloud,
    build_graph,
    convergence_experiment,
    median_scale,
    sparsify_audit,
    write_convergence_csv,
)
from .relu_net import count_linear_regions_1d, load_checkpoint
from .trainer import TrainConfig, train

def _resolve(args, subcommand: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    if getattr(args, "preset", None):
        mapping = presets.get(subcommand, args.preset)
    if getattr(args, "config", None):
        mapping.update(cfgmod.load_file(args.config))
    mapping = cfgmod.apply_overrides(mapping, getattr(args, "set", None))
    return cfgmod.apply_seed_env(mapping)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _csv_header(fh, config_hash: str) -> None:
    fh.write(f"# {TOOL} config={config_hash}\n")


def cmd_train(args) -> int:
    cfg = TrainConfig.from_mapping(_resolve(args, "train"))
    data = load_or_generate(cfg.dataset)
    result = train(cfg, data, _out_dir(args))
    last = result.metrics[-1] if result.metrics else {}
    print(json.dumps({"config_hash": cfg.hash(), "epochs": cfg.epochs, **{k: last.get(k) for k in ("train_accuracy", "test_accuracy")}}))
    return 0


def _dataset_from(m: dict[str, str], override: str | None) -> DatasetSpec:
    if override:
        if override in KINDS:
            m["dataset"] = override
        else:
            m["dataset"] = "csv-table"
            m["dataset.path"] = override
    seed = cfgmod.integer(m["seed"], "seed") if "seed" in m else 0
    return DatasetSpec.from_mapping(m, default_seed=seed)


def cmd_eval(args) -> int:
    m = _resolve(args, "eval")
    for flag, key in (("eps", "eps"), ("steps", "steps"), ("restarts", "restarts"), ("step_size", "step_size"), ("seed", "seed")):
        if getattr(args, flag) is not None:
            m[key] = str(getattr(args, flag))
    attack = {
        "eps": cfgmod.number(m.pop("eps", "0"), "eps"),
        "steps": cfgmod.integer(m.pop("steps", "20"), "steps"),
        "restarts": cfgmod.integer(m.pop("restarts", "10"), "restarts"),
        "seed": cfgmod.integer(m.get("seed", "0"), "seed"),
    }
    if "step_size" in m:
        attack["step_size"] = cfgmod.number(m.pop("step_size"), "step_size")
    clip = m.pop("clip", "auto")
    split = m.pop("split", "test")
    if split not in ("test", "train"):
        raise ConfigError(f"split must be 'test' or 'train', got {split!r}")
    resolved = dict(m, **{k: str(v) for k, v in attack.items()}, clip=clip, split=split)
    spec = _dataset_from(m, args.dataset)
    m.pop("seed", None)
    cfgmod.ensure_consumed(m)
    params = load_checkpoint(args.checkpoint)
    data = load_or_generate(spec)
    if clip == "auto":
        attack["clip"] = data.clip
    elif clip != "none":
        lo, hi = cfgmod.number_list(clip.replace(":", ","), "clip")
        attack["clip"] = (lo, hi)
    cfg = AttackConfig(**attack)
    X, y = (data.x_test, data.y_test) if split == "test" else (data.x_train, data.y_train)
    report = evaluate(params, X, y, cfg)
    out = _out_dir(args)
    report.write(out / "eval_report.json", out / "eval_outcomes.csv", cfg, cfgmod.config_hash(resolved))
    print(json.dumps(report.summary()))
    return 0


def cmd_converge(args) -> int:
    m = _resolve(args, "laplacian-converge")
    resolved = dict(m)
    seed = cfgmod.integer(m.pop("seed", "0"), "seed")
    n_seeds = cfgmod.integer(m.pop("seeds", "1"), "seeds")
    kw = dict(
        manifold=m.pop("manifold", "circle"),
        n_grid=cfgmod.int_list(m.pop("n_grid", "500"), "n_grid"),
        eps_grid=cfgmod.number_list(m.pop("eps_grid", "0.05,0.1,0.2"), "eps_grid"),
        c=cfgmod.integer(m.pop("c", "2"), "c"),
        s=cfgmod.number(m.pop("s", "0.5"), "s"),
        probes=cfgmod.integer(m.pop("probes", "50"), "probes"),
        norm=m.pop("norm", "l2"),
        dim=cfgmod.integer(m.pop("dim", "2"), "dim"),
    )
    cfgmod.ensure_consumed(m)
    rows = convergence_experiment(seeds=range(seed, seed + n_seeds), workers=args.threads or 1, **kw)
    out = _out_dir(args) / "convergence.csv"
    write_convergence_csv(rows, out, cfgmod.config_hash(resolved))
    print(out)
    return 0


def cmd_audit(args) -> int:
    m = _resolve(args, "sparsify-audit")
    resolved = dict(m)
    seed = cfgmod.integer(m.pop("seed", "0"), "seed")
    nodes = cfgmod.integer(m.pop("nodes", "10"), "nodes")
    dim = cfgmod.integer(m.pop("dim", "2"), "dim")
    s_raw = m.pop("s", "median")
    ms = cfgmod.int_list(m.pop("m_grid", "1,4,16"), "m_grid")
    draws = cfgmod.integer(m.pop("draws", "100000"), "draws")
    points = m.pop("points", "")
    cfgmod.ensure_consumed(m)
    rng = np.random.default_rng(seed)
    cloud = PointCloud.from_csv(points) if points else PointCloud(rng.normal(size=(nodes, dim)))
    s = median_scale(cloud.points) if s_raw == "median" else cfgmod.number(s_raw, "s")
    graph = build_graph(cloud, s)
    x = rng.normal(size=cloud.n)
    rows = sparsify_audit(graph, x, ms, draws, seed)
    out = _out_dir(args) / "sparsify_audit.csv"
    with out.open("w", newline="") as fh:
        _csv_header(fh, cfgmod.config_hash(resolved))
        w = csv.writer(fh)
        w.writerow(["m", "draws", "exact", "mean", "stderr", "z", "variance", "variance_times_m"])
        for r in rows:
            w.writerow([r.m, r.draws, repr(r.exact), repr(r.mean), repr(r.stderr), repr(r.z), repr(r.variance), repr(r.variance_times_m)])
    print(out)
    return 0


def cmd_regions(args) -> int:
    m = _resolve(args, "regions")
    resolved = dict(m)
    pairs = cfgmod.integer(m.pop("pairs", "50"), "pairs")
    resolution = cfgmod.integer(m.pop("resolution", "301"), "resolution")
    seed = cfgmod.integer(m.get("seed", "0"), "seed")
    spec = _dataset_from(m, args.dataset)
    m.pop("seed", None)
    cfgmod.ensure_consumed(m)
    params = load_checkpoint(args.checkpoint)
    data = load_or_generate(spec)
    idx = np.random.default_rng(seed).integers(0, len(data.x_test), size=(pairs, 2))
    out = _out_dir(args) / "regions.csv"
    with out.open("w", newline="") as fh:
        _csv_header(fh, cfgmod.config_hash(resolved))
        w = csv.writer(fh)
        w.writerow(["segment", "a", "b", "regions"])
        for k, (a, b) in enumerate(idx):
            n = count_linear_regions_1d(params, (data.x_test[a], data.x_test[b]), resolution)
            w.writerow([k, int(a), int(b), n])
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablegrad", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=TOOL)
    p.add_argument("--threads", type=int, default=None, help="cap on worker/BLAS threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--preset", help="named built-in config (file keys override it)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", default=out_default, help="output directory")

    sp = sub.add_parser("train", help="train a network")
    common(sp, "runs/train")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="PGD robustness / stability evaluation")
    common(sp, "runs/eval")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", help=f"dataset kind ({', '.join(KINDS)}) or path to a CSV table")
    sp.add_argument("--eps", help="l-inf radius, absolute (0.1) or as a fraction (8/255)")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--restarts", type=int)
    sp.add_argument("--step-size", dest="step_size")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("laplacian-converge", help="resampled-Laplacian convergence table")
    common(sp, "runs/converge")
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("sparsify-audit", help="edge-sampling unbiasedness statistics")
    common(sp, "runs/audit")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("regions", help="linear-region counts along test-point segments")
    common(sp, "runs/regions")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--dataset", help=f"dataset kind ({', '.join(KINDS)}) or path to a CSV table")
    sp.set_defaults(func=cmd_regions)
    return p


def _thread_limit(n: int | None):
    if not n:
        return nullcontext()
    return threadpool_limits(limits=n)


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (StablegradError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
