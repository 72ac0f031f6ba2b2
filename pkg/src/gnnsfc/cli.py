"""Command line pipeline: validate, gen-data, train, eval, infer, topo-experiment.

Every subcommand that writes files also writes ``manifest.json`` into its
output directory with the seed, the effective configuration and its digest,
input file hashes and library versions. Settings come from an optional
``--config`` file of ``key = value`` lines; command-line flags win.

Exit codes
----------
0 success (including the baseline's not-applicable outcome)
2 bad usage or configuration
3 missing input file
4 invalid topology
5 invalid dataset or checkpoint, or digest mismatch
6 model incompatible with the topology
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DatasetError, SimulationConfig, build_dataset, load_dataset, write_dataset
from .features import annotation_width, build_adjacency, column_stochastic_check
from .io import atomic_write_text, digest
from .model import VARIANTS, IncompatibleTopology, SfcModel
from .topology import InvalidPath, Request, TopologyError, path_cost, read_topology
from .training import (TopologyPatch, TrainConfig, changed_topology_experiment, evaluate,
                       report_emit, train, training_log_text)

EXIT_USAGE, EXIT_MISSING, EXIT_TOPOLOGY, EXIT_DATA, EXIT_INCOMPATIBLE = 2, 3, 4, 5, 6

log = logging.getLogger("gnnsfc")

MODEL_KEYS = ("steps", "d_state", "d_annotation", "d_vnf", "d_node", "hidden", "layers")
TRAIN_KEYS = ("epochs", "lr", "lr_decay", "lr_patience", "early_stop_patience", "dropout",
              "max_train_samples", "rms_decay", "rms_eps")
DATA_KEYS = ("train_size", "val_size", "test_size", "arrival_rate", "lifetime_min",
             "lifetime_max", "bandwidth_min", "bandwidth_max", "max_delay_factor", "gzip")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- configuration ------------------------------------------------------------
def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; values are JSON when they parse."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected key = value", EXIT_USAGE)
        key, value = (x.strip() for x in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    return parse_config_text(_read_text(path))


def _pick(cfg: dict, keys) -> dict:
    unknown = set(cfg) - set(keys) - {"seed", "variant"}
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}", EXIT_USAGE)
    return {k: cfg[k] for k in keys if k in cfg}


# -- file helpers -------------------------------------------------------------
def _need(path, what: str) -> Path:
    if path is None:
        raise CliError(f"--{what} is required", EXIT_USAGE)
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} file not found: {p}", EXIT_MISSING)
    return p


def _read_text(path) -> str:
    p = _need(path, "config")
    return p.read_text(encoding="utf-8")


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _topology(path):
    p = _need(path, "topology")
    try:
        return read_topology(p)
    except TopologyError as exc:
        raise CliError(f"invalid topology {p}: {exc}", EXIT_TOPOLOGY) from exc


def _dataset(path, t):
    p = _need(path, "dataset")
    try:
        return load_dataset(p, t)
    except DatasetError as exc:
        raise CliError(f"invalid dataset {p}: {exc}", EXIT_DATA) from exc


def _checkpoint(path) -> SfcModel:
    p = _need(path, "checkpoint")
    try:
        return SfcModel.load(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid checkpoint {p}: {exc}", EXIT_DATA) from exc


def _out_dir(args) -> Path:
    if args.out is None:
        raise CliError("--out is required", EXIT_USAGE)
    return Path(args.out)


def write_manifest(out: Path, command: str, seed, config: dict, inputs: dict, outputs: list) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_digest": digest(config),
        "inputs": {k: {"name": Path(v).name, "sha256": _file_hash(v)} for k, v in inputs.items()},
        "outputs": sorted(outputs),
        "versions": {"gnnsfc": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- subcommands --------------------------------------------------------------
def cmd_validate(args) -> int:
    t = _topology(args.topology)
    adj = build_adjacency(t)
    if not column_stochastic_check(adj, t):
        raise CliError("adjacency normalisation check failed", EXIT_TOPOLOGY)
    hosts = sorted({m.host for m in t.instances})
    print(f"topology: {Path(args.topology).name}")
    print(f"nodes: {t.num_nodes}")
    print(f"edges: {len(t.edges)}")
    print(f"vnf types: {t.num_vnf_types} ({', '.join(t.vnf_types)})")
    print(f"vnf instances: {len(t.instances)} on {len(hosts)} hosts")
    print(f"annotation matrix: {t.num_nodes} x {annotation_width(t)}")
    print(f"adjacency matrix: {adj.shape[0]} x {adj.shape[1]}")
    print(f"digest: {t.digest()}")
    return 0


def _sim_config(cfg: dict, seed: int) -> tuple[SimulationConfig, tuple[int, int, int], bool]:
    d = _pick(cfg, DATA_KEYS)
    sim = SimulationConfig(
        seed=seed,
        arrival_rate=float(d.get("arrival_rate", 2.0)),
        lifetime=(int(d.get("lifetime_min", 6)), int(d.get("lifetime_max", 20))),
        bandwidth=(float(d.get("bandwidth_min", 1.0)), float(d.get("bandwidth_max", 5.0))),
        max_delay_factor=float(d.get("max_delay_factor", 1.5)),
    )
    sizes = (int(d.get("train_size", 2000)), int(d.get("val_size", 100)),
             int(d.get("test_size", 500)))
    return sim, sizes, bool(d.get("gzip", False))


def cmd_gen_data(args) -> int:
    t = _topology(args.topology)
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    try:
        sim, sizes, gz = _sim_config(cfg, seed)
    except ValueError as exc:
        raise CliError(f"bad data configuration: {exc}", EXIT_USAGE) from exc
    out = _out_dir(args)
    log.info("simulating stream (seed %d, sizes %s)", seed, sizes)
    try:
        ds = build_dataset(sim, t, sizes)
    except DatasetError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    name = "dataset.jsonl.gz" if gz else "dataset.jsonl"
    write_dataset(ds, out / name)
    write_manifest(out, "gen-data", seed, {"simulation": sim.to_dict(), "sizes": list(sizes)},
                   {"topology": args.topology}, [name])
    a = ds.header["audit"]
    print(f"wrote {out / name}: {ds.header['counts']} "
          f"({a['feasible']}/{a['requests']} requests feasible)")
    return 0


def _train_config(cfg: dict, variant: str, seed: int) -> TrainConfig:
    d = _pick(cfg, TRAIN_KEYS + MODEL_KEYS)
    model = {k: int(d.pop(k)) for k in MODEL_KEYS if k in d}
    return TrainConfig(variant=variant, seed=seed, model=model, **d)


def cmd_train(args) -> int:
    t = _topology(args.topology)
    ds = _dataset(args.dataset, t)
    cfg = load_config(args.config)
    variant = args.variant or cfg.get("variant", "gg-rnn")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    try:
        tc = _train_config(cfg, variant, seed)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad training configuration: {exc}", EXIT_USAGE) from exc
    out = _out_dir(args)
    conf = {"train": {k: v for k, v in vars(tc).items()}, "dataset": ds.header["config_digest"]}
    res = train(tc, ds, t)
    for entry, secs in zip(res.log, res.timings):
        log.info("epoch %d train %.4f val %s acc %s (%.1fs)", entry["epoch"], entry["train_loss"],
                 entry["val_loss"], entry["val_accuracy"], secs)
    res.model.meta = {"config_digest": digest(conf), "dataset_digest": ds.header["config_digest"],
                      "topology_hash": t.digest(), "best_epoch": res.best_epoch}
    ckpt, log_name = f"{variant}.ckpt.json", f"{variant}.log.jsonl"
    res.model.save(out / ckpt)
    atomic_write_text(out / log_name, training_log_text(res.log))
    write_manifest(out, "train", seed, conf, {"topology": args.topology, "dataset": args.dataset},
                   [ckpt, log_name])
    best = res.log[res.best_epoch - 1]
    print(f"wrote {out / ckpt}: best epoch {res.best_epoch}, val loss {best['val_loss']}, "
          f"val accuracy {best['val_accuracy']}")
    return 0


def _check_provenance(model: SfcModel, ds, force: bool) -> None:
    want = model.meta.get("dataset_digest")
    if want is not None and want != ds.header["config_digest"] and not force:
        raise CliError("checkpoint was trained on a different dataset configuration "
                       "(digest mismatch); pass --force to evaluate anyway", EXIT_DATA)


def _model_name(model: SfcModel, path) -> str:
    return model.cfg.variant if model.cfg.variant else Path(path).stem


def cmd_eval(args) -> int:
    t = _topology(args.topology)
    ds = _dataset(args.dataset, t)
    out = _out_dir(args)
    outputs, rows = [], []
    for path in args.checkpoint or []:
        model = _checkpoint(path)
        _check_provenance(model, ds, args.force)
        name = _model_name(model, path)
        rep = evaluate(model, ds.split(args.split), t, name=name)
        extra = {"config_digest": model.meta.get("config_digest"),
                 "dataset_digest": ds.header["config_digest"], "split": args.split}
        csv_p, json_p = report_emit(rep, out, f"{name}.{args.split}", extra)
        outputs += [csv_p.name, json_p.name]
        rows.append(rep.table_row())
    if not rows:
        raise CliError("--checkpoint is required", EXIT_USAGE)
    write_manifest(out, "eval", None, {"split": args.split, "force": args.force},
                   {"topology": args.topology, "dataset": args.dataset,
                    **{f"checkpoint{i}": p for i, p in enumerate(args.checkpoint)}}, outputs)
    print("model            | cost ratio (var) | fail | overmax")
    for row in rows:
        print(row)
    return 0


def _parse_chain(text: str, t) -> tuple[int, ...]:
    if not text:
        return ()
    try:
        return tuple(t.type_id(x.strip()) for x in text.split(","))
    except (KeyError, TopologyError) as exc:
        raise CliError(f"unknown VNF type in chain: {exc}", EXIT_USAGE) from exc


def cmd_infer(args) -> int:
    t = _topology(args.topology)
    model = _checkpoint(args.checkpoint)
    chain = _parse_chain(args.chain, t)
    try:
        r = Request(0, args.source, args.destination, chain, args.bandwidth, args.max_delay, 0, 1)
    except ValueError as exc:
        raise CliError(f"bad request: {exc}", EXIT_USAGE) from exc
    try:
        path, status = model.generate_path(t, r)
    except IncompatibleTopology as exc:
        if not model.cfg.uses_graph:
            print(f"not applicable: {exc}")
            return 0
        raise CliError(str(exc), EXIT_INCOMPATIBLE) from exc
    steps = " ".join(f"{n}{'*' if p else ''}" for n, p in path.steps)
    print(f"path (* = VNF processed): {steps}")
    try:
        cost = path_cost(t, path, chain[:len(path.processing_nodes)])
        print(f"cost: {cost:g}")
    except InvalidPath:       # broken structure has no defined cost
        print("cost: undefined")
    print(f"status: {status.value}")
    return 0


def cmd_topo_experiment(args) -> int:
    t = _topology(args.topology)
    ds = _dataset(args.dataset, t)
    p = _need(args.patch, "patch")
    try:
        patch = TopologyPatch.read(p)
    except (ValueError, KeyError, TypeError) as exc:
        raise CliError(f"invalid patch {p}: {exc}", EXIT_TOPOLOGY) from exc
    models = {}
    for path in args.checkpoint or []:
        model = _checkpoint(path)
        _check_provenance(model, ds, args.force)
        models[_model_name(model, path)] = model
    if not models:
        raise CliError("--checkpoint is required", EXIT_USAGE)
    out = _out_dir(args)
    try:
        results = changed_topology_experiment(models, t, patch, ds.split(args.split))
    except TopologyError as exc:
        raise CliError(f"patch does not apply: {exc}", EXIT_TOPOLOGY) from exc
    outputs = []
    print("model            | topology | cost ratio (var) | fail | overmax")
    for name, (base, patched) in results.items():
        for tag, rep in (("base", base), ("changed", patched)):
            extra = {"config_digest": models[name].meta.get("config_digest"), "topology": tag}
            csv_p, json_p = report_emit(rep, out, f"{name}.{tag}", extra)
            outputs += [csv_p.name, json_p.name]
            if rep.not_applicable is not None:
                print(f"{name:<16} | {tag:<8} | not applicable ({rep.not_applicable})")
            else:
                print(rep.table_row().replace(" | ", f" | {tag:<8} | ", 1))
    write_manifest(out, "topo-experiment", None, {"split": args.split, "patch": _file_hash(p)},
                   {"topology": args.topology, "dataset": args.dataset, "patch": p,
                    **{f"checkpoint{i}": c for i, c in enumerate(args.checkpoint)}}, outputs)
    return 0


# -- entry point ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnnsfc", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"gnnsfc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "topology" in flags:
            p.add_argument("--topology", help="topology JSON file")
        if "dataset" in flags:
            p.add_argument("--dataset", help="dataset file (.jsonl or .jsonl.gz)")
        if "checkpoint" in flags:
            p.add_argument("--checkpoint", action="append", help="model checkpoint (repeatable)")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="random seed (overrides the config file)")
        if "config" in flags:
            p.add_argument("--config", help="key = value configuration file")
        if "variant" in flags:
            p.add_argument("--variant", choices=VARIANTS)
        if "out" in flags:
            p.add_argument("--out", help="output directory")
        if "split" in flags:
            p.add_argument("--split", default="test", choices=("train", "val", "test"))
            p.add_argument("--force", action="store_true",
                           help="evaluate even if the dataset digest differs from training")

    p = sub.add_parser("validate", help="check a topology file and print its dimensions")
    common(p, "topology")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("gen-data", help="simulate requests and label them with the oracle")
    common(p, "topology", "seed", "config", "out")
    p.set_defaults(func=cmd_gen_data)
    p = sub.add_parser("train", help="train one model variant")
    common(p, "topology", "dataset", "seed", "config", "variant", "out")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="evaluate checkpoints on a dataset split")
    common(p, "topology", "dataset", "checkpoint", "out", "split")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("infer", help="generate a path for one request")
    common(p, "topology")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--source", type=int, required=True)
    p.add_argument("--destination", type=int, required=True)
    p.add_argument("--chain", default="", help="comma-separated VNF type names")
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--max-delay", type=float, default=1e9)
    p.set_defaults(func=cmd_infer)
    p = sub.add_parser("topo-experiment", help="evaluate on a base and an extended topology")
    common(p, "topology", "dataset", "checkpoint", "out", "split")
    p.add_argument("--patch", help="JSON patch adding nodes and edges")
    p.set_defaults(func=cmd_topo_experiment)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SFC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "infer" and args.checkpoint is None:
        print("gnnsfc: error: --checkpoint is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"gnnsfc: error: {exc}", file=sys.stderr)
        return exc.code
    except IncompatibleTopology as exc:
        print(f"gnnsfc: error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


if __name__ == "__main__":
    sys.exit(main())
