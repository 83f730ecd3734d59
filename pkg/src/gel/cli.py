"""Command-line front end: ``gel <command> --config path [--seed n] [--scale s] [--out dir] [--workers k]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ErrorPartition, perturb_m1, perturb_m2, perturb_m2w, perturb_m3, perturb_m3w, \
    RESAMPLE
from .exceptions import ConfigError, NumericalError, ParameterError
from .experiments import ExperimentConfig, run_study, write_result
from .filters import design_polynomial_filter, detect_outliers, frequency_order, highpass_response, \
    save_filter_json
from .grade import grade, md_index
from .graphs import (SbmSpec, cycle_graph, erdos_renyi, exponential_graphon, constant_graphon,
                     knn_weight_rule, knn_weighted, load_graph, pairwise_distances, random_geometric,
                     sample_graphon, save_graph, sbm)
from .ioutil import atomic_write_text

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

STUDY_COMMANDS = {"study1": "autocorr", "study2": "gma_filter", "study3": "garma_filter", "study4": "grade"}
UTILITY_COMMANDS = ("gen-graph", "perturb", "grade", "filter")


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    return obj


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    return cfg[key]


def _load_matrix(path) -> np.ndarray:
    try:
        return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from exc


def _load_graph(path):
    try:
        return load_graph(path)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ConfigError(f"cannot read graph {path}: {exc}") from exc


def _run_study(args) -> None:
    obj = _read_config(args.config)
    obj.setdefault("study", STUDY_COMMANDS[args.command])
    if obj["study"] != STUDY_COMMANDS[args.command]:
        raise ConfigError(f"config study {obj['study']!r} does not match command {args.command}")
    cfg = ExperimentConfig.from_dict(obj, seed=args.seed, scale=args.scale, workers=args.workers,
                                     output_dir=args.out)
    result = run_study(cfg)
    for path in write_result(result, cfg):
        print(path)


def _gen_graph(cfg: dict, rng, out: Path, seed):
    family = _require(cfg, "family")
    n = int(cfg.get("n", 0))
    directed = bool(cfg.get("directed", False))
    if family == "erdos_renyi":
        g = erdos_renyi(n, float(_require(cfg, "eps")), directed=directed, rng=rng)
    elif family == "sbm":
        g = sbm(SbmSpec(_require(cfg, "sizes"), np.asarray(_require(cfg, "probs"), dtype=float)), directed, rng)
    elif family == "geometric":
        g = random_geometric(n, float(_require(cfg, "radius")), rng)
    elif family == "knn":
        coords = np.asarray(cfg["coords"], dtype=float) if "coords" in cfg else rng.random((n, 2)) * cfg.get("area", 1.0)
        g = knn_weighted(coords, int(_require(cfg, "k")), float(_require(cfg, "scale")), cfg.get("metric", "euclidean"))
    elif family == "cycle":
        g = cycle_graph(n)
    elif family == "graphon":
        kind = _require(cfg, "kernel")
        sampling = cfg.get("node_sampling", "uniform")
        if kind == "constant":
            spec = constant_graphon(float(_require(cfg, "eps")), sampling)
        elif kind == "exponential":
            spec = exponential_graphon(float(_require(cfg, "beta0")), float(_require(cfg, "beta1")), sampling)
        else:
            raise ConfigError(f"unknown graphon kernel {kind!r}")
        g = sample_graphon(spec, n, rng, directed)
    else:
        raise ConfigError(f"unknown graph family {family!r}")
    path = out / cfg.get("name", "graph.csv")
    save_graph(g, path, seed)
    if g.coords is not None:
        atomic_write_text(path.with_name(path.stem + "_coords.csv"),
                          "\n".join(",".join(repr(float(v)) for v in row) for row in g.coords) + "\n")
    print(path)


def _perturb(cfg: dict, rng, out: Path, seed):
    A = _load_graph(_require(cfg, "graph"))
    model = _require(cfg, "model")
    rule = None
    dist = None
    if "coords" in cfg:
        coords = _load_matrix(cfg["coords"])
        dist = pairwise_distances(coords, cfg.get("metric", "euclidean"))
        if "knn" in cfg:
            rule = knn_weight_rule(dist, int(cfg["knn"]), float(_require(cfg, "scale")))
    source = cfg.get("weight_source", RESAMPLE)
    per_node = bool(cfg.get("per_node_variance", False))
    if model == "m1":
        W = perturb_m1(A, float(_require(cfg, "eps")), rng)
    elif model == "m2":
        W = perturb_m2(A, float(_require(cfg, "eps1")), float(_require(cfg, "eps2")), rng)
    elif model == "m2w":
        W = perturb_m2w(A, float(_require(cfg, "eps1")), float(_require(cfg, "eps2")), float(cfg.get("c", 0.0)),
                        rng, source, rule, per_node)
    elif model in ("m3", "m3w"):
        sizes = cfg.get("sizes")
        spec = SbmSpec(sizes, np.zeros((len(sizes), len(sizes)))) if sizes else None
        part = ErrorPartition.from_json(_require(cfg, "partition"), dist=dist, sbm_spec=spec)
        W = perturb_m3(A, part, rng) if model == "m3" else perturb_m3w(A, part, rng, rule, per_node)
    else:
        raise ConfigError(f"unknown error model {model!r}")
    path = out / cfg.get("name", "perturbed.csv")
    save_graph(W, path, seed)
    print(path)


def _grade(cfg: dict, rng, out: Path, seed):
    X = _load_matrix(_require(cfg, "data"))
    W = _load_graph(_require(cfg, "graph"))
    est = grade(X, W, int(cfg.get("K", 1)))
    result = {"gamma": est.gamma.tolist(), "rotation": est.rotation.tolist(), "whitener": est.whitener.tolist()}
    if "mixing" in cfg:
        result["md_index"] = md_index(est.gamma, _load_matrix(cfg["mixing"]))
    path = out / cfg.get("name", "unmixing.json")
    atomic_write_text(path, json.dumps(result, indent=2) + "\n")
    print(path)


def _filter(cfg: dict, rng, out: Path, seed):
    W = _load_graph(_require(cfg, "graph"))
    days = _load_matrix(_require(cfg, "signal"))
    dec = frequency_order(W.adj)
    spec = design_polynomial_filter(dec, highpass_response(dec), int(cfg.get("order", 10)))
    res = detect_outliers(days, W.adj, spec, dec)
    fpath = out / "filter.json"
    save_filter_json(spec, fpath)
    dpath = out / "detection.csv"
    res.save(dpath)
    print(fpath)
    print(dpath)


_UTILITIES = {"gen-graph": _gen_graph, "perturb": _perturb, "grade": _grade, "filter": _filter}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gel", description="Graph-error experiments and utilities.")
    p.add_argument("command", choices=list(STUDY_COMMANDS) + list(UTILITY_COMMANDS))
    p.add_argument("--config", help="JSON config file (required for utilities)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--scale", choices=["paper", "desk"], help="study size preset")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command in STUDY_COMMANDS:
            _run_study(args)
        else:
            if args.config is None:
                raise ConfigError(f"{args.command} needs --config")
            cfg = _read_config(args.config)
            seed = args.seed if args.seed is not None else cfg.get("seed")
            rng = np.random.default_rng(seed)
            out = Path(args.out or cfg.get("out", "."))
            out.mkdir(parents=True, exist_ok=True)
            _UTILITIES[args.command](cfg, rng, out, seed)
    except NumericalError as exc:
        print(f"gel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ParameterError, ValueError, TypeError, KeyError) as exc:
        print(f"gel: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
