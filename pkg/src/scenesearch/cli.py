"""Command-line entry point: gen / train / eval / search.

Exit codes: 0 success, 1 usage error (including policy role violations),
2 data or config error, 3 internal invariant violation.  Progress goes to
stderr; machine-readable artifacts go to files only, and every
artifact-producing run writes a manifest with its effective parameters.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from hashlib import sha256
from importlib import resources
from pathlib import Path

import numpy as np

from . import FORMAT_VERSIONS, __version__
from . import nn
from .embeddings import EmbeddingError, load_embeddings
from .evalharness import EvalError, classification_accuracy, efficiency_matrix, write_report
from .model import CheckpointError, Model, ModelError, load_model
from .procgen import (
    GenConfig,
    GenError,
    default_config,
    generate_dataset,
    load_config,
    load_dataset,
    sample_target,
)
from .scenegraph import GraphError, NodeKind, TargetSpec
from .search import (
    POLICY_ROLES,
    PolicyRoleError,
    SearchError,
    SearchGuardError,
    make_policy,
    search_episode,
    write_trace,
)
from .trainer import TrainConfig, TrainError, train

RUN_MANIFEST_VERSION = 1


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def default_embeddings_path() -> str:
    return str(resources.files("scenesearch").joinpath("data/embeddings_50d.txt"))


def _sha256_file(path) -> str:
    return sha256(Path(path).read_bytes()).hexdigest()


def _write_run_manifest(out_dir, command: str, params: dict, inputs: dict) -> None:
    manifest = {
        "format_version": RUN_MANIFEST_VERSION,
        "kind": "run_manifest",
        "command": command,
        "params": params,
        "inputs_sha256": inputs,
    }
    Path(out_dir, "run_manifest.json").write_text(
        json.dumps(manifest, separators=(",", ":"), sort_keys=True) + "\n",
        encoding="utf-8")


def _resolve_config(spec: str) -> GenConfig:
    if spec == "default-train":
        return default_config("train")
    if spec == "default-test":
        return default_config("test")
    if not Path(spec).exists():
        raise CliError(f"config {spec!r} is neither a file nor a builtin "
                       f"(default-train, default-test)", 2)
    return load_config(spec)


def _load_dataset_with_config(path) -> tuple[list, dict | None, GenConfig | None]:
    graphs, manifest = load_dataset(path)
    gen_cfg = None
    if manifest and "config" in manifest:
        gen_cfg = GenConfig.from_obj(manifest["config"])
    return graphs, manifest, gen_cfg


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    config = _resolve_config(args.config)
    _log(f"gen: {args.count} graphs, seed {args.seed} -> {args.out}")
    manifest = generate_dataset(config, args.count, args.seed, args.out)
    _write_run_manifest(args.out, "gen",
                        {"config": args.config, "count": args.count, "seed": args.seed,
                         "out": args.out},
                        {"config_hash": manifest["config_hash"]})
    _log(f"gen: dataset hash {manifest['graphs_sha256'][:16]}…")
    return 0


def cmd_train(args) -> int:
    graphs, manifest, gen_cfg = _load_dataset_with_config(args.dataset)
    if not graphs:
        raise CliError(f"dataset {args.dataset!r} is empty", 2)
    table = load_embeddings(args.embeddings)
    model = Model.create(table, variant=args.variant, seed=args.seed)
    config = TrainConfig(epochs=args.epochs, batches_per_epoch=args.batches,
                         graphs_per_batch=args.graphs_per_batch, seed=args.seed,
                         variant=args.variant)
    _log(f"train: {len(graphs)} graphs, variant {args.variant}, "
         f"{config.epochs}x{config.batches_per_epoch}x{config.graphs_per_batch}")
    train(model, graphs, config, out_dir=args.out, gen_config=gen_cfg, log=_log)
    inputs = {"dataset": _sha256_file(Path(args.dataset) / "graphs.jsonl")
              if Path(args.dataset).is_dir() else _sha256_file(args.dataset),
              "embeddings": _sha256_file(args.embeddings)}
    _write_run_manifest(args.out, "train",
                        {"dataset": args.dataset, "embeddings": args.embeddings,
                         "variant": args.variant, "epochs": args.epochs,
                         "batches": args.batches,
                         "graphs_per_batch": args.graphs_per_batch,
                         "seed": args.seed, "out": args.out},
                        inputs)
    _log(f"train: final checkpoint at {Path(args.out) / 'checkpoint.json'}")
    return 0


ALL_CONTAINER_POLICIES = ["oracle", "random", "wordvec", "prior", "model"]
ALL_OBJECT_POLICIES = ["oracle", "random", "nearest", "largest", "context", "model"]


def _parse_policies(spec: str, have_model: bool, have_cv: bool
                    ) -> tuple[list[str], list[str]]:
    def check_known(names):
        for name in names:
            if name not in POLICY_ROLES:
                raise CliError(f"unknown policy {name!r}; valid: "
                               f"{', '.join(sorted(POLICY_ROLES))}", 1)

    if spec == "all":
        containers = list(ALL_CONTAINER_POLICIES)
        objects = list(ALL_OBJECT_POLICIES)
        if not have_model:
            _log("eval: no --checkpoint given, dropping 'model' from the axes")
            containers.remove("model")
            objects.remove("model")
        if not have_cv:
            _log("eval: no --cv-checkpoint given, dropping 'context' from the axes")
            objects.remove("context")
        return containers, objects
    if ":" in spec:
        c_part, o_part = spec.split(":", 1)
        containers = [s for s in c_part.split(",") if s]
        objects = [s for s in o_part.split(",") if s]
    else:
        containers = objects = [s for s in spec.split(",") if s]
    if not containers or not objects:
        raise CliError("empty policy list", 1)
    check_known(containers)
    check_known(objects)
    for name in containers:
        if "container" not in POLICY_ROLES[name]:
            raise PolicyRoleError(
                f"policy {name!r} scores objects only and cannot select containers")
    for name in objects:
        if "object" not in POLICY_ROLES[name]:
            raise PolicyRoleError(
                f"policy {name!r} scores containers only and cannot select objects")
    return containers, objects


def _build_policies(names, table, gen_cfg, model, cv_model):
    built = {}
    for name in names:
        if name == "model" and model is None:
            raise CliError("policy 'model' requires --checkpoint", 1)
        if name == "context" and cv_model is None:
            raise CliError("policy 'context' requires --cv-checkpoint", 1)
        built[name] = make_policy(name, table=table, config=gen_cfg,
                                  model=model, cv_model=cv_model)
    return built


def cmd_eval(args) -> int:
    graphs, manifest, gen_cfg = _load_dataset_with_config(args.dataset)
    if not graphs:
        raise CliError(f"dataset {args.dataset!r} is empty", 2)
    if gen_cfg is None:
        raise CliError("dataset manifest with the generation config is required "
                       "for held-out targets and the prior policy", 2)
    table = load_embeddings(args.embeddings)
    model = load_model(args.checkpoint, table) if args.checkpoint else None
    cv_model = load_model(args.cv_checkpoint, table) if args.cv_checkpoint else None
    c_names, o_names = _parse_policies(args.policies, model is not None,
                                       cv_model is not None)
    policies = _build_policies(sorted(set(c_names) | set(o_names)), table, gen_cfg,
                               model, cv_model)
    containers = [policies[n] for n in c_names]
    objects = [policies[n] for n in o_names]

    _log(f"eval: {len(graphs)} graphs, containers={c_names}, objects={o_names}, "
         f"jobs={args.jobs}")
    accuracy_reports = []
    for name in sorted(policies):
        rep = classification_accuracy(policies[name], graphs, gen_cfg,
                                      samples_per_graph=args.accuracy_samples,
                                      seed=args.seed)
        accuracy_reports.append(rep)
        _log(f"eval: accuracy[{name}] container {rep.container_accuracy:.1f} "
             f"object {rep.object_accuracy:.1f}")
    efficiency = efficiency_matrix(containers, objects, graphs, gen_cfg,
                                   seed=args.seed, t0=args.t0, jobs=args.jobs)
    inputs = {"dataset": manifest["graphs_sha256"] if manifest else "unknown"}
    if args.checkpoint:
        inputs["checkpoint"] = _sha256_file(args.checkpoint)
    if args.cv_checkpoint:
        inputs["cv_checkpoint"] = _sha256_file(args.cv_checkpoint)
    write_report(args.out, accuracy_reports, efficiency,
                 manifest_extra={"command": "eval",
                                 "params": {"dataset": args.dataset,
                                            "policies": args.policies,
                                            "containers": c_names, "objects": o_names,
                                            "t0": args.t0, "seed": args.seed,
                                            "accuracy_samples": args.accuracy_samples},
                                 "inputs_sha256": inputs})
    _write_run_manifest(args.out, "eval",
                        {"dataset": args.dataset, "policies": args.policies,
                         "t0": args.t0, "seed": args.seed, "jobs": args.jobs,
                         "accuracy_samples": args.accuracy_samples,
                         "checkpoint": args.checkpoint or "",
                         "cv_checkpoint": args.cv_checkpoint or "",
                         "embeddings": args.embeddings, "out": args.out},
                        inputs)
    _log(f"eval: reports in {args.out}")
    return 0


def _resolve_target(graph, spec: str, seed: int) -> TargetSpec:
    if spec == "auto":
        return sample_target(graph, np.random.default_rng(seed), "train")
    try:
        oid = int(spec)
    except ValueError:
        raise CliError("--target must be an integer node id or 'auto'", 1) from None
    node = graph.node(oid)
    if node.kind != NodeKind.OBJECT:
        raise CliError(f"node {oid} is a {node.kind.value}, not an object", 2)
    return TargetSpec(object_id=oid, description=node.description,
                      category=node.placement.category)


def cmd_search(args) -> int:
    graphs, manifest, gen_cfg = _load_dataset_with_config(args.graph_file)
    if not (0 <= args.graph_index < len(graphs)):
        raise CliError(f"graph index {args.graph_index} out of range "
                       f"(dataset holds {len(graphs)})", 2)
    graph = graphs[args.graph_index]
    table = load_embeddings(args.embeddings)
    model = load_model(args.checkpoint, table) if args.checkpoint else None
    cv_model = load_model(args.cv_checkpoint, table) if args.cv_checkpoint else None
    for name, role in ((args.container_policy, "container"), (args.object_policy, "object")):
        if name not in POLICY_ROLES:
            raise CliError(f"unknown policy {name!r}", 1)
        if role not in POLICY_ROLES[name]:
            raise PolicyRoleError(f"policy {name!r} cannot act as {role} selector")
    if args.container_policy == "prior" and gen_cfg is None:
        raise CliError("prior policy needs a dataset manifest with the config", 2)

    target = _resolve_target(graph, args.target, args.seed)
    policies = _build_policies(sorted({args.container_policy, args.object_policy}),
                               table, gen_cfg, model, cv_model)
    trace = search_episode(graph, target, policies[args.container_policy],
                           policies[args.object_policy], t0=args.t0, rng=args.seed)
    write_trace(args.trace_out, trace)
    _log(f"search: target {target.object_id} ({target.description!r}) found in "
         f"{trace.total_actions} actions, {trace.restarts} restarts")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="scenesearch",
                     description="Generate scene graphs, train the scorer, "
                                 "and evaluate hierarchical search policies.")
    formats = ", ".join(f"{k}={v}" for k, v in FORMAT_VERSIONS.items())
    parser.add_argument("--version", action="version",
                        version=f"scenesearch {__version__} (formats: {formats})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a dataset of scene graphs")
    p.add_argument("--config", default="default-train",
                   help="config file path or default-train/default-test")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the message-passing scorer")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", default=default_embeddings_path())
    p.add_argument("--variant", default="full",
                   choices=["full", "no_message_passing", "no_object_label",
                            "context_vector"])
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batches", type=int, default=100)
    p.add_argument("--graphs-per-batch", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy and search-efficiency reports")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--cv-checkpoint", default=None)
    p.add_argument("--embeddings", default=default_embeddings_path())
    p.add_argument("--policies", default="all",
                   help="comma list (both axes), CONTAINERS:OBJECTS, or 'all'")
    p.add_argument("--t0", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--accuracy-samples", type=int, default=1)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="run one search episode and dump its trace")
    p.add_argument("--graph-file", required=True,
                   help="dataset directory or graphs JSON-lines file")
    p.add_argument("--graph-index", type=int, default=0)
    p.add_argument("--target", required=True,
                   help="object node id, or 'auto' to sample an occluded object")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--cv-checkpoint", default=None)
    p.add_argument("--embeddings", default=default_embeddings_path())
    p.add_argument("--container-policy", required=True)
    p.add_argument("--object-policy", required=True)
    p.add_argument("--t0", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace-out", required=True)
    p.set_defaults(func=cmd_search)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except PolicyRoleError as exc:
        _log(f"scenesearch: {exc}")
        return 1
    except CliError as exc:
        _log(f"scenesearch: {exc}")
        return exc.code
    except (GenError, GraphError, EmbeddingError, ModelError, CheckpointError,
            TrainError, EvalError, FileNotFoundError, json.JSONDecodeError) as exc:
        _log(f"scenesearch: data error: {exc}")
        return 2
    except (SearchGuardError, SearchError, nn.NNError) as exc:
        _log(f"scenesearch: internal error: {exc}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
