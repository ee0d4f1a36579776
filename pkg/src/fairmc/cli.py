"""End-to-end orchestration and the command-line interface.

The pipeline learns a chain over the configured state space, checks the
fairness verdict, and on failure ranks targets by sensitivity and optionally
repairs the network, re-verifying the repaired weights with a fresh learner
run over the minimal (protected values + outcomes) space and a fresh seed.

Exit codes: 0 verified (or repaired successfully), 1 usage/config error,
2 fairness still failing, 3 trace budget exhausted before the stopping
criterion (the report is still written, flagged non-PAC).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import abstraction as _abs
from . import checker as _checker
from . import learner as _learner
from . import repair as _repair
from . import sensitivity as _sens
from .errors import ConfigError, FairmcError
from .model import (Network, hidden_activations_batch, load_network,
                    save_network)
from .sampler import InputDistribution, sample_batch

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UNFAIR = 2
EXIT_NON_PAC = 3


@dataclass
class RunConfig:
    """Everything one verification (or repair) run needs."""

    model: str
    protected: str
    label: str | int = 1
    dataset: str | None = None
    mu_eps: float = 0.01
    mu_delta: float = 0.1
    xi: float = 0.1
    seed: int = 0
    max_traces: int = _learner.DEFAULT_BUDGET
    batch_size: int = _learner.DEFAULT_BATCH
    fit_samples: int = 1000
    seq_len: int | None = None
    weights: dict = field(default_factory=dict)
    abstraction: list = field(default_factory=list)
    repair_k: int = 10
    alpha: float = 0.1
    n_eval: int = 5000
    swarm_size: int = 20
    max_iterations: int = 100
    no_repair: bool = False
    out_dir: str = "."

    def validate(self) -> None:
        for name in ("mu_eps", "mu_delta", "xi"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if not self.model:
            raise ConfigError("a model path is required")
        if not self.protected:
            raise ConfigError("a protected feature name is required")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def config_from_sources(file_doc: dict, overrides: dict) -> RunConfig:
    """Build a RunConfig: flag overrides win over config-file values."""
    repair_doc = file_doc.get("repair", {})
    merged = {
        "model": file_doc.get("model", ""),
        "protected": file_doc.get("protected", ""),
        "label": file_doc.get("label", 1),
        "dataset": file_doc.get("dataset"),
        "mu_eps": file_doc.get("mu_eps", 0.01),
        "mu_delta": file_doc.get("mu_delta", 0.1),
        "xi": file_doc.get("xi", 0.1),
        "seed": file_doc.get("seed", 0),
        "max_traces": file_doc.get("max_traces", _learner.DEFAULT_BUDGET),
        "batch_size": file_doc.get("batch_size", _learner.DEFAULT_BATCH),
        "fit_samples": file_doc.get("fit_samples", 1000),
        "seq_len": file_doc.get("seq_len"),
        "weights": file_doc.get("weights", {}),
        "abstraction": file_doc.get("abstraction", []),
        "repair_k": repair_doc.get("k", 10),
        "alpha": repair_doc.get("alpha", 0.1),
        "n_eval": repair_doc.get("n_eval", 5000),
        "swarm_size": repair_doc.get("swarm", 20),
        "max_iterations": repair_doc.get("iterations", 100),
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    cfg = RunConfig(**merged)
    cfg.validate()
    return cfg


def _child_seed(seed: int, stream: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(stream,)).generate_state(1)[0])


def load_dataset(path: str):
    """CSV rows, last column the integer label id."""
    inputs, labels = [], []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                inputs.append([float(v) for v in row[:-1]])
                labels.append(int(float(row[-1])))
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path!r}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"dataset {path!r}: non-numeric row ({exc})") from None
    return np.asarray(inputs), np.asarray(labels, dtype=np.int64)


def resolve_label(net: Network, label) -> int:
    if isinstance(label, str) and label in net.output_labels:
        return net.output_labels.index(label)
    try:
        idx = int(label)
    except (TypeError, ValueError):
        raise ConfigError(f"unknown label {label!r}") from None
    if not 0 <= idx < len(net.output_labels):
        raise ConfigError(f"label index {idx} outside the {len(net.output_labels)} labels")
    return idx


def fit_discretizers(net: Network, dist: InputDistribution, targets: list,
                     fit_samples: int, seed: int) -> dict[str, _abs.Discretizer]:
    """Fit the configured discretizers on a sampled batch of traces."""
    if not targets:
        return {}
    fit_dist = replace(dist, seed=seed)
    X = sample_batch(fit_dist, list(net.input_spec), fit_samples)
    hidden = hidden_activations_batch(net, X)
    out: dict[str, _abs.Discretizer] = {}
    for entry in targets:
        target = entry["target"]
        method = entry.get("method", "kmeans")
        k = int(entry.get("k", 2))
        kind, a, b = _abs.parse_target(target)
        if kind == "feature":
            values = X[:, a]
        elif kind == "neuron":
            values = (hidden[:, :, b].reshape(-1) if net.kind == "recurrent"
                      else hidden[a][:, b])
        else:
            values = (hidden.reshape(-1, hidden.shape[-1])
                      if net.kind == "recurrent" else hidden[a])
        if method == "bins":
            out[target] = _abs.bin_fit(values, k, target=target)
        elif method == "kmeans":
            out[target] = _abs.kmeans_fit(values, k, seed=seed, target=target)
        else:
            raise ConfigError(f"unknown discretizer method {method!r}")
    return out


def build_space_from_config(net: Network, cfg: RunConfig,
                            discretizers: dict) -> _abs.StateSpace:
    feats, neurons, layers = [], [], []
    for entry in cfg.abstraction:
        kind, a, b = _abs.parse_target(entry["target"])
        if kind == "feature":
            feats.append(a)
        elif kind == "neuron":
            neurons.append((a, b))
        else:
            layers.append(a)
    return _abs.build_state_space(
        list(net.input_spec), cfg.protected, feats, neurons, discretizers,
        list(net.output_labels), recurrent=(net.kind == "recurrent"),
        layer_targets=layers)


def minimal_space(net: Network, protected: str) -> _abs.StateSpace:
    """Protected values and outcomes only: enough for the verdict."""
    return _abs.build_state_space(
        list(net.input_spec), protected, [], [], {}, list(net.output_labels),
        recurrent=(net.kind == "recurrent"))


def export_dot(dtmc) -> str:
    """Graphviz rendering: nodes and edges in state-id order, probabilities
    to 4 decimals. Output is deterministic for a given chain."""
    lines = ["digraph chain {", "  rankdir=LR;"]
    ids = dtmc.ids
    for i, sid in enumerate(ids):
        label = sid.replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'  s{i} [label="{label}"];')
    A = dtmc.A
    for p in range(len(ids)):
        for q in range(len(ids)):
            if A[p, q] > 0:
                lines.append(f'  s{p} -> s{q} [label="{A[p, q]:.4f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_report(report: _checker.VerificationReport, ranking, repair_result,
                 path: str) -> None:
    """Serialize the verdict (and any sensitivity/repair results) as JSON."""
    doc = {
        "verdict": report.verdict,
        "group_probs": report.group_probs,
        "max_diff": report.max_diff,
        "xi": report.xi,
        "pac": report.pac,
        "traces_used": report.traces_used,
        "states": report.states,
        "non_pac_flag": report.non_pac,
    }
    if report.non_pac:
        doc["starved_states"] = report.starved_states
    if ranking is not None:
        doc["sensitivity"] = ranking.as_rows()
    if repair_result is not None:
        doc["repair"] = {
            "before": repair_result.before_prob_diff,
            "after": repair_result.after_prob_diff,
            "accuracy_before": repair_result.before_accuracy,
            "accuracy_after": repair_result.after_accuracy,
            "iterations": repair_result.iterations,
            "fairness_achieved": repair_result.fairness_achieved,
        }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_sensitivity_csv(ranking: _sens.SensitivityRanking, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["target", "sensitivity"])
        for target, score in ranking.entries:
            writer.writerow([target, repr(score)])


def _verdict_report(dtmc: _learner.Dtmc, label_state: int, cfg: RunConfig,
                    eps: float, delta: float) -> _checker.VerificationReport:
    probs = _checker.group_outcome_probs(dtmc, label_state)
    report = _checker.fairness_verdict(probs, cfg.xi)
    report.pac = {"mu_eps": cfg.mu_eps, "mu_delta": cfg.mu_delta,
                  "eps": eps, "delta": delta}
    report.traces_used = dtmc.traces_used
    report.states = dtmc.m
    report.non_pac = not dtmc.is_pac
    report.starved_states = dtmc.starved_ids()
    report.dtmc_ref = dtmc
    return report


def run_verify_repair(cfg: RunConfig) -> int:
    """Learn, check, and (on failure) explain and repair. Returns the exit code."""
    cfg.validate()
    net = load_network(cfg.model)
    label_idx = resolve_label(net, cfg.label)
    if net.kind == "recurrent" and cfg.seq_len is None:
        raise ConfigError("recurrent models need seq_len in the config")
    os.makedirs(cfg.out_dir, exist_ok=True)

    dist = InputDistribution(
        seed=_child_seed(cfg.seed, 1),
        weights={k: tuple(v) for k, v in cfg.weights.items()},
        seq_len=cfg.seq_len)
    discretizers = fit_discretizers(net, dist, cfg.abstraction,
                                    cfg.fit_samples, _child_seed(cfg.seed, 0))
    space = build_space_from_config(net, cfg, discretizers)
    eps, delta = _learner.derive_eps_delta(cfg.mu_eps, cfg.mu_delta)
    dtmc = _learner.learn_dtmc(net, dist, space, eps, delta,
                               max_traces=cfg.max_traces,
                               batch_size=cfg.batch_size)

    label_state = space.outcome_states[label_idx]
    report = _verdict_report(dtmc, label_state, cfg, eps, delta)

    _learner.save_dtmc(dtmc, os.path.join(cfg.out_dir, "dtmc.txt"))
    with open(os.path.join(cfg.out_dir, "dtmc.dot"), "w") as fh:
        fh.write(export_dot(dtmc))
    report_path = os.path.join(cfg.out_dir, "report.json")

    if report.non_pac:
        write_report(report, None, None, report_path)
        print(f"non-PAC: trace budget exhausted; starved states: "
              f"{', '.join(report.starved_states)}", file=sys.stderr)
        return EXIT_NON_PAC

    if report.verdict == "PASS":
        write_report(report, None, None, report_path)
        print(f"PASS max_diff={report.max_diff:.6f} xi={cfg.xi}")
        return EXIT_OK

    ranking = None
    if space.targets():
        ranking = _sens.rank_targets(dtmc, space.targets(), label_state)
        write_sensitivity_csv(ranking,
                              os.path.join(cfg.out_dir, "sensitivity.csv"))
    print(f"FAIL max_diff={report.max_diff:.6f} xi={cfg.xi}")

    if cfg.no_repair:
        write_report(report, ranking, None, report_path)
        return EXIT_UNFAIR
    if ranking is None:
        write_report(report, None, None, report_path)
        print("no abstraction targets configured, so nothing to repair",
              file=sys.stderr)
        return EXIT_UNFAIR
    if cfg.dataset is None:
        raise ConfigError("repair needs a dataset (or pass --no-repair)")

    dataset = load_dataset(cfg.dataset)
    settings = _repair.RepairSettings(
        n_eval=cfg.n_eval, swarm_size=cfg.swarm_size,
        max_iterations=cfg.max_iterations, seed=_child_seed(cfg.seed, 2))
    repaired, result = _repair.repair_network(
        net, ranking, cfg.repair_k, cfg.xi, cfg.alpha, dataset, dist,
        label_idx, settings=settings)
    save_network(repaired, os.path.join(cfg.out_dir, "repaired_model.json"))

    # fresh learner run over the minimal space, fresh sampling seed
    re_dist = replace(dist, seed=_child_seed(cfg.seed, 3))
    re_space = minimal_space(repaired, cfg.protected)
    re_dtmc = _learner.learn_dtmc(repaired, re_dist, re_space, eps, delta,
                                  max_traces=cfg.max_traces,
                                  batch_size=cfg.batch_size)
    re_report = _verdict_report(re_dtmc, re_space.outcome_states[label_idx],
                                cfg, eps, delta)
    _learner.save_dtmc(re_dtmc, os.path.join(cfg.out_dir, "dtmc_repaired.txt"))
    write_report(re_report, ranking, result, report_path)

    if re_report.non_pac:
        return EXIT_NON_PAC
    print(f"repaired: max_diff {report.max_diff:.6f} -> {re_report.max_diff:.6f}, "
          f"accuracy {result.before_accuracy:.4f} -> {result.after_accuracy:.4f} "
          f"({result.iterations} iterations)")
    return EXIT_OK if re_report.verdict == "PASS" else EXIT_UNFAIR


# --------------------------------------------------------------------------
# command line
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model file (JSON)")
    p.add_argument("--config", help="run config file (JSON)")
    p.add_argument("--dataset", help="CSV dataset, last column the label")
    p.add_argument("--protected", help="protected feature name")
    p.add_argument("--label", help="outcome label (name or index)")
    p.add_argument("--mu-eps", type=float, dest="mu_eps")
    p.add_argument("--mu-delta", type=float, dest="mu_delta")
    p.add_argument("--xi", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-traces", type=int, dest="max_traces")
    p.add_argument("--no-repair", action="store_true", default=None,
                   dest="no_repair")
    p.add_argument("--out-dir", dest="out_dir")


def _run_command(args, no_repair_default: bool) -> int:
    file_doc = load_config(args.config) if args.config else {}
    overrides = {
        "model": args.model, "dataset": args.dataset,
        "protected": args.protected, "label": args.label,
        "mu_eps": args.mu_eps, "mu_delta": args.mu_delta, "xi": args.xi,
        "seed": args.seed, "max_traces": args.max_traces,
        "out_dir": args.out_dir,
        "no_repair": True if (args.no_repair or no_repair_default) else None,
    }
    cfg = config_from_sources(file_doc, overrides)
    return run_verify_repair(cfg)


def main(argv=None) -> int:
    parser = _Parser(prog="fairmc",
                     description="Fairness verification of neural networks "
                                 "via learned Markov chain abstractions")
    sub = parser.add_subparsers(dest="command", required=True)

    p_verify = sub.add_parser("verify", help="learn a chain and check fairness")
    _add_run_flags(p_verify)
    p_repair = sub.add_parser("repair", help="verify, then repair on failure")
    _add_run_flags(p_repair)
    p_export = sub.add_parser("export", help="render a saved chain as DOT")
    p_export.add_argument("--dtmc", required=True, help="chain text file")
    p_export.add_argument("--out", help="output DOT path (default: stdout)")

    args = parser.parse_args(argv)
    try:
        if args.command == "export":
            table = _learner.load_dtmc(args.dtmc)
            text = export_dot(table)
            if args.out:
                with open(args.out, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        return _run_command(args, no_repair_default=(args.command == "verify"))
    except FairmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
