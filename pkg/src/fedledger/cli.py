"""Command-line front end.

Three subcommands: `generate` writes a synthetic credit-card-schema CSV,
`run` executes federated training runs (one per policy x sweep point) and
emits per-round metric CSVs plus a comparison summary, `validate` rechecks
an exported ledger. Configuration comes from a key=value file, overridden
by FEDLEDGER_* environment variables, overridden by flags; every run
output records the hash of its fully-resolved configuration, so runs are
reproducible from config + seed alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ledger as ledgermod
from .data import CREDIT_CARD_COLUMNS, Dataset, SmoteConfig, standardize
from .federation import (
    FederationConfig,
    RunResult,
    ValidatorSettings,
    ValuationSettings,
    run_with_state,
)
from .model import TrainConfig
from .seeds import derive_seed
from .selection import SelectionPolicy

ENV_PREFIX = "FEDLEDGER_"

ROUND_CSV_HEADER = "round,accuracy,loss,f1,precision,bytes_on_chain,bytes_off_chain"
SUMMARY_CSV_HEADER = (
    "policy,epochs,batch_size,final_accuracy,final_loss,final_f1,final_precision,"
    "org_level_accuracy,rounds_to_threshold,bytes_on_chain_total,bytes_off_chain_total"
)


class ConfigError(ValueError):
    """Bad key or value in the experiment configuration."""


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully-resolved experiment configuration with one key per setting."""

    data: str = "synthetic"  # "synthetic" | "csv"
    csv_path: str = ""
    synthetic_n: int = 2000
    synthetic_features: int = 30
    synthetic_minority_fraction: float = 0.02
    synthetic_separation: float = 2.0
    num_orgs: int = 30
    clients_per_round: int = 10
    rounds: int = 100
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    weight_decay: float = 0.001
    hidden_dims: tuple[int, ...] = (16,)
    exploration_period: int = 5
    partition_mode: str = "iid"
    partition_skew: float = 0.8
    smote: bool = True
    smote_k: int = 5
    smote_target_ratio: float = 1.0
    label_noise_orgs: int = 0
    label_noise: float = 0.0
    valuation: str = "tmc"
    tmc_truncation_tol: float = 1e-4
    tmc_max_permutations: int = 200
    tmc_convergence_tol: float = 1e-3
    accuracy_target: float | None = None
    validators: int = 3
    accuracy_floor: float = 0.5
    threshold: float = 0.5
    seed: int = 0
    epochs_sweep: tuple[int, ...] = ()
    batch_sweep: tuple[int, ...] = ()
    policies: tuple[str, ...] = ("contribution",)
    out: str = "results"


def _parse_int(v: str) -> int:
    return int(v)


def _parse_float(v: str) -> float:
    return float(v)


def _parse_optional_float(v: str) -> float | None:
    return None if v.strip() == "" else float(v)


def _parse_bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "on", "yes"):
        return True
    if low in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _parse_int_tuple(v: str) -> tuple[int, ...]:
    parts = [p.strip() for p in v.split(",") if p.strip()]
    return tuple(int(p) for p in parts)


def _parse_str_tuple(v: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in v.split(",") if p.strip())


_PARSERS = {
    "data": str,
    "csv_path": str,
    "synthetic_n": _parse_int,
    "synthetic_features": _parse_int,
    "synthetic_minority_fraction": _parse_float,
    "synthetic_separation": _parse_float,
    "num_orgs": _parse_int,
    "clients_per_round": _parse_int,
    "rounds": _parse_int,
    "learning_rate": _parse_float,
    "epochs": _parse_int,
    "batch_size": _parse_int,
    "weight_decay": _parse_float,
    "hidden_dims": _parse_int_tuple,
    "exploration_period": _parse_int,
    "partition_mode": str,
    "partition_skew": _parse_float,
    "smote": _parse_bool,
    "smote_k": _parse_int,
    "smote_target_ratio": _parse_float,
    "label_noise_orgs": _parse_int,
    "label_noise": _parse_float,
    "valuation": str,
    "tmc_truncation_tol": _parse_float,
    "tmc_max_permutations": _parse_int,
    "tmc_convergence_tol": _parse_float,
    "accuracy_target": _parse_optional_float,
    "validators": _parse_int,
    "accuracy_floor": _parse_float,
    "threshold": _parse_float,
    "seed": _parse_int,
    "epochs_sweep": _parse_int_tuple,
    "batch_sweep": _parse_int_tuple,
    "policies": _parse_str_tuple,
    "out": str,
}


def parse_config_file(path) -> dict[str, str]:
    """key = value lines; '#' starts a comment; blank lines ignored."""
    raw: dict[str, str] = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {line_no}: expected key = value")
            key, value = stripped.split("=", 1)
            raw[key.strip()] = value.strip()
    return raw


def resolve_spec(
    config: dict[str, str] | None = None,
    env: dict[str, str] | None = None,
    overrides: dict[str, object] | None = None,
) -> ExperimentSpec:
    """Layer defaults < config file < environment < explicit overrides."""
    values: dict[str, object] = {}
    for key, raw in (config or {}).items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown configuration key {key!r}")
        try:
            values[key] = _PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    env = dict(os.environ) if env is None else env
    for key in _PARSERS:
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            try:
                values[key] = _PARSERS[key](env[env_key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {env_key}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return ExperimentSpec(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_hash(spec: ExperimentSpec) -> str:
    """Digest of every experiment-defining setting (output location excluded)."""
    payload = dataclasses.asdict(spec)
    del payload["out"]
    canonical = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# synthetic data


def synthesize_raw(
    n: int, width: int, minority_fraction: float, separation: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Two Gaussian classes in the credit-card schema's raw feature space.

    The minority class mean is shifted by `separation` along a seeded random
    direction, so larger values give an easier classification problem.
    """
    if not 0.0 < minority_fraction < 0.5:
        raise ValueError("minority_fraction must lie in (0, 0.5)")
    n_minority = int(round(n * minority_fraction))
    if n_minority < 2 or n - n_minority < 2:
        raise ValueError("both classes need at least 2 examples")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=width)
    direction /= np.linalg.norm(direction)
    majority = rng.normal(size=(n - n_minority, width))
    minority = rng.normal(size=(n_minority, width)) + separation * direction
    features = np.vstack([majority, minority])
    labels = np.concatenate(
        [np.zeros(n - n_minority, dtype=np.int64), np.ones(n_minority, dtype=np.int64)]
    )
    order = rng.permutation(n)
    return features[order], labels[order]


def synthetic_dataset(spec: ExperimentSpec) -> Dataset:
    features, labels = synthesize_raw(
        spec.synthetic_n,
        spec.synthetic_features,
        spec.synthetic_minority_fraction,
        spec.synthetic_separation,
        derive_seed(spec.seed, "synthetic"),
    )
    standardized, scaler = standardize(features)
    return Dataset(standardized, labels, scaler)


def write_schema_csv(path, features: np.ndarray, labels: np.ndarray) -> None:
    if features.shape[1] != len(CREDIT_CARD_COLUMNS) - 1:
        raise ValueError(
            f"schema CSV needs {len(CREDIT_CARD_COLUMNS) - 1} feature columns"
        )
    with open(path, "w") as fh:
        fh.write(",".join(CREDIT_CARD_COLUMNS) + "\n")
        for row, label in zip(features, labels):
            cells = [repr(float(v)) for v in row] + [str(int(label))]
            fh.write(",".join(cells) + "\n")


def load_experiment_data(spec: ExperimentSpec) -> Dataset:
    if spec.data == "csv":
        if not spec.csv_path:
            raise ConfigError("data = csv requires csv_path")
        from .data import load_csv

        return load_csv(spec.csv_path)
    if spec.data == "synthetic":
        return synthetic_dataset(spec)
    raise ConfigError(f"unknown data source {spec.data!r}")


# ---------------------------------------------------------------------------
# runs


def build_federation_config(
    spec: ExperimentSpec, policy_kind: str, epochs: int, batch_size: int
) -> FederationConfig:
    policy = SelectionPolicy(
        kind=policy_kind,
        k=spec.clients_per_round,
        exploration_period=spec.exploration_period,
        seed=derive_seed(spec.seed, "policy"),
    )
    train = TrainConfig(
        learning_rate=spec.learning_rate,
        epochs=epochs,
        batch_size=batch_size,
        weight_decay=spec.weight_decay,
        seed=0,  # per-round seeds are derived inside the federation
    )
    smote_cfg = (
        SmoteConfig(k=spec.smote_k, target_ratio=spec.smote_target_ratio)
        if spec.smote
        else None
    )
    return FederationConfig(
        policy=policy,
        train=train,
        num_orgs=spec.num_orgs,
        rounds=spec.rounds,
        smote=smote_cfg,
        valuation=ValuationSettings(
            method=spec.valuation,
            truncation_tol=spec.tmc_truncation_tol,
            max_permutations=spec.tmc_max_permutations,
            convergence_tol=spec.tmc_convergence_tol,
        ),
        accuracy_target=spec.accuracy_target,
        validators=ValidatorSettings(spec.validators, spec.accuracy_floor),
        master_seed=spec.seed,
        hidden_dims=spec.hidden_dims,
        partition_mode=spec.partition_mode,
        partition_skew=spec.partition_skew,
        threshold=spec.threshold,
        label_noise_orgs=spec.label_noise_orgs,
        label_noise=spec.label_noise,
    )


def _fmt(value: float) -> str:
    return repr(float(value))


def render_round_csv(spec: ExperimentSpec, result: RunResult) -> str:
    lines = [f"# config_hash={config_hash(spec)}", ROUND_CSV_HEADER]
    for report in result.reports:
        m = report.global_metrics
        lines.append(
            f"{report.round_index},{_fmt(m.accuracy)},{_fmt(m.loss)},"
            f"{_fmt(m.f1)},{_fmt(m.precision)},"
            f"{report.bytes_on_chain},{report.bytes_off_chain}"
        )
    return "".join(line + "\n" for line in lines)


def summary_row(
    policy: str, epochs: int, batch_size: int, result: RunResult
) -> str:
    final = result.reports[-1]
    m = final.global_metrics
    org_accs = [metrics.accuracy for metrics in final.per_org_metrics.values()]
    org_level = sum(org_accs) / len(org_accs) if org_accs else 0.0
    return (
        f"{policy},{epochs},{batch_size},{_fmt(m.accuracy)},{_fmt(m.loss)},"
        f"{_fmt(m.f1)},{_fmt(m.precision)},{_fmt(org_level)},"
        f"{result.rounds_to_threshold},"
        f"{sum(r.bytes_on_chain for r in result.reports)},"
        f"{sum(r.bytes_off_chain for r in result.reports)}"
    )


def execute_job(args: tuple[ExperimentSpec, str, int, int]) -> dict[str, str]:
    """One (policy, epochs, batch) run; module-level so worker pools can pickle it.

    Loads its own copy of the data, so results are identical whether jobs
    run sequentially or in parallel processes.
    """
    spec, policy, epochs, batch_size = args
    dataset = load_experiment_data(spec)
    cfg = build_federation_config(spec, policy, epochs, batch_size)
    result, state = run_with_state(cfg, dataset)
    return {
        "tag": f"{policy}_e{epochs}_b{batch_size}",
        "rounds_csv": render_round_csv(spec, result),
        "summary_row": summary_row(policy, epochs, batch_size, result),
        "chain_jsonl": ledgermod.export_chain(state.chain),
    }


def cmd_run(spec: ExperimentSpec, parallel: bool = False) -> list[Path]:
    out_dir = Path(spec.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    epochs_list = spec.epochs_sweep or (spec.epochs,)
    batch_list = spec.batch_sweep or (spec.batch_size,)
    jobs = [
        (spec, policy, epochs, batch)
        for policy in spec.policies
        for epochs in epochs_list
        for batch in batch_list
    ]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            outcomes = list(pool.map(execute_job, jobs))
    else:
        outcomes = [execute_job(job) for job in jobs]

    written: list[Path] = []
    summary_lines = [f"# config_hash={config_hash(spec)}", SUMMARY_CSV_HEADER]
    for outcome in outcomes:
        rounds_path = out_dir / f"rounds_{outcome['tag']}.csv"
        rounds_path.write_text(outcome["rounds_csv"])
        written.append(rounds_path)
        chain_path = out_dir / f"chain_{outcome['tag']}.jsonl"
        chain_path.write_text(outcome["chain_jsonl"])
        written.append(chain_path)
        summary_lines.append(outcome["summary_row"])
    summary_path = out_dir / "summary.csv"
    summary_path.write_text("".join(line + "\n" for line in summary_lines))
    written.append(summary_path)
    return written


def cmd_generate(spec: ExperimentSpec, out_path=None) -> Path:
    path = Path(out_path) if out_path else Path(spec.out)
    if not path.suffix:  # directory given: use a default file name inside it
        path = path / "synthetic.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    features, labels = synthesize_raw(
        spec.synthetic_n,
        len(CREDIT_CARD_COLUMNS) - 1,  # emitted files always carry the full schema
        spec.synthetic_minority_fraction,
        spec.synthetic_separation,
        derive_seed(spec.seed, "synthetic"),
    )
    write_schema_csv(path, features, labels)
    return path


def cmd_validate(path) -> int:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        chain = ledgermod.import_chain(text)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    verdict = ledgermod.validate_chain(chain)
    if verdict:
        print(f"valid chain of {len(chain)} block(s)")
        return 0
    print(f"INVALID chain: first failure at height {verdict.first_failure_height}")
    return 1


# ---------------------------------------------------------------------------
# argument parsing


def _spec_from_args(args: argparse.Namespace) -> ExperimentSpec:
    config = parse_config_file(args.config) if args.config else {}
    overrides: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    if getattr(args, "policy", None) is not None:
        overrides["policies"] = (args.policy,)
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
        overrides["epochs_sweep"] = ()
    if getattr(args, "batch", None) is not None:
        overrides["batch_size"] = args.batch
        overrides["batch_sweep"] = ()
    return resolve_spec(config=config, overrides=overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedledger",
        description="Deterministic federated-training simulator with a "
        "content-addressed ledger and Shapley contribution accounting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", help="output directory (or file for generate)")

    gen = sub.add_parser("generate", parents=[common],
                         help="write a synthetic credit-card-schema CSV")

    runp = sub.add_parser("run", parents=[common],
                          help="execute the configured experiment runs")
    runp.add_argument("--policy", choices=("random", "greedy", "contribution"),
                      help="run a single selection policy")
    runp.add_argument("--epochs", type=int, help="local epochs override")
    runp.add_argument("--batch", type=int, help="batch size override")
    runp.add_argument("--parallel", action="store_true",
                      help="run sweep points in parallel worker processes")

    val = sub.add_parser("validate", help="recheck an exported chain file")
    val.add_argument("chain", help="path to a chain .jsonl export")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args.chain)
    try:
        spec = _spec_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "generate":
        path = cmd_generate(spec, out_path=args.out)
        print(f"wrote {path}")
        return 0
    written = cmd_run(spec, parallel=args.parallel)
    for path in written:
        print(f"wrote {path}")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
