"""Command-line interface.

Six subcommands, each driven by a JSON config file and an output
directory: ``prepare`` (mask/impute/densify a dataset into a bundle),
``fit`` (train a model on a bundle), ``predict`` (score a certain-row
CSV with a saved model), plus the three experiment protocols ``ncv``,
``subspace-sweep`` and ``threshold-sweep``.

Every run writes a ``manifest.json`` with the fully resolved config,
seeds and output hashes; feeding a manifest back in as the config
reproduces the run byte for byte. Exit codes: 0 success, 2 config
error, 3 data error, 4 model/schema mismatch, 5 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from .bundle import load_dataset_bundle, save_dataset_bundle
from .data import (
    Dataset,
    build_uncertain_dataset,
    impute_chained,
    inject_uncertainty,
    load_csv,
    synthesize_dataset,
)
from .errors import ConfigError, DataError, SchemaError, UmoeError
from .harness import (
    METHODS,
    NCVConfig,
    PipelineSettings,
    make_estimator,
    nested_cv,
    subspace_sweep,
    threshold_sweep,
)
from .model import load_model
from .serialization import write_text_atomic

_REQUIRED = object()

_DEFAULT_P_VALUES = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]


def _coerce_int(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"key {key!r} must be an integer, got {value!r}")
    return value


def _coerce_float(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key {key!r} must be a number, got {value!r}")
    return float(value)


def _coerce_str(value, key):
    if not isinstance(value, str):
        raise ConfigError(f"key {key!r} must be a string, got {value!r}")
    return value


def _coerce_bool(value, key):
    if not isinstance(value, bool):
        raise ConfigError(f"key {key!r} must be a boolean, got {value!r}")
    return value


def _coerce_int_list(value, key):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"key {key!r} must be a nonempty list of integers, got {value!r}")
    return [_coerce_int(v, key) for v in value]


def _coerce_float_list(value, key):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"key {key!r} must be a nonempty list of numbers, got {value!r}")
    return [_coerce_float(v, key) for v in value]


def _coerce_str_list(value, key):
    if not isinstance(value, list) or not value:
        raise ConfigError(f"key {key!r} must be a nonempty list of strings, got {value!r}")
    return [_coerce_str(v, key) for v in value]


_BASE_KEYS = {
    "seed": (_coerce_int, 0),
    "dataset_name": (_coerce_str, None),
    "workers": (_coerce_int, None),
}

_SOURCE_KEYS = {
    "csv_path": (_coerce_str, None),
    "label_column": (_coerce_str, None),
    "task": (_coerce_str, None),
    "synthetic_kind": (_coerce_str, None),
    "synthetic_instances": (_coerce_int, 400),
    "synthetic_features": (_coerce_int, 4),
    "synthetic_seed": (_coerce_int, None),
}

_PIPELINE_KEYS = {
    "u": (_coerce_float, 0.4),
    "bandwidth": (_coerce_float, 0.1),
    "impute_draws": (_coerce_int, 20),
    "impute_sweeps": (_coerce_int, 5),
}

_MODEL_KEYS = {
    "p": (_coerce_float, 0.8),
    "samples_per_instance": (_coerce_int, 100),
    "hidden_layers": (_coerce_int_list, [16, 16]),
    "learning_rate": (_coerce_float, 0.01),
    "epochs": (_coerce_int, 150),
    "batch_size": (_coerce_int, 16),
    "gate_batch_size": (_coerce_int, 24),
    "elastic_alpha": (_coerce_float, 0.5),
    "elastic_lambda": (_coerce_float, 0.002),
    "n_starts": (_coerce_int, 10),
    "mode_step_tol": (_coerce_float, 1e-8),
    "mode_max_iter": (_coerce_int, 500),
    "include_expert_predictions": (_coerce_bool, False),
}

_SCHEMAS: dict[str, dict] = {
    "prepare": {**_BASE_KEYS, **_SOURCE_KEYS, **_PIPELINE_KEYS},
    "fit": {
        **_BASE_KEYS,
        **_MODEL_KEYS,
        "bundle_path": (_coerce_str, _REQUIRED),
        "method": (_coerce_str, "umoe"),
        "e_count": (_coerce_int, 2),
    },
    "predict": {
        **_BASE_KEYS,
        "model_path": (_coerce_str, _REQUIRED),
        "input_csv": (_coerce_str, _REQUIRED),
    },
    "ncv": {
        **_BASE_KEYS,
        **_SOURCE_KEYS,
        **_PIPELINE_KEYS,
        **_MODEL_KEYS,
        "outer_folds": (_coerce_int, 5),
        "inner_folds": (_coerce_int, 3),
        "subspace_candidates": (_coerce_int_list, [2, 3, 4]),
        "methods": (_coerce_str_list, list(METHODS)),
    },
    "subspace-sweep": {
        **_BASE_KEYS,
        **_SOURCE_KEYS,
        **_PIPELINE_KEYS,
        **_MODEL_KEYS,
        "cv_folds": (_coerce_int, 5),
        "subspace_counts": (_coerce_int_list, [2, 3, 4, 5, 6]),
        "methods": (_coerce_str_list, list(METHODS)),
    },
    "threshold-sweep": {
        **_BASE_KEYS,
        **_SOURCE_KEYS,
        **_PIPELINE_KEYS,
        **_MODEL_KEYS,
        "outer_folds": (_coerce_int, 3),
        "inner_folds": (_coerce_int, 2),
        "subspace_candidates": (_coerce_int_list, [2, 3, 4]),
        "p_values": (_coerce_float_list, _DEFAULT_P_VALUES),
        "methods": (_coerce_str_list, list(METHODS)),
    },
}


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot open config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    # a manifest can be replayed directly: its embedded config is used
    if "config" in raw and "command" in raw:
        if raw["command"] != command:
            raise ConfigError(
                f"manifest was written by {raw['command']!r}, not {command!r}"
            )
        raw = raw["config"]
        if not isinstance(raw, dict):
            raise ConfigError("manifest config must be a JSON object")
    schema = _SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    resolved = {}
    for key, (coerce, default) in schema.items():
        if key in raw and raw[key] is not None:
            resolved[key] = coerce(raw[key], key)
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r} for {command}")
        else:
            resolved[key] = default
    if resolved.get("workers") is None:
        resolved["workers"] = int(os.environ.get("UMOE_WORKERS", "1"))
    return resolved


def _resolve_dataset(config: dict) -> tuple[Dataset, str]:
    has_csv = config.get("csv_path") is not None
    has_synth = config.get("synthetic_kind") is not None
    if has_csv == has_synth:
        raise ConfigError("exactly one of csv_path or synthetic_kind must be given")
    if has_csv:
        if config.get("label_column") is None or config.get("task") is None:
            raise ConfigError("csv_path requires label_column and task")
        dataset = load_csv(config["csv_path"], config["task"], config["label_column"])
        name = config.get("dataset_name") or os.path.splitext(os.path.basename(config["csv_path"]))[0]
        return dataset, name
    seed = config["synthetic_seed"] if config["synthetic_seed"] is not None else config["seed"]
    dataset = synthesize_dataset(
        config["synthetic_kind"],
        config["synthetic_instances"],
        config["synthetic_features"],
        seed,
    )
    return dataset, config.get("dataset_name") or f"synthetic-{config['synthetic_kind']}"


def _settings(config: dict) -> PipelineSettings:
    # fit operates on an already prepared bundle, so its schema carries no
    # imputation keys; defaults fill the gaps
    return PipelineSettings(
        n_samples=config["samples_per_instance"],
        bandwidth=config.get("bandwidth", 0.1),
        impute_draws=config.get("impute_draws", 20),
        impute_sweeps=config.get("impute_sweeps", 5),
        hidden_layers=tuple(config["hidden_layers"]),
        learning_rate=config["learning_rate"],
        epochs=config["epochs"],
        batch_size=config["batch_size"],
        gate_batch_size=config["gate_batch_size"],
        elastic_alpha=config["elastic_alpha"],
        elastic_lambda=config["elastic_lambda"],
        n_starts=config["n_starts"],
        mode_step_tol=config["mode_step_tol"],
        mode_max_iter=config["mode_max_iter"],
        include_expert_predictions=config["include_expert_predictions"],
    )


def _ncv_config(config: dict, outer_key: str = "outer_folds", inner_key: str = "inner_folds") -> NCVConfig:
    try:
        return NCVConfig(
            outer_folds=config[outer_key],
            inner_folds=config[inner_key],
            subspace_candidates=tuple(config["subspace_candidates"]),
            methods=tuple(config["methods"]),
            mask_fraction=config["u"],
            threshold=config["p"],
            seed=config["seed"],
            workers=config["workers"],
            settings=_settings(config),
        )
    except UmoeError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    write_text_atomic(path, buf.getvalue())


def _write_json(path: str, payload) -> None:
    write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: str, command: str, config: dict, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seeds": {"seed": config.get("seed", 0)},
        "outputs": {name: _file_sha256(os.path.join(out_dir, name)) for name in sorted(outputs)},
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


# ---------------------------------------------------------------------------
# commands


def _cmd_prepare(config: dict, out_dir: str) -> list[str]:
    has_csv = config.get("csv_path") is not None
    has_synth = config.get("synthetic_kind") is not None
    if has_csv == has_synth:
        raise ConfigError("exactly one of csv_path or synthetic_kind must be given")
    if has_csv:
        if config.get("label_column") is None or config.get("task") is None:
            raise ConfigError("csv_path requires label_column and task")
        masked = load_csv(config["csv_path"], config["task"], config["label_column"], allow_missing=True)
        name = config.get("dataset_name") or os.path.splitext(os.path.basename(config["csv_path"]))[0]
        if masked.n_masked > 0:
            # the file's own holes define the mask
            if config["u"] > 0:
                raise ConfigError(
                    "the CSV already contains missing cells; set u to 0 to use them as the mask"
                )
        elif config["u"] > 0:
            dataset = Dataset(
                masked.features, masked.labels, masked.feature_names,
                masked.task, masked.class_count, masked.class_names,
            )
            masked = inject_uncertainty(dataset, config["u"], config["seed"])
    else:
        dataset, name = _resolve_dataset(config)
        masked = inject_uncertainty(dataset, config["u"], config["seed"])
    if masked.n_masked > 0:
        draws = impute_chained(masked, config["impute_draws"], config["impute_sweeps"], config["seed"])
    else:
        draws = [None] * masked.n_instances
    uncertain = build_uncertain_dataset(masked, draws, config["bandwidth"])
    save_dataset_bundle(os.path.join(out_dir, "bundle.npz"), uncertain)
    per_feature = masked.mask.sum(axis=0)
    report = {
        "dataset": name,
        "task": masked.task,
        "n_instances": masked.n_instances,
        "n_features": masked.n_features,
        "n_masked_cells": masked.n_masked,
        "u_actual": masked.u_actual,
        "per_feature_missing": {
            fname: int(count) for fname, count in zip(masked.feature_names, per_feature)
        },
        "seed": config["seed"],
    }
    _write_json(os.path.join(out_dir, "prepare_report.json"), report)
    return ["bundle.npz", "prepare_report.json"]


def _cmd_fit(config: dict, out_dir: str) -> list[str]:
    dataset = load_dataset_bundle(config["bundle_path"])
    method = config["method"]
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    estimator = make_estimator(method, config["e_count"], config["p"], _settings(config), config["seed"])
    estimator.fit(dataset)
    estimator.save(os.path.join(out_dir, "model.npz"))
    return ["model.npz"]


def _load_feature_csv(path: str, feature_names: tuple[str, ...]) -> np.ndarray:
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        missing = [name for name in feature_names if name not in header]
        if missing:
            raise SchemaError(f"input CSV lacks model feature columns {missing}")
        positions = [header.index(name) for name in feature_names]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            values = []
            for name, pos in zip(feature_names, positions):
                cell = row[pos].strip() if pos < len(row) else ""
                if cell == "" or cell == "NA":
                    raise DataError(f"missing value at line {line_no}, column {name!r}")
                try:
                    values.append(float(cell))
                except ValueError as exc:
                    raise DataError(
                        f"non-numeric value {cell!r} at line {line_no}, column {name!r}"
                    ) from exc
            rows.append(values)
    if not rows:
        raise DataError(f"{path} has no data rows")
    return np.array(rows, dtype=float)


def _cmd_predict(config: dict, out_dir: str) -> list[str]:
    estimator = load_model(config["model_path"])
    features = _load_feature_csv(config["input_csv"], estimator.feature_names_)
    header = ["row", "prediction"]
    columns: list[np.ndarray] = []
    if hasattr(estimator, "gate_"):
        detail = estimator.predict_detail(features)
        predictions = detail["predictions"]
        if estimator.task_ == "classification":
            for c in range(estimator.class_count_):
                header.append(f"prob_{c}")
            columns.append(detail["probabilities"])
        n_experts = detail["gate_weights"].shape[1]
        header.extend(f"gate_g{j}" for j in range(n_experts))
        columns.append(detail["gate_weights"])
        header.extend(f"cluster_c{j}" for j in range(n_experts))
        columns.append(detail["cluster_onehot"])
    else:
        predictions = estimator.predict(features)
        if estimator.task_ == "classification":
            for c in range(estimator.class_count_):
                header.append(f"prob_{c}")
            columns.append(estimator.predict_proba(features))
    names = estimator.class_names_
    rows = []
    for i in range(features.shape[0]):
        if estimator.task_ == "classification" and names:
            label = names[int(predictions[i])]
        else:
            label = predictions[i]
        row = [i, label]
        for block in columns:
            row.extend(block[i].tolist())
        rows.append(row)
    _write_csv(os.path.join(out_dir, "predictions.csv"), header, rows)
    return ["predictions.csv"]


def _summary_table(name: str, task: str, u: float, p: float, methods, means: dict) -> str:
    metric = "ACC" if task == "classification" else "MSE"
    width = max(len(m) for m in methods) + 2
    lines = [
        f"dataset={name}  task={task}  metric={metric}  u={_fmt(u)}  p={_fmt(p)}",
        "".join(m.rjust(width) for m in methods),
        "".join(
            (f"{means[m]:.4f}" if means.get(m) is not None else "failed").rjust(width)
            for m in methods
        ),
    ]
    return "\n".join(lines) + "\n"


def _cmd_ncv(config: dict, out_dir: str) -> list[str]:
    dataset, name = _resolve_dataset(config)
    cfg = _ncv_config(config)
    result = nested_cv(dataset, cfg)
    header = ["dataset", "task", "u", "p", "method", "fold", "n_star", "metric"]
    rows = []
    errors = {}
    for fold, record in enumerate(result.fold_records):
        for method in cfg.methods:
            outcome = record[method]
            rows.append(
                [name, dataset.task, cfg.mask_fraction, cfg.threshold,
                 method, fold, outcome.n_star, outcome.metric]
            )
            if outcome.error:
                errors[f"fold{fold}:{method}"] = outcome.error
    _write_csv(os.path.join(out_dir, "ncv_results.csv"), header, rows)
    summary = _summary_table(name, dataset.task, cfg.mask_fraction, cfg.threshold, cfg.methods, result.method_means)
    summary += "chosen subspace counts: " + json.dumps(result.chosen_counts, sort_keys=True) + "\n"
    write_text_atomic(os.path.join(out_dir, "summary.txt"), summary)
    outputs = ["ncv_results.csv", "summary.txt"]
    if errors:
        _write_json(os.path.join(out_dir, "errors.json"), errors)
        outputs.append("errors.json")
    return outputs


def _cmd_subspace_sweep(config: dict, out_dir: str) -> list[str]:
    dataset, name = _resolve_dataset(config)
    counts = config["subspace_counts"]
    base = dict(config)
    base["subspace_candidates"] = [max(2, min(counts))]
    base["inner_folds"] = 2
    base["outer_folds"] = max(2, config["cv_folds"])
    cfg = _ncv_config(base)
    result = subspace_sweep(dataset, counts, config["cv_folds"], cfg)
    header = ["dataset", "task", "u", "p", "method", "n_subspaces", "metric"]
    rows = []
    outputs = []
    for method, curve in result.curves.items():
        curve_rows = [[c, curve.get(c)] for c in result.counts]
        rows.extend(
            [name, dataset.task, cfg.mask_fraction, cfg.threshold, method, c, curve.get(c)]
            for c in result.counts
        )
        fname = f"curve_{method}.csv"
        _write_csv(os.path.join(out_dir, fname), ["x", "y"], curve_rows)
        outputs.append(fname)
    for method, value in result.nn_reference.items():
        rows.extend(
            [name, dataset.task, cfg.mask_fraction, cfg.threshold, method, c, value]
            for c in result.counts
        )
        fname = f"curve_{method}.csv"
        _write_csv(os.path.join(out_dir, fname), ["x", "y"], [[c, value] for c in result.counts])
        outputs.append(fname)
    _write_csv(os.path.join(out_dir, "sweep_results.csv"), header, rows)
    outputs.append("sweep_results.csv")
    return outputs


def _cmd_threshold_sweep(config: dict, out_dir: str) -> list[str]:
    dataset, name = _resolve_dataset(config)
    cfg = _ncv_config(config)
    result = threshold_sweep(dataset, config["p_values"], config["outer_folds"], config["inner_folds"], cfg)
    header = ["dataset", "task", "u", "p", "method", "metric"]
    rows = []
    outputs = []
    for method in cfg.methods:
        series = result.method_means[method]
        rows.extend(
            [name, dataset.task, cfg.mask_fraction, p, method, value]
            for p, value in zip(result.p_values, series)
        )
        fname = f"curve_{method}.csv"
        _write_csv(
            os.path.join(out_dir, fname),
            ["x", "y"],
            [[p, value] for p, value in zip(result.p_values, series)],
        )
        outputs.append(fname)
    _write_csv(os.path.join(out_dir, "threshold_results.csv"), header, rows)
    outputs.append("threshold_results.csv")
    return outputs


_COMMANDS = {
    "prepare": _cmd_prepare,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "ncv": _cmd_ncv,
    "subspace-sweep": _cmd_subspace_sweep,
    "threshold-sweep": _cmd_threshold_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="umoe",
        description="Train and evaluate uncertainty-aware mixtures of experts on tabular data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", required=True, help="path to a JSON config (or a manifest.json)")
        p.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config, args.command)
        os.makedirs(args.out, exist_ok=True)
        outputs = _COMMANDS[args.command](config, args.out)
        _write_manifest(args.out, args.command, config, outputs)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 4
    except UmoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
