"""On-disk bundle for prepared density-valued datasets.

Instances are ragged (each has its own uncertain-dimension set and kernel
count), so per-instance pieces are stored flattened with offset arrays.
Round trips are exact.
"""

from __future__ import annotations

import numpy as np

from .data import Scaler, UncertainDataset, UncertainInstance
from .density import DensityModel
from .errors import SchemaError
from .serialization import load_arrays, save_arrays

BUNDLE_FORMAT_VERSION = 1


def save_dataset_bundle(path: str, dataset: UncertainDataset) -> None:
    certain_offsets = [0]
    certain_dims: list[int] = []
    certain_values: list[float] = []
    uncertain_offsets = [0]
    uncertain_dims: list[int] = []
    center_counts: list[int] = []
    centers_flat: list[np.ndarray] = []
    bandwidths: list[float] = []
    for inst in dataset.instances:
        certain_dims.extend(inst.certain_dims)
        certain_values.extend(inst.certain_values.tolist())
        certain_offsets.append(len(certain_dims))
        if inst.density is None:
            uncertain_offsets.append(len(uncertain_dims))
            center_counts.append(0)
            bandwidths.append(0.0)
        else:
            uncertain_dims.extend(inst.density.uncertain_dims)
            uncertain_offsets.append(len(uncertain_dims))
            center_counts.append(inst.density.centers.shape[0])
            centers_flat.append(inst.density.centers.ravel())
            bandwidths.append(inst.density.bandwidth)
    arrays = {
        "labels": np.asarray(dataset.labels, dtype=float),
        "scaler_mean": dataset.scaler.mean,
        "scaler_std": dataset.scaler.std,
        "certain_offsets": np.asarray(certain_offsets, dtype=np.int64),
        "certain_dims": np.asarray(certain_dims, dtype=np.int64),
        "certain_values": np.asarray(certain_values, dtype=float),
        "uncertain_offsets": np.asarray(uncertain_offsets, dtype=np.int64),
        "uncertain_dims": np.asarray(uncertain_dims, dtype=np.int64),
        "center_counts": np.asarray(center_counts, dtype=np.int64),
        "centers_flat": np.concatenate(centers_flat) if centers_flat else np.empty(0),
        "bandwidths": np.asarray(bandwidths, dtype=float),
    }
    meta = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "kind": "dataset-bundle",
        "task": dataset.task,
        "n_features": dataset.n_features,
        "feature_names": list(dataset.feature_names),
        "class_count": dataset.class_count,
        "class_names": list(dataset.class_names) if dataset.class_names else None,
        "u_actual": dataset.u_actual,
    }
    save_arrays(path, arrays, meta)


def load_dataset_bundle(path: str) -> UncertainDataset:
    arrays, meta = load_arrays(path)
    if meta is None or meta.get("kind") != "dataset-bundle":
        raise SchemaError(f"{path} is not a dataset bundle")
    if meta.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise SchemaError(f"unsupported bundle format version {meta.get('format_version')!r}")
    task = meta["task"]
    labels = arrays["labels"]
    if task == "classification":
        labels = labels.astype(int)
    certain_offsets = arrays["certain_offsets"]
    uncertain_offsets = arrays["uncertain_offsets"]
    center_counts = arrays["center_counts"]
    instances = []
    center_pos = 0
    for i in range(labels.shape[0]):
        c_lo, c_hi = int(certain_offsets[i]), int(certain_offsets[i + 1])
        u_lo, u_hi = int(uncertain_offsets[i]), int(uncertain_offsets[i + 1])
        dims = tuple(int(d) for d in arrays["uncertain_dims"][u_lo:u_hi])
        if dims:
            count = int(center_counts[i])
            width = len(dims)
            flat = arrays["centers_flat"][center_pos : center_pos + count * width]
            center_pos += count * width
            density = DensityModel(flat.reshape(count, width), float(arrays["bandwidths"][i]), dims)
        else:
            density = None
        instances.append(
            UncertainInstance(
                uid=i,
                certain_dims=tuple(int(d) for d in arrays["certain_dims"][c_lo:c_hi]),
                certain_values=arrays["certain_values"][c_lo:c_hi],
                density=density,
                label=labels[i],
            )
        )
    return UncertainDataset(
        instances=instances,
        scaler=Scaler(arrays["scaler_mean"], arrays["scaler_std"]),
        task=task,
        n_features=int(meta["n_features"]),
        feature_names=tuple(meta["feature_names"]),
        class_count=meta["class_count"],
        class_names=tuple(meta["class_names"]) if meta["class_names"] else None,
        u_actual=float(meta["u_actual"]),
    )
