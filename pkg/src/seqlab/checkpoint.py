"""Self-describing binary model container.

Layout: magic ``SQLB``, a uint32 format version, a uint64 header length,
a JSON header (sorted keys, compact), then the raw bytes of every parameter
array in manifest order as C-contiguous little-endian float64.  Loading a
saved model reproduces decoding behavior bitwise, and saving the same model
twice produces identical bytes, which is what the reproducibility tests
compare.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .corpus import LabelAlphabet
from .crf import ModelParams
from .embeddings import EmbeddingTable, InputComposer
from .encoder import BiLSTMParams
from .features import FeatureAlphabet, TemplateSet

MAGIC = b"SQLB"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a loadable model checkpoint."""


def _model_arrays(model: ModelParams) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    if model.uses_discrete:
        arrays["theta_out"] = model.theta_out
        arrays["theta_edge"] = model.theta_edge
    if model.uses_neural:
        for name, arr in model.lstm.arrays().items():
            arrays[f"lstm.{name}"] = arr
        arrays["theta_dense"] = model.theta_dense
        arrays["tau"] = model.tau
        for key in model.composer.table_order():
            arrays[f"emb.{key}"] = model.composer.tables[key].matrix
    if model.mode == "joint":
        arrays["tau_weight"] = model.tau_weight
    return arrays


def save_model(path, model: ModelParams, meta: dict) -> None:
    """Write the model and run metadata; ``meta`` must be JSON-serializable."""
    model.validate()
    arrays = _model_arrays(model)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "mode": model.mode,
        "dropout_p": model.dropout_p,
        "labels": list(model.labels.labels),
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()],
    }
    if model.uses_discrete:
        header["templates"] = {
            "task": model.templates.task,
            "language": model.templates.language,
            "cluster_lexicon": model.templates.cluster_lexicon,
            "radical_lexicon": model.templates.radical_lexicon,
        }
        header["out_features"] = model.out_alphabet.strings()
        header["edge_features"] = model.edge_alphabet.strings()
    if model.uses_neural:
        header["hidden"] = model.lstm.hidden
        header["composer_task"] = model.composer.task
        header["tables"] = [
            {
                "key": key,
                "name": t.name,
                "dim": t.dim,
                "fine_tune": t.fine_tune,
                "lowercase": t.lowercase,
                "symbols": t.symbols,
            }
            for key, t in ((k, model.composer.tables[k]) for k in model.composer.table_order())
        ]
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode(
        "utf-8"
    )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> tuple[ModelParams, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}; not a model checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: format version {version} unsupported (this build reads {FORMAT_VERSION})"
            )
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupted header: {exc}") from exc
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    labels = LabelAlphabet(header["labels"])
    model = ModelParams(mode=header["mode"], labels=labels, dropout_p=header["dropout_p"])
    if "templates" in header:
        t = header["templates"]
        model.templates = TemplateSet(
            t["task"],
            t["language"],
            cluster_lexicon=t["cluster_lexicon"],
            radical_lexicon=t["radical_lexicon"],
        )
        model.out_alphabet = FeatureAlphabet.from_strings(header["out_features"])
        model.edge_alphabet = FeatureAlphabet.from_strings(header["edge_features"])
        model.theta_out = arrays["theta_out"]
        model.theta_edge = arrays["theta_edge"]
    if "tables" in header:
        tables = {}
        for spec in header["tables"]:
            tables[spec["key"]] = EmbeddingTable(
                spec["name"],
                spec["dim"],
                spec["symbols"],
                arrays[f"emb.{spec['key']}"],
                fine_tune=spec["fine_tune"],
                lowercase=spec["lowercase"],
            )
        model.composer = InputComposer(header["composer_task"], tables)
        hidden = header["hidden"]
        model.lstm = BiLSTMParams(
            input_dim=model.composer.dim,
            hidden=hidden,
            w_fwd=arrays["lstm.w_fwd"],
            u_fwd=arrays["lstm.u_fwd"],
            b_fwd=arrays["lstm.b_fwd"],
            w_bwd=arrays["lstm.w_bwd"],
            u_bwd=arrays["lstm.u_bwd"],
            b_bwd=arrays["lstm.b_bwd"],
        )
        model.theta_dense = arrays["theta_dense"]
        model.tau = arrays["tau"]
    if model.mode == "joint":
        model.tau_weight = arrays["tau_weight"]
    model.validate()
    return model, header["meta"]
