"""Small shared helpers: seed splitting, config hashing, deterministic writers."""

import hashlib
import json

import numpy as np

MASK64 = (1 << 64) - 1


def split_seed(master_seed, component):
    """Derive a per-component u64 seed from the master seed.

    Splitting rule: sha256 of the component name, first 8 bytes little-endian,
    XOR the master seed. Stable across processes and thread counts.
    """
    digest = hashlib.sha256(component.encode("utf-8")).digest()
    h = int.from_bytes(digest[:8], "little")
    return (int(master_seed) ^ h) & MASK64


def config_hash(config):
    """sha256 hex digest of the canonical JSON form of a config dict."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def format_float(x):
    # repr round-trips doubles exactly and is byte-stable
    return repr(float(x))


def write_csv(path, header, rows):
    """Write a CSV with '.' decimals and comma delimiter, byte-deterministic."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def as_float_list(arr):
    return [float(v) for v in np.asarray(arr).ravel()]
