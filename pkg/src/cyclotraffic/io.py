"""File formats: edge-list graph files, the binary array container, CSV matrices.

Container layout::

    b"CTXARRAY"                 8-byte magic
    <u64 little-endian>         header length in bytes
    <header>                    UTF-8 JSON object
    <array payloads>            concatenated, in header["arrays"] order

Every entry of ``header["arrays"]`` carries ``name``, ``dtype`` and ``shape``.
``float64``/``int64`` payloads use ``header["byte_order"]`` and are row-major;
``bits`` payloads are boolean arrays packed with ``numpy.packbits``
(row-major, little bit order).
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .core import RoadNetwork, TimeGrid, TrafficMatrix

MAGIC = b"CTXARRAY"
FORMAT_VERSION = 1


def write_graph(path, network: RoadNetwork, comment: str | None = None):
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"# vertices={network.n_vertices}\n")
        fh.write("# edge_id,from_vertex,to_vertex,segment_row\n")
        for e, u, v, r in network.edge_list():
            fh.write(f"{e},{u},{v},{r}\n")


def read_graph(path, n_vertices: int | None = None) -> RoadNetwork:
    """Parse an edge-list file. Edge ids must be exactly ``0..E-1`` in any order."""
    declared = None
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if not line.startswith("#"):
                line = line.split("#", 1)[0].strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("vertices="):
                    declared = int(body.split("=", 1)[1])
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            records.append(tuple(int(p) for p in parts))
    records.sort()
    ids = [r[0] for r in records]
    if ids != list(range(len(records))):
        raise ValueError(f"{path}: edge ids must be 0..{len(records) - 1} without gaps")
    tails = [r[1] for r in records]
    heads = [r[2] for r in records]
    rows = [r[3] for r in records]
    nv = n_vertices or declared or (max(tails + heads) + 1 if records else 0)
    return RoadNetwork(nv, tails, heads, rows)


def write_container(path, header: dict, arrays: dict[str, np.ndarray]):
    header = dict(header)
    header.setdefault("format_version", FORMAT_VERSION)
    header["byte_order"] = "little"
    specs = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype == bool:
            specs.append({"name": name, "dtype": "bits", "shape": list(arr.shape)})
            payloads.append(np.packbits(arr.ravel(order="C"), bitorder="little").tobytes())
        elif arr.dtype.kind == "f":
            specs.append({"name": name, "dtype": "float64", "shape": list(arr.shape)})
            payloads.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        elif arr.dtype.kind in "iu":
            specs.append({"name": name, "dtype": "int64", "shape": list(arr.shape)})
            payloads.append(np.ascontiguousarray(arr, dtype="<i8").tobytes())
        else:
            raise TypeError(f"unsupported dtype {arr.dtype} for array {name!r}")
    header["arrays"] = specs
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in payloads:
            fh.write(p)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not an array container")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    order = "<" if header.get("byte_order", "little") == "little" else ">"
    offset = 16 + hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        if spec["dtype"] == "bits":
            nbytes = (count + 7) // 8
            bits = np.frombuffer(data, np.uint8, nbytes, offset)
            arr = np.unpackbits(bits, count=count, bitorder="little").astype(bool)
        else:
            dt = np.dtype(order + ("f8" if spec["dtype"] == "float64" else "i8"))
            nbytes = count * 8
            arr = np.frombuffer(data, dt, count, offset).astype(dt.newbyteorder("="))
        arrays[spec["name"]] = arr.reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays


def write_matrix(path, matrix: TrafficMatrix, extra: dict | None = None):
    header = {
        "kind": "traffic_matrix",
        "m": matrix.m,
        "n": matrix.n,
        "start_epoch": matrix.grid.start_epoch,
        "resolution": matrix.grid.resolution,
        "layout": "row-major float64",
    }
    if extra:
        header.update(extra)
    # masked cells are written as NaN so the payload never leaks stale numbers
    write_container(path, header, {"values": matrix.filled(np.nan), "mask": matrix.mask})


def read_matrix(path) -> TrafficMatrix:
    header, arrays = read_container(path)
    grid = TimeGrid(int(header["start_epoch"]), int(header["n"]), int(header["resolution"]))
    values = arrays["values"]
    mask = arrays["mask"]
    values = np.where(mask, values, np.nan)
    return TrafficMatrix(grid, values, mask)


def read_matrix_csv(path, start_epoch: int = 0, resolution: int = 600) -> TrafficMatrix:
    """Rows are segments, columns are intervals; an empty cell is a missing value."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            rows.append([float(x) if x.strip() else np.nan for x in rec])
    if not rows:
        raise ValueError(f"{path}: empty matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows")
    values = np.array(rows, dtype=np.float64)
    mask = ~np.isnan(values)
    return TrafficMatrix(TimeGrid(start_epoch, width, resolution), values, mask)


def write_matrix_csv(path, matrix: TrafficMatrix):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for vals, obs in zip(matrix.values, matrix.mask):
            w.writerow([repr(float(v)) if o else "" for v, o in zip(vals, obs)])


def read_raw_series_csv(path):
    """Long-format raw samples ``segment_id,timestamp,travel_time``.

    Returns ``{segment_id: [(t, value), ...]}`` with samples sorted by time.
    """
    out: dict[str, list] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            out.setdefault(rec["segment_id"], []).append(
                (float(rec["timestamp"]), float(rec["travel_time"])))
    for samples in out.values():
        samples.sort()
    return out


def write_raw_series_csv(path, series: dict):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "timestamp", "travel_time"])
        for seg, samples in series.items():
            for t, v in samples:
                w.writerow([seg, repr(float(t)), repr(float(v))])

