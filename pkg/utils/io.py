"""
Snapshot and Log Codecs

Delimited-text writers and readers for configuration snapshots, event logs,
lineage logs and the long-format count table. Floats are written with repr
so every value reads back bit-identical.
"""
import csv
import logging
import os
from typing import Dict, Iterable, List, Sequence

import numpy as np

from observability import log_export
from utils.core import Configuration
from utils.genealogy import LineageRecord
from utils.mechanisms import EventRecord

logger = logging.getLogger(__name__)

SNAPSHOT_PREFIX = "# "
EVENT_FIELDS = ["time", "mechanism", "event_id", "affected_ids"]
LINEAGE_FIELDS = ["time", "child_id", "parent_id", "child_level", "parent_level", "event_tag"]
COUNT_FIELDS = ["replicate", "time", "allele", "count"]


def _float(value: float) -> str:
    return repr(float(value))


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


# -- snapshots ---------------------------------------------------------------

def write_snapshot(path: str, config: Configuration) -> int:
    """
    One particle per row, sorted by id, preceded by a metadata line with
    lambda, time, dimension and the next free id.
    """
    _ensure_parent(path)
    coords = [f"x{i}" for i in range(config.dim)]
    fields = ["id", "level", "allele", "birth_time", *coords]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"{SNAPSHOT_PREFIX}lambda={_float(config.lam)},time={_float(config.time)},"
                     f"dim={config.dim},next_id={config.next_id}\n")
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for row in range(len(config)):
            record = {
                "id": int(config.ids[row]),
                "level": _float(config.levels[row]),
                "allele": int(config.alleles[row]),
                "birth_time": _float(config.birth_times[row]),
            }
            for i, name in enumerate(coords):
                record[name] = _float(config.locations[row, i])
            writer.writerow(record)
    return len(config)


def _parse_meta(line: str) -> Dict[str, str]:
    if not line.startswith(SNAPSHOT_PREFIX):
        raise ValueError("snapshot file is missing its metadata line")
    return dict(item.split("=", 1) for item in line[len(SNAPSHOT_PREFIX):].strip().split(","))


def read_snapshot(path: str) -> Configuration:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        meta = _parse_meta(handle.readline())
        rows = list(csv.DictReader(handle))
    dim = int(meta["dim"])
    lam = float(meta["lambda"])
    time = float(meta["time"])
    next_id = int(meta["next_id"])
    if not rows:
        config = Configuration(lam, dim=dim, time=time)
        config.next_id = next_id
        return config
    locations = np.array([[float(row[f"x{i}"]) for i in range(dim)] for row in rows]).reshape(len(rows), dim)
    return Configuration.from_arrays(
        lam, locations,
        alleles=[int(row["allele"]) for row in rows],
        levels=[float(row["level"]) for row in rows],
        birth_times=[float(row["birth_time"]) for row in rows],
        ids=[int(row["id"]) for row in rows],
        time=time, next_id=next_id)


# -- event and lineage logs --------------------------------------------------

def write_events(path: str, events: Iterable[EventRecord]) -> int:
    _ensure_parent(path)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=EVENT_FIELDS)
        writer.writeheader()
        for record in events:
            writer.writerow({
                "time": _float(record.time),
                "mechanism": record.mechanism,
                "event_id": record.event_id,
                "affected_ids": " ".join(str(i) for i in record.affected_ids),
            })
            count += 1
    return count


def read_events(path: str) -> List[EventRecord]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        return [EventRecord(float(row["time"]), row["mechanism"], int(row["event_id"]),
                            tuple(int(i) for i in row["affected_ids"].split()))
                for row in csv.DictReader(handle)]


def write_lineage(path: str, records: Iterable[LineageRecord]) -> int:
    _ensure_parent(path)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=LINEAGE_FIELDS)
        writer.writeheader()
        for record in records:
            writer.writerow({
                "time": _float(record.time),
                "child_id": record.child_id,
                "parent_id": "" if record.parent_id is None else record.parent_id,
                "child_level": _float(record.child_level),
                "parent_level": _float(record.parent_level),
                "event_tag": record.event_tag,
            })
            count += 1
    return count


def read_lineage(path: str) -> List[LineageRecord]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        return [LineageRecord(float(row["time"]), int(row["child_id"]),
                              int(row["parent_id"]) if row["parent_id"] else None,
                              float(row["child_level"]), float(row["parent_level"]), row["event_tag"])
                for row in csv.DictReader(handle)]


# -- long-format counts ------------------------------------------------------

def count_rows(replicate: int, times: Sequence[float], totals: Sequence[int],
               allele_counts: Sequence[Dict[int, int]]) -> List[Dict]:
    """(replicate, time, allele, count) rows; allele -1 holds the total population."""
    rows = []
    for t, total, by_allele in zip(times, totals, allele_counts):
        rows.append({"replicate": replicate, "time": _float(t), "allele": -1, "count": int(total)})
        for allele in sorted(by_allele):
            rows.append({"replicate": replicate, "time": _float(t), "allele": int(allele),
                         "count": int(by_allele[allele])})
    return rows


def write_counts(path: str, rows: Iterable[Dict]) -> int:
    _ensure_parent(path)
    rows = list(rows)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=COUNT_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    log_export("counts", path, len(rows))
    return len(rows)


def read_counts(path: str) -> List[Dict]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        return [{"replicate": int(row["replicate"]), "time": float(row["time"]),
                 "allele": int(row["allele"]), "count": int(row["count"])}
                for row in csv.DictReader(handle)]

