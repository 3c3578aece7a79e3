"""
Genealogy Command

Reads a simulate run directory, samples the n lowest-level particles at the
final snapshot of every replicate and writes their genealogies as Newick
trees together with pairwise coalescence statistics.
"""
import json
import logging
import os
from typing import List, Optional

from commands.console import print_error, print_header, print_success
from config import EXIT_CONFIG_ERROR, EXIT_OK, RUN_FILES
from observability import log_config_error, log_export
from utils.core import LookdownError
from utils.genealogy import AncestryTree, IncompleteLineageError, coalescence_statistics, export_newick, extract_tree
from utils.io import read_lineage, read_snapshot

logger = logging.getLogger(__name__)


class GenealogyInputError(LookdownError):
    """Run directory without the files a genealogy needs."""


def _load_summary(run_dir: str) -> dict:
    path = os.path.join(run_dir, RUN_FILES["summary"])
    if not os.path.isfile(path):
        raise GenealogyInputError(f"{run_dir}: no {RUN_FILES['summary']}; not a simulate run directory")
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def replicate_tree(run_dir: str, entry: dict, sample_size: int) -> AncestryTree:
    """Tree of the lowest `sample_size` levels at the final snapshot of one replicate."""
    target = os.path.join(run_dir, RUN_FILES["replicate_dir"].format(index=entry["replicate"]))
    lineage_path = os.path.join(target, RUN_FILES["lineage"])
    if not os.path.isfile(lineage_path):
        raise GenealogyInputError(f"{lineage_path}: lineage log missing")
    snapshot_path = os.path.join(target, RUN_FILES["snapshot"].format(index=len(entry["snapshot_times"]) - 1))
    if not os.path.isfile(snapshot_path):
        raise GenealogyInputError(f"{snapshot_path}: final snapshot missing")
    final = read_snapshot(snapshot_path)
    if sample_size > len(final):
        raise GenealogyInputError(f"replicate {entry['replicate']}: sample size {sample_size} exceeds "
                                  f"the final population of {len(final)}")
    start, end = entry["coverage"]
    return extract_tree(read_lineage(lineage_path), final.lowest(sample_size), final.time,
                        r=start, coverage=(start, end))


def genealogy(run_dir: str, sample_size: int, out: Optional[str] = None) -> int:
    """
    Export genealogies of a finished run

    Returns:
        EXIT_OK, or EXIT_CONFIG_ERROR for a missing or incomplete run
        directory and for a sample larger than the population
    """
    if sample_size < 1:
        print_error("sample size must be at least 1")
        return EXIT_CONFIG_ERROR
    print_header(f"genealogy: n={sample_size}")
    try:
        summary = _load_summary(run_dir)
        trees: List[AncestryTree] = [replicate_tree(run_dir, entry, sample_size)
                                     for entry in summary["replicates"]]
    except (GenealogyInputError, IncompleteLineageError, KeyError) as e:
        message = str(e) if not isinstance(e, KeyError) else f"{run_dir}: summary is missing {e}"
        log_config_error(run_dir, message)
        print_error(message)
        return EXIT_CONFIG_ERROR

    out_dir = out or run_dir
    os.makedirs(out_dir, exist_ok=True)
    newick_path = os.path.join(out_dir, RUN_FILES["newick"])
    with open(newick_path, "w", encoding="utf-8") as handle:
        for tree in trees:
            handle.write(export_newick(tree) + "\n")
    log_export("newick", newick_path, len(trees))

    statistics = coalescence_statistics(trees)
    statistics["sample_size"] = sample_size
    stats_path = os.path.join(out_dir, RUN_FILES["coalescence"])
    with open(stats_path, "w", encoding="utf-8") as handle:
        json.dump(statistics, handle, indent=2, sort_keys=True)
    log_export("coalescence", stats_path, statistics["n_pairs"])
    print_success(f"{len(trees)} trees written to {newick_path}",
                  {"rate_mle": statistics["rate_mle"], "n_coalesced": statistics["n_coalesced"]})
    return EXIT_OK
