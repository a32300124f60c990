#!/usr/bin/env python3
"""
Export of solutions, error reports and convergence tables
"""

import os
import csv
import json
import shutil
import logging
import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np

from models import ConvergenceRow, ErrorReport, RunConfig

logger = logging.getLogger(__name__)


def backup_existing(path: str) -> Optional[str]:
    """
    Copy an existing file to `<path>.backup` before it is overwritten

    Returns:
        The backup path, or None when there was nothing to back up
    """
    if not os.path.exists(path):
        return None
    backup_file = f"{path}.backup"
    shutil.copyfile(path, backup_file)
    logger.debug(f"Backed up {path} to {backup_file}")
    return backup_file


def load_json(path: str) -> Dict:
    with open(path, "r") as f:
        return json.load(f)


def solution_to_dict(dofmap, values: np.ndarray) -> Dict[str, List[float]]:
    """Global dof values keyed by entity, e.g. {"vertex:3": [...], "element:0": [...]}"""
    mesh = dofmap.mesh
    out: Dict[str, List[float]] = {}
    for (codim, index), (start, stop) in dofmap.ranges.items():
        if stop > start:
            out[mesh.entity_key(codim, index)] = [float(v) for v in values[start:stop]]
    return out


class ResultsWriter:
    """Writes run outputs into one directory"""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        os.makedirs(self.output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def write_json(self, name: str, data: Dict) -> str:
        """Save a JSON document, backing up any previous version"""
        target = self.path(name)
        try:
            backup_existing(target)
            with open(target, "w") as f:
                json.dump(data, f, indent=2, sort_keys=True)
                f.write("\n")
        except Exception as e:
            logger.error(f"Error saving {target}: {e}")
            raise
        logger.info(f"Saved {target}")
        return target

    def write_solution(self, name: str, dofmap, values: np.ndarray, run: RunConfig) -> str:
        return self.write_json(name, {
            "run": run.to_dict(),
            "num_dofs": int(dofmap.size),
            "dofs": solution_to_dict(dofmap, values),
            "written": datetime.datetime.now().isoformat(),
        })

    def write_report(self, name: str, report: ErrorReport, run: RunConfig) -> str:
        data = report.to_dict()
        data["run"] = run.to_dict()
        return self.write_json(name, data)

    def write_convergence_csv(self, name: str, rows: Sequence[ConvergenceRow]) -> str:
        """
        Export a convergence table with the fixed columns
        h, N_h, e_L2, rate_L2, e_Hm, rate_Hm, osc
        """
        target = self.path(name)
        if not rows:
            logger.warning("No convergence rows to export")
        backup_existing(target)
        with open(target, "w", newline="", encoding="utf-8") as csvfile:
            writer = csv.writer(csvfile)
            writer.writerow(ConvergenceRow.CSV_COLUMNS)
            for row in rows:
                writer.writerow(row.to_csv_row())
        logger.info(f"Exported {len(rows)} rows to {target}")
        return target
