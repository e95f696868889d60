"""
Run-directory outputs: CSV tables, JSON reports, trajectories, plot data and the manifest
The manifest is written last and lists every other file with its checksum
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from wpflow.boundary.quantities import boundary_values
from wpflow.config.config_manager import MetricSpec
from wpflow.flow.integrator import Trajectory
from wpflow.models.points import reduce_periodic
from wpflow.models.results import EscapeReport, GammaReport, ManifestFile, RunManifest, VolumeReport

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.17g"
TRAJECTORY_COLUMNS = ["t", "x", "tau", "y1", "y2", "vx", "vtau", "vy1", "vy2", "f", "r"]


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class RunOutputs:
    """Writer for one run directory"""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def _path(self, name: str) -> Path:
        path = self.run_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        if path not in self.written:
            self.written.append(path)
        return path

    def write_csv(self, name: str, rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]]) -> Path:
        frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows))
        path = self._path(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        logger.debug(f"Wrote {path} ({len(frame)} rows)")
        return path

    def write_json(self, name: str, payload: Union[BaseModel, Dict[str, Any], List[Any]]) -> Path:
        path = self._path(name)
        if isinstance(payload, BaseModel):
            text = payload.model_dump_json(indent=2)
        else:
            text = json.dumps(payload, indent=2, default=str)
        path.write_text(text + "\n")
        logger.debug(f"Wrote {path}")
        return path

    def write_trajectory(self, name: str, trajectory: Trajectory, spec: MetricSpec) -> Path:
        """One row per sample: time, chart state, f and r"""
        q = reduce_periodic(trajectory.q, spec.tau_period, spec.torus_sides)
        f, r = boundary_values(q, trajectory.v, spec)
        data = np.column_stack([trajectory.t, q, trajectory.v, f, r])
        return self.write_csv(name, pd.DataFrame(data, columns=TRAJECTORY_COLUMNS))

    def emit_plot_data(self, results: BaseModel, kind: str) -> List[Path]:
        """
        Log-log scatter plus fitted line as plain CSV, one file per figure

        Args:
            results: EscapeReport, VolumeReport or GammaReport
            kind: File stem, e.g. "escape", "volume_E_rho", "gamma_k1"

        Returns:
            Paths written
        """
        if isinstance(results, EscapeReport):
            rows = [
                {"eps": r.eps, "min_T": r.min_T, "median_T": r.median_T, "fit": results.fit.predict(r.eps)}
                for r in results.rows
            ]
        elif isinstance(results, VolumeReport):
            rows = [
                {"param": r.param, "estimate": r.estimate, "stderr": r.stderr, "fit_value": r.fit_value}
                for r in results.rows
            ]
        elif isinstance(results, GammaReport):
            rows = [
                {
                    "eps": r.eps,
                    "m": r.m,
                    "N_k": r.N_k,
                    "T": r.T,
                    "implied_gamma": r.implied_gamma,
                    "fit_m": results.fit_m.predict(r.eps),
                    "fit_N": results.fit_N.predict(r.eps),
                }
                for r in results.rows
            ]
        else:
            raise TypeError(f"No plot data layout for {type(results).__name__}")
        return [self.write_csv(f"plot_{kind}.csv", rows)]

    def _seal_log_files(self) -> None:
        """Flush and detach file handlers writing inside the run directory"""
        root = logging.getLogger()
        for handler in list(root.handlers):
            filename = getattr(handler, "baseFilename", None)
            if filename and Path(filename).resolve().is_relative_to(self.run_dir.resolve()):
                handler.flush()
                root.removeHandler(handler)
                handler.close()

    def write_manifest(self, manifest: RunManifest) -> Path:
        """
        Checksum every file under the run directory and write the manifest last

        File logging into the run directory stops here so the recorded
        checksums stay valid.
        """
        logger.info(f"Sealing run directory {self.run_dir} (status {manifest.status})")
        self._seal_log_files()
        files = []
        for path in sorted(p for p in self.run_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME):
            files.append(
                ManifestFile(
                    path=path.relative_to(self.run_dir).as_posix(),
                    sha256=sha256_file(path),
                    bytes=path.stat().st_size,
                )
            )
        manifest = manifest.model_copy(update={"files": files})
        path = self.run_dir / MANIFEST_NAME
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(manifest.model_dump_json(indent=2) + "\n")
        tmp.replace(path)
        return path


def verify_manifest(run_dir: Path) -> Optional[str]:
    """None when every file matches the manifest, else a description of the first mismatch"""
    run_dir = Path(run_dir)
    manifest = RunManifest.model_validate_json((run_dir / MANIFEST_NAME).read_text())
    listed = {f.path: f for f in manifest.files}
    on_disk = {p.relative_to(run_dir).as_posix() for p in run_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME}
    if on_disk != set(listed):
        return f"unlisted or missing files: {sorted(on_disk ^ set(listed))}"
    for rel, entry in listed.items():
        if sha256_file(run_dir / rel) != entry.sha256:
            return f"checksum mismatch for {rel}"
    return None
