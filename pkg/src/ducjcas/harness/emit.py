"""CSV and manifest output."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np
import yaml

from .. import kernels
from .campaign import CampaignResult, ResultRow
from .config import ScenarioConfig

COLUMNS = ("case", "PtD_dBm", "Ms", "qamOrder", "metric", "value_dB", "trials", "stderr")
FAMILIES = {
    "location_smse": "smse_location.csv",
    "velocity_smse": "smse_velocity.csv",
    "ber": "ber.csv",
}


def _fmt(x: float) -> str:
    return repr(float(x))


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.case, _fmt(r.ptd_dbm), r.ms, r.qam_order, r.metric, _fmt(r.value_db), r.trials, _fmt(r.stderr)])
    return buf.getvalue()


def read_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ResultRow(
                row["case"],
                float(row["PtD_dBm"]),
                int(row["Ms"]),
                int(row["qamOrder"]),
                row["metric"],
                float(row["value_dB"]),
                int(row["trials"]),
                float(row["stderr"]),
            )
            for row in reader
        ]


def _write(path: Path, text: str):
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def emit_results(result: CampaignResult, cfg: ScenarioConfig, out_dir, extra: dict | None = None) -> list[Path]:
    """Write one CSV per metric family plus ``manifest.yaml``; returns the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    written = []
    for metric, name in FAMILIES.items():
        rows = [r for r in result.rows if r.metric == metric]
        p = out / name
        _write(p, rows_to_csv(rows))
        written.append(p)
    manifest = {
        "schema_version": cfg.schema_version,
        "seed": cfg.campaign.seed,
        "trials": cfg.campaign.trials,
        "ptd_dbm": cfg.ptd_points(),
        "baseline_grids": {
            "angle": cfg.baseline.angle_grid,
            "range": cfg.baseline.range_grid if cfg.baseline.range_grid is not None else cfg.numerology.n_subcarriers,
            "doppler": cfg.baseline.doppler_grid if cfg.baseline.doppler_grid is not None else cfg.numerology.n_symbols,
        },
        "failed_trials": dict(sorted(result.failures.items())),
        "kernel_backend": kernels.BACKEND,
        "numpy_version": np.__version__,
        "files": [p.name for p in written],
        "config": cfg.to_dict(),
    }
    if extra:
        manifest.update(extra)
    p = out / "manifest.yaml"
    _write(p, yaml.safe_dump(manifest, sort_keys=False, default_flow_style=None))
    written.append(p)
    return written
