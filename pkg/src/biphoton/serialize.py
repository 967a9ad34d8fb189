"""CSV and plot-script emission.

All files are UTF-8 with LF line endings.  Metadata rides in `#`-prefixed
header lines (`# key: value`), then one `#`-prefixed column-name line, then
the data rows.  Numbers are written with Python's shortest round-trip float
representation, so identical inputs give byte-identical files; nothing
time- or environment-dependent is emitted.  Plot scripts are plain gnuplot
text referencing the CSVs by relative name; no plotting engine is embedded.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibration import CalibrationProfile
from .optics import CoincidenceMap


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        if "," in x or "\n" in x:
            raise ValueError(f"cell text may not contain separators: {x!r}")
        return x
    return repr(float(x))


def write_table(
    path: str | Path,
    columns: Sequence[str],
    rows: Iterable[Sequence],
    metadata: Mapping[str, object] | None = None,
) -> Path:
    """Write one CSV with metadata header; empty rows give a header-only file."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append("# columns: " + ",".join(columns))
    lines.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(
                f"row width {len(row)} does not match {len(columns)} columns"
            )
        lines.append(",".join(_fmt(v) for v in row))
    try:
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {p}: {exc}") from exc
    return p


def read_table(path: str | Path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Inverse of write_table: (metadata, column arrays).

    Columns parse as float64; a column with any non-numeric cell comes back
    as an array of strings instead.
    """
    meta: dict[str, str] = {}
    columns: list[str] = []
    data: list[list[str]] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, value = body.split(":", 1)
                    meta[key.strip()] = value.strip()
                continue
            if not line:
                continue
            if not columns:
                columns = line.split(",")
                continue
            data.append(line.split(","))
    out: dict[str, np.ndarray] = {}
    for i, name in enumerate(columns):
        cells = [row[i] for row in data]
        try:
            out[name] = np.array([float(c) for c in cells], dtype=float)
        except ValueError:
            out[name] = np.array(cells, dtype=str)
    return meta, out


def write_coincidence_map(
    path: str | Path, cmap: CoincidenceMap,
    metadata: Mapping[str, object] | None = None,
) -> Path:
    rows = (
        (t1, t2, cmap.density[i, j])
        for i, t1 in enumerate(cmap.theta1_rad)
        for j, t2 in enumerate(cmap.theta2_rad)
    )
    return write_table(path, ["theta1_rad", "theta2_rad", "density"], rows, metadata)


def write_mca_histogram(
    path: str | Path, hist: np.ndarray,
    metadata: Mapping[str, object] | None = None,
) -> Path:
    rows = ((ch, int(n)) for ch, n in enumerate(np.asarray(hist)))
    return write_table(path, ["channel", "count"], rows, metadata)


def write_calibration_profile(
    path: str | Path, profile: CalibrationProfile,
    metadata: Mapping[str, object] | None = None,
) -> Path:
    rows = []
    for pos, rep in zip(profile.positions_m, profile.reports):
        i = rep.inputs
        rows.append((pos, rep.eta_corrected, rep.statistical_uncertainty,
                     i.n_c, i.n_cfp, i.n_t, i.n_l))
    return write_table(
        path,
        ["position_m", "eta", "eta_sigma", "n_c", "n_cfp", "n_t", "n_l"],
        rows, metadata,
    )


SCAN_COLUMNS = [
    "index", "position_m", "rotation_rad", "n_a", "n_b",
    "n_coinc_peak", "n_coinc_shifted", "effective", "corrected",
    "effective_per_10min", "duration_s",
]


def write_scan_rows(
    path: str | Path, rows,
    metadata: Mapping[str, object] | None = None,
) -> Path:
    def gen():
        for r in rows:
            yield (
                r.index, r.moving_detector_position_m, r.rotation_rad,
                r.n_a, r.n_b, r.n_coinc_peak, r.n_coinc_shifted,
                r.effective, r.corrected,
                r.effective * 600.0 / r.duration_s, r.duration_s,
            )
    return write_table(path, SCAN_COLUMNS, gen(), metadata)


def write_trajectories(
    path: str | Path, ensemble,
    metadata: Mapping[str, object] | None = None,
    max_trajectories: int | None = None,
) -> Path:
    """Lab-frame trajectory table traj_id,t_s,y1_m,y2_m."""
    n_write = ensemble.n_traj if max_trajectories is None \
        else min(max_trajectories, ensemble.n_traj)

    def gen():
        times = ensemble.times_physical_s
        mag = ensemble.magnification
        for k in range(n_write):
            y1 = mag * ensemble.y1_m[:, k]
            y2 = mag * ensemble.y2_m[:, k]
            for t, a, b in zip(times, y1, y2):
                yield (k, t, a, b)
    return write_table(path, ["traj_id", "t_s", "y1_m", "y2_m"], gen(), metadata)


def write_plot_script(
    path: str | Path,
    *,
    title: str,
    csv_name: str,
    xlabel: str,
    ylabel: str,
    series: Sequence[tuple[str, str, str]],
    extra: Sequence[str] = (),
) -> Path:
    """One gnuplot script per figure; series = (using-expr, title, style)."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    out_name = p.with_suffix(".png").name
    lines = [
        f"# gnuplot script: {title}",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set grid",
        "set term pngcairo size 900,600",
        f"set output '{out_name}'",
        *extra,
        "plot " + ", \\\n     ".join(
            f"'{csv_name}' using {using} with {style} title '{label}'"
            for using, label, style in series
        ),
    ]
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return p
