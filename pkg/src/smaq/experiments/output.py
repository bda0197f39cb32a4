"""CSV and SVG outputs.

Every scenario gets ``<scenario>.csv`` with the header
``scenario,run,metric,value``: one row per run and metric (``run`` is the
repetition index), then ``median`` and ``stdev`` rows per metric and a
``failures`` row under run ``all``. Values are written with ``repr`` so the
same seed gives byte-identical files.
"""
import csv
import io
import os
from typing import Dict, List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsRecord, relative_difference  # noqa: E402

CSV_HEADER = ("scenario", "run", "metric", "value")

# fixed ids and no timestamp, so SVG files are reproducible
plt.rcParams["svg.hashsalt"] = "smaq"


def _fmt(value) -> str:
    if isinstance(value, float) and value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def csv_text(record: MetricsRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    metrics = record.metrics()
    for i, run in enumerate(record.runs):
        for m in metrics:
            if m in run:
                w.writerow((record.scenario, i, m, _fmt(run[m])))
    for m in metrics:
        w.writerow((record.scenario, "median", m, _fmt(record.median(m))))
        w.writerow((record.scenario, "stdev", m, _fmt(record.stdev(m))))
    w.writerow((record.scenario, "all", "failures", len(record.failures)))
    return buf.getvalue()


def read_csv(path: str) -> List[Tuple[str, str, str, str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{path}: unexpected header")
    return [tuple(r) for r in rows[1:]]


def _write_all(files: Dict[str, bytes]) -> List[str]:
    """Write every file or, on failure, remove the ones already written."""
    written = []
    try:
        for path, data in files.items():
            with open(path, "wb") as fh:
                written.append(path)
                fh.write(data)
    except OSError:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        raise
    return written


def _svg(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def bulk_panel(records: Sequence[MetricsRecord], orbit: str) -> bytes:
    """Median bytes at each checkpoint for both modes and every loss, with
    standard deviation as error bars."""
    recs = [r for r in records if r.config is not None and r.config.orbit == orbit]
    groups = sorted({r.config.loss for r in recs})
    modes = ("quic", "smaq-pep")
    fig, axes = plt.subplots(1, max(len(groups), 1), figsize=(4.5 * max(len(groups), 1), 3.6), squeeze=False)
    for ax, loss in zip(axes[0], groups):
        for k, mode in enumerate(modes):
            rec = next((r for r in recs if r.config.loss == loss and r.config.mode == mode), None)
            if rec is None:
                continue
            metrics = [m for m in rec.metrics() if m.startswith("bytes_at_")]
            xs = [j + (k - 0.5) * 0.38 for j in range(len(metrics))]
            ax.bar(xs, [rec.median(m) / 1e6 for m in metrics], width=0.38,
                   yerr=[rec.stdev(m) / 1e6 for m in metrics], label=mode, capsize=3)
            ax.set_xticks(range(len(metrics)))
            ax.set_xticklabels([m[len("bytes_at_"):] for m in metrics])
        ax.set_title(f"{orbit}, {loss * 100:g} % loss")
        ax.set_xlabel("time after Initial")
        ax.set_ylabel("received [MB]")
        ax.legend()
    fig.tight_layout()
    return _svg(fig)


def aplt_comparison(records: Sequence[MetricsRecord]) -> Dict[Tuple[str, float], Dict[str, float]]:
    """Relative median aPLT difference smaq-pep vs quic per (orbit, loss) and page."""
    out: Dict[Tuple[str, float], Dict[str, float]] = {}
    by_key = {(r.config.orbit, r.config.loss, r.config.mode): r for r in records if r.config is not None}
    for (orbit, loss, mode), smaq in by_key.items():
        quic = by_key.get((orbit, loss, "quic"))
        if mode != "smaq-pep" or quic is None:
            continue
        diffs = {}
        for m in smaq.metrics():
            if m.startswith("aplt_ms/") and quic.values(m) and smaq.values(m):
                diffs[m[len("aplt_ms/"):]] = relative_difference(smaq.median(m), quic.median(m))
        out[(orbit, loss)] = diffs
    return out


def webperf_panel(comparison: Dict[Tuple[str, float], Dict[str, float]], orbit: str) -> bytes:
    keys = sorted(k for k in comparison if k[0] == orbit)
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    pages: List[str] = []
    for k in keys:
        for p in comparison[k]:
            if p not in pages:
                pages.append(p)
    height = 0.8 / max(len(keys), 1)
    for i, key in enumerate(keys):
        diffs = comparison[key]
        ys = [j + i * height for j in range(len(pages))]
        ax.barh(ys, [100 * diffs.get(p, 0.0) for p in pages], height=height, label=f"{key[1] * 100:g} % loss")
    ax.set_yticks([j + 0.4 - height / 2 for j in range(len(pages))])
    ax.set_yticklabels(pages)
    ax.axvline(0, color="black", linewidth=0.8)
    ax.set_xlabel("relative median aPLT difference [%]")
    ax.set_title(f"{orbit}: smaq-pep vs quic")
    ax.legend()
    fig.tight_layout()
    return _svg(fig)


def comparison_csv(comparison: Dict[Tuple[str, float], Dict[str, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for (orbit, loss), diffs in sorted(comparison.items()):
        for page, value in diffs.items():
            w.writerow((f"webperf-{orbit}-{loss * 100:g}pct", "median", f"relative_aplt/{page}", _fmt(value)))
    return buf.getvalue()


def emit_outputs(records: Sequence[MetricsRecord], outdir: str) -> List[str]:
    """Write one CSV per record plus the plots for its experiment; returns the
    paths written. Nothing is written for an empty record set."""
    if not records:
        raise ValueError("no records to write")
    os.makedirs(outdir, exist_ok=True)
    files: Dict[str, bytes] = {}
    for rec in records:
        files[os.path.join(outdir, f"{rec.scenario}.csv")] = csv_text(rec).encode()
    experiments = {r.config.experiment for r in records if r.config is not None}
    orbits = sorted({r.config.orbit for r in records if r.config is not None})
    if "bulk" in experiments:
        bulk = [r for r in records if r.config is not None and r.config.experiment == "bulk"]
        for orbit in orbits:
            if any(r.config.orbit == orbit for r in bulk):
                files[os.path.join(outdir, f"bulk-{orbit}.svg")] = bulk_panel(bulk, orbit)
    if "webperf" in experiments:
        web = [r for r in records if r.config is not None and r.config.experiment == "webperf"]
        comparison = aplt_comparison(web)
        if comparison:
            files[os.path.join(outdir, "webperf-comparison.csv")] = comparison_csv(comparison).encode()
            for orbit in sorted({k[0] for k in comparison}):
                files[os.path.join(outdir, f"webperf-{orbit}.svg")] = webperf_panel(comparison, orbit)
    return _write_all(files)
