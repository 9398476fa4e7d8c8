"""Result serialization: results.json, per-table CSVs, report.md, manifest.

Wall-clock values live only under keys matched by :func:`strip_timing`
(`timing` subtrees and `*seconds*`/`elapsed` fields) and inside the marked
timing section of report.md, so two runs of the same plan can be compared
for byte equality after stripping those.

``audit_results`` recomputes every reported detection rate from the
persisted per-instance prediction tables and returns any mismatch, keeping
the summary tables honest against the raw records.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import time
from typing import Iterable

import numpy as np

__all__ = ["emit_report", "strip_timing", "strip_timing_md", "audit_results"]

_TIMING_BEGIN = "<!-- timing:begin -->"
_TIMING_END = "<!-- timing:end -->"


# ---------------------------------------------------------------------------
# Timing removal


def strip_timing(results):
    """Deep-copy ``results`` without wall-time fields."""
    if isinstance(results, dict):
        return {
            k: strip_timing(v)
            for k, v in results.items()
            if k != "timing" and "seconds" not in k and k != "elapsed"
        }
    if isinstance(results, list):
        return [strip_timing(v) for v in results]
    return results


def strip_timing_md(text: str) -> str:
    """Drop the marked timing section from a rendered report."""
    pattern = re.escape(_TIMING_BEGIN) + r".*?" + re.escape(_TIMING_END)
    return re.sub(pattern, "", text, flags=re.DOTALL)


# ---------------------------------------------------------------------------
# Rendering helpers


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _md_table(headers: Iterable[str], rows: Iterable[Iterable]) -> str:
    headers = list(headers)
    lines = [
        "| " + " | ".join(headers) + " |",
        "| " + " | ".join("---" for _ in headers) + " |",
    ]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def _matrix_md(matrix: dict) -> str:
    headers = ["surrogate \\ target", *matrix["cols"], "avg"]
    rows = []
    for name, cells, avg in zip(matrix["rows"], matrix["cells"], matrix["row_avg"]):
        rows.append([name, *cells, avg])
    rows.append(["avg", *matrix["col_avg"], matrix["average"]])
    return _md_table(headers, rows)


def _matrix_csv_rows(matrix: dict) -> list[list]:
    out = [["surrogate", *matrix["cols"], "row_avg"]]
    for name, cells, avg in zip(matrix["rows"], matrix["cells"], matrix["row_avg"]):
        out.append([name, *cells, avg])
    out.append(["col_avg", *matrix["col_avg"], matrix["average"]])
    return out


def _metrics_md(per_model: dict) -> str:
    rows = [
        [kind, m["recall"], m["precision"], m["f1"]]
        for kind, m in per_model.items()
    ]
    return _md_table(["model", "recall", "precision", "f1"], rows)


def _timing_md(timing: dict) -> str:
    rows = []
    for family, kinds in timing.items():
        for kind, rep in kinds.items():
            rows.append(
                [family, kind, rep["n_instances"],
                 f"{rep['total_seconds']:.2f}", f"{rep['mean_seconds']:.4f}"]
            )
    table = _md_table(
        ["family", "surrogate", "instances", "total_s", "mean_s"], rows
    )
    return f"{_TIMING_BEGIN}\n{table}{_TIMING_END}\n"


def _render_transfer(results: dict) -> list[str]:
    out = [f"# Transfer study ({results['family']})\n"]
    out.append("## Clean performance\n")
    for group, per_model in results["clean_performance"].items():
        out.append(f"### {group}\n")
        out.append(_metrics_md(per_model))
    out.append("## Evasion against the surrogate\n")
    rows = [
        [k, v["n"], v["evasion_rate"], v["mean_iterations"], v["mean_queries"]]
        for k, v in results["evasion"].items()
    ]
    out.append(_md_table(["surrogate", "n", "evasion_rate", "mean_t", "mean_queries"], rows))
    out.append("## Adversarial transferability (detection rate)\n")
    titles = {
        "attacker": "(a) attacker's own models",
        "defender_same_hyper": "(b) defender models, attacker's hyperparameters",
        "defender_diff_hyper": "(c) defender models, own hyperparameters",
    }
    for key, title in titles.items():
        out.append(f"### {title}\n")
        out.append(_matrix_md(results["matrices"][key]))
    out.append("## Detection on the original malicious pool\n")
    rows = [
        [group, *[rates[k] for k in results["matrices"]["attacker"]["cols"]]]
        for group, rates in results["clean_detection"].items()
    ]
    out.append(_md_table(["models", *results["matrices"]["attacker"]["cols"]], rows))
    out.append(
        f"Clean average {results['clean_average']:.4f} vs adversarial cross-model "
        f"average {results['cross_model_average']:.4f}.\n"
    )
    return out


def _render_campaign(results: dict) -> list[str]:
    out = ["# Botnet campaign\n"]
    for family, fam in results["families"].items():
        out.append(f"## {family}\n")
        out.append("### Detection rate, attacker-side models\n")
        out.append(_matrix_md(fam["attacker_table"]))
        out.append("### Detection rate, defender-side models\n")
        out.append(_matrix_md(fam["defender_table"]))
        out.append("### Perturbation magnitude (raw units)\n")
        for kind, rep in fam["perturbation"].items():
            rows = [
                [f, m, x]
                for f, m, x in zip(rep["features"], rep["mean_abs"], rep["max_abs"])
            ]
            out.append(f"Surrogate {kind}:\n")
            out.append(_md_table(["factor", "mean |delta|", "max |delta|"], rows))
    out.append("## Family averages (defender-side detection rate)\n")
    rows = [[f, v] for f, v in results["family_averages"]["defender"].items()]
    out.append(_md_table(["family", "avg detection rate"], rows))
    return out


def _render_defense(results: dict) -> list[str]:
    out = ["# Defense evaluation\n"]
    for family, fam in results["families"].items():
        out.append(f"## {family}\n")
        kinds = list(fam["unprotected"].keys())
        rows = [
            [k, fam["unprotected"][k], fam["detector"][k],
             fam["protected"][k]["rate"], fam["protected"][k]["n_survivors"],
             fam["baseline"][k]]
            for k in kinds
        ]
        out.append(
            _md_table(
                ["surrogate", "unprotected NIDS", "detector", "protected NIDS",
                 "survivors", "baseline"],
                rows,
            )
        )
        w = ", ".join(f"{v:.3f}" for v in fam["weights"])
        out.append(
            f"Sub-detector weights (modifiable, dependent, immutable): {w}. "
            f"Clean traffic pass rate {fam['clean_pass_rate']:.4f}.\n"
        )
    out.append("## Averages\n")
    avg = results["averages"]
    out.append(
        _md_table(
            ["unprotected", "detector", "protected", "baseline"],
            [[avg["unprotected"], avg["detector"], avg["protected"], avg["baseline"]]],
        )
    )
    pooled = results["pooled"]
    out.append(
        f"Pooled over every instance: unprotected {pooled['unprotected']:.4f}, "
        f"detector {pooled['detector']:.4f}, protected {pooled['protected']:.4f} "
        f"({pooled['n_survivors']} survivors), baseline {pooled['baseline']:.4f}.\n"
    )
    return out


def _render_markdown(results: dict) -> str:
    study = results.get("study", "")
    sections: list[str] = []
    if study == "transfer":
        sections += _render_transfer(results)
    elif study == "campaign":
        sections += _render_campaign(results)
    elif study == "defense":
        sections += _render_defense(results)
    else:  # pragma: no cover - future studies
        sections.append("# Results\n")
    if "timing" in results:
        sections.append("## Crafting time (seconds)\n")
        sections.append(_timing_md(results["timing"]))
    return "\n".join(sections)


# ---------------------------------------------------------------------------
# Emission


def _write_csv(path: str, columns: list, rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def emit_report(results: dict, outdir, name: str | None = None) -> dict[str, str]:
    """Write results.json, per-table CSVs, report.md, and manifest.json.

    Returns a mapping of artifact names to paths.  The manifest records the
    plan, content digests of every written file, and the wall time; it is the
    one artifact expected to differ between identical runs.
    """
    started = time.perf_counter()
    outdir = str(outdir)
    tables_dir = os.path.join(outdir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    study = name or results.get("study", "results")
    paths: dict[str, str] = {}

    serializable = {k: v for k, v in results.items() if k != "per_instance"}
    results_path = os.path.join(outdir, f"results_{study}.json")
    with open(results_path, "w", encoding="utf-8") as fh:
        json.dump(serializable, fh, indent=2, sort_keys=True)
    paths["results"] = results_path

    for table_name, table in results.get("per_instance", {}).items():
        path = os.path.join(tables_dir, f"{table_name}.csv")
        _write_csv(path, table["columns"], table["rows"])
        paths[table_name] = path

    for key, matrix in results.get("matrices", {}).items():
        path = os.path.join(tables_dir, f"matrix_{key}.csv")
        rows = _matrix_csv_rows(matrix)
        _write_csv(path, rows[0], rows[1:])
        paths[f"matrix_{key}"] = path
    for family, fam in results.get("families", {}).items():
        for key in ("attacker_table", "defender_table"):
            if key in fam:
                path = os.path.join(tables_dir, f"{family}_{key}.csv")
                rows = _matrix_csv_rows(fam[key])
                _write_csv(path, rows[0], rows[1:])
                paths[f"{family}_{key}"] = path

    report_path = os.path.join(outdir, f"report_{study}.md")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(_render_markdown(results))
    paths["report"] = report_path

    from . import __version__

    manifest = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "study": study,
        "plan": results.get("plan"),
        "files": {k: _sha256(p) for k, p in paths.items()},
        "emit_seconds": time.perf_counter() - started,
    }
    manifest_path = os.path.join(outdir, f"manifest_{study}.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    paths["manifest"] = manifest_path
    return paths


# ---------------------------------------------------------------------------
# Self-audit: recompute detection rates from the persisted per-instance rows.


def _read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    return rows[0], rows[1:]


def _rate(rows: list[list[str]], columns: list[str], surrogate: str, pred_col: str,
          extra=None) -> float:
    s = columns.index("surrogate")
    p = columns.index(pred_col)
    vals = [
        int(r[p]) == 1
        for r in rows
        if r[s] == surrogate and (extra is None or extra(r))
    ]
    return float(np.mean(vals)) if vals else 0.0


def _check_matrix(matrix: dict, rows, columns, group: str, mismatches: list[str],
                  label: str, tol: float = 1e-9) -> None:
    for i, surrogate in enumerate(matrix["rows"]):
        for j, target in enumerate(matrix["cols"]):
            got = _rate(rows, columns, surrogate, f"pred_{group}_{target}")
            want = matrix["cells"][i][j]
            if abs(got - want) > tol:
                mismatches.append(
                    f"{label}[{surrogate}][{target}] = {want} but records give {got}"
                )


def audit_results(results: dict, outdir) -> list[str]:
    """Recompute every reported detection rate from the persisted CSVs."""
    mismatches: list[str] = []
    tables_dir = os.path.join(str(outdir), "tables")
    study = results.get("study")

    if study == "transfer":
        columns, rows = _read_csv(os.path.join(tables_dir, "transfer_predictions.csv"))
        groups = {
            "attacker": "attacker",
            "defender_same_hyper": "defender_same",
            "defender_diff_hyper": "defender_diff",
        }
        for key, group in groups.items():
            _check_matrix(results["matrices"][key], rows, columns, group,
                          mismatches, f"matrices.{key}")

    elif study == "campaign":
        for family, fam in results["families"].items():
            columns, rows = _read_csv(
                os.path.join(tables_dir, f"campaign_predictions_{family}.csv")
            )
            _check_matrix(fam["attacker_table"], rows, columns, "attacker",
                          mismatches, f"{family}.attacker_table")
            _check_matrix(fam["defender_table"], rows, columns, "defender",
                          mismatches, f"{family}.defender_table")

    elif study == "defense":
        columns, rows = _read_csv(os.path.join(tables_dir, "defense_predictions.csv"))
        fam_col = columns.index("family")
        det_col = columns.index("detector_label")
        for family, fam in results["families"].items():
            fam_rows = [r for r in rows if r[fam_col] == family]
            for kind in fam["unprotected"]:
                checks = {
                    ("unprotected", "nids_label", None): fam["unprotected"][kind],
                    ("detector", "detector_label", None): fam["detector"][kind],
                    ("baseline", "baseline_label", None): fam["baseline"][kind],
                    ("protected", "nids_label",
                     lambda r: int(r[det_col]) == 0): fam["protected"][kind]["rate"],
                }
                for (label, col, extra), want in checks.items():
                    got = _rate(fam_rows, columns, kind, col, extra)
                    if abs(got - want) > 1e-9:
                        mismatches.append(
                            f"{family}.{label}[{kind}] = {want} but records give {got}"
                        )
    return mismatches
