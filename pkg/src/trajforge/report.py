"""Tables, curves and graphs derived from baseline scores and run logs."""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .archive import iter_kind
from .metrics import ScoreReport, SflHistogram

TABLE_COLUMNS = ("eth", "hotel", "univ", "zara1", "zara2", "avg")


# -- baseline table ---------------------------------------------------------------

def average_row(row: dict) -> ScoreReport | None:
    """Mean over the datasets present in ``row``; None if none are."""
    present = [r for name, r in row.items() if name != "avg" and r is not None]
    if not present:
        return None
    return ScoreReport(
        min_ade=sum(r.min_ade for r in present) / len(present),
        min_fde=sum(r.min_fde for r in present) / len(present),
        objective_j=sum(r.objective_j for r in present) / len(present),
    )


def table_text(rows: dict, datasets=TABLE_COLUMNS[:-1]) -> str:
    """Aligned text, one method per row, each cell ``minADE/minFDE``."""
    header = ["Method"] + [d.upper() for d in datasets] + ["AVG"]
    body = []
    for method, row in rows.items():
        cells = [method]
        for name in list(datasets) + ["avg"]:
            r = row.get(name)
            cells.append("n/a" if r is None else f"{r.min_ade:.2f}/{r.min_fde:.2f}")
        body.append(cells)
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    fmt = lambda line: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(line, widths)))
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(b) for b in body]) + "\n"


def table_csv(rows: dict, datasets=TABLE_COLUMNS[:-1]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = list(datasets) + ["avg"]
    writer.writerow(["method"] + [f"{n}_{m}" for n in names for m in ("minADE", "minFDE")])
    for method, row in rows.items():
        cells = [method]
        for n in names:
            r = row.get(n)
            cells += ["n/a", "n/a"] if r is None else [f"{r.min_ade:.4f}", f"{r.min_fde:.4f}"]
        writer.writerow(cells)
    return buf.getvalue()


# -- run statistics -------------------------------------------------------------------

def best_j_curve(events) -> list[tuple[int, int, float]]:
    """(generation, evaluations so far, best J) per generation, from the log alone."""
    return [
        (e["payload"]["generation"], e["payload"]["evaluations"], e["payload"]["best_j"])
        for e in iter_kind(events, "generation_summary")
    ]


def curve_csv(curve) -> str:
    lines = ["generation,evaluations,best_j"]
    lines += [f"{g},{n},{j!r}" for g, n, j in curve]
    return "\n".join(lines) + "\n"


def write_curve_svg(curve, path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "trajforge", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.step([n for _, n, _ in curve], [j for _, _, j in curve], where="post", marker="o")
        ax.set_xlabel("evaluations")
        ax.set_ylabel("best objective J")
        ax.set_title("best-so-far J")
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def evaluated_candidates(events) -> dict[str, dict]:
    """Latest evaluation record per candidate id, in first-seen order."""
    out: dict[str, dict] = {}
    for e in iter_kind(events, "candidate_evaluated"):
        out[e["payload"]["id"]] = e["payload"]
    return out


def final_best(events) -> dict | None:
    summaries = list(iter_kind(events, "generation_summary"))
    if not summaries:
        return None
    best_id = summaries[-1]["payload"]["best_id"]
    return evaluated_candidates(events).get(best_id)


def final_sfl(events) -> SflHistogram | None:
    best = final_best(events)
    if best is None or best.get("sfl") is None:
        return None
    return SflHistogram.from_dict(best["sfl"])


def lineage_dot(events) -> str:
    cands = evaluated_candidates(events)
    best = final_best(events)
    lines = ["digraph lineage {", "  rankdir=LR;", "  node [shape=box, fontsize=10];"]
    for cid, c in cands.items():
        j = c.get("objective_j")
        label = f"{cid[:8]}\\ngen {c['generation']} {c['operator']}\\n" + (
            f"J={j:.4f}" if j is not None and math.isfinite(j) else c["status"]
        )
        style = ", style=bold" if best is not None and cid == best["id"] else ""
        style += ", color=gray" if c["status"] != "ok" else ""
        lines.append(f'  "{cid}" [label="{label}"{style}];')
    for cid, c in cands.items():
        for p in c["parent_ids"]:
            lines.append(f'  "{p}" -> "{cid}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
