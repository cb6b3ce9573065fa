"""Markdown/CSV/JSON tables, Kendall's tau box plots, and the run report."""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape, quoteattr

from .metrics import CollectionMetrics, MeanStat, group_bounds

SCHEMA_VERSION = 1
FORMATS = ("markdown", "csv", "json")
_SUFFIX = {"markdown": "md", "csv": "csv", "json": "json"}


def _labels(ms: Sequence[CollectionMetrics]):
    models = list(dict.fromkeys(m.model for m in ms))
    collections = list(dict.fromkeys(m.collection for m in ms))
    by_key = {(m.model, m.collection): m for m in ms}
    return models, collections, by_key


def _num(v: float, digits: int, signed: bool = False) -> str:
    v = 0.0 if v == 0 else v
    return f"{v:+.{digits}f}" if signed else f"{v:.{digits}f}"


def _cell(stat: MeanStat | None, digits: int, signed: bool = False, bold_positive: bool = False) -> str:
    if stat is None:
        return "–"
    text = _num(stat.value, digits, signed)
    if stat.significant:
        text += "\\*"
    if bold_positive and round(stat.value, digits) > 0:
        text = f"**{text}**"
    return text


def _alrs_cell(m: CollectionMetrics) -> str:
    if m.alrs_all is None:
        return "–"
    dagger = "†" if (m.alrs_all_signed or 0) < 0 else ""
    return f"{m.alrs_all}{dagger}"


def group_label(lo: int, hi: int) -> str:
    return f"{lo + 1}–{hi}"


def _md_table(header: list[str], rows: list[list[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] + [":-:"] * (len(header) - 1)) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def rank_shift_table(ms: Sequence[CollectionMetrics]):
    models, collections, by_key = _labels(ms)
    header = ["Model"] + [f"{c} {name}" for c in collections for name in ("mAARS", "ALRS_all")]
    rows = []
    for model in models:
        cells = [by_key.get((model, c)) for c in collections]
        if not any(m is not None and m.maars is not None for m in cells):
            continue  # pairwise-only model
        row = [model]
        for m in cells:
            ok = m is not None and m.maars is not None
            row += [_cell(m.maars, 4) if ok else "–", _alrs_cell(m) if ok else "–"]
        rows.append(row)
    return header, rows


def _ks(ms):
    return sorted({k for m in ms for k in m.m_ys_topk})


def year_topk_table(ms: Sequence[CollectionMetrics]):
    models, collections, by_key = _labels(ms)
    ks = _ks(ms)
    header = ["Model", "Collection"] + [f"K={k}" for k in ks]
    rows = []
    for model in models:
        for c in collections:
            m = by_key.get((model, c))
            if m is None or not m.m_ys_topk:
                continue
            rows.append([model, c] + [_cell(m.m_ys_topk.get(k), 3) for k in ks])
    return header, rows


def _n_groups(ms):
    return max((len(m.m_ysg) for m in ms), default=0)


def year_group_table(ms: Sequence[CollectionMetrics]):
    models, collections, by_key = _labels(ms)
    n_groups = _n_groups(ms)
    bounds = group_bounds(max(10 * n_groups, 10))[:n_groups]
    header = ["Model", "Collection"] + [group_label(lo, hi) for lo, hi in bounds]
    rows = []
    for model in models:
        for c in collections:
            m = by_key.get((model, c))
            if m is None or not m.m_ysg:
                continue
            cells = [_cell(m.m_ysg[g] if g < len(m.m_ysg) else None, 3, signed=True, bold_positive=True)
                     for g in range(n_groups)]
            rows.append([model, c] + cells)
    return header, rows


def reversal_table(ms: Sequence[CollectionMetrics]):
    with_rr = [m for m in ms if m.rr]
    multi = len({m.collection for m in with_rr}) > 1
    header = ["Model"] + (["Collection"] if multi else []) + ["Relevance", "Mean RR", "Max RR"]
    rows = []
    for m in with_rr:
        for lvl, s in m.rr.items():
            rows.append([m.model] + ([m.collection] if multi else []) + [lvl, _cell(s.mean, 4), f"{s.max:.4f}"])
    return header, rows


TABLES = (
    ("rank_shift", "Table 1. Rank shift: mAARS (mean over topics) and ALRS_all (max over topics)", rank_shift_table),
    ("year_shift_topk", "Table 2. Mean publication-year shift in the top-K (mYS)", year_topk_table),
    ("year_shift_groups", "Table 3. Mean publication-year shift by rank group (mYSG)", year_group_table),
    ("reversal_rate", "Table 4. Pairwise reversal rate after date injection", reversal_table),
)

LEGEND = (
    "`*` p < 0.05, two-sided one-sample t-test against 0. "
    "`†` the largest shift was negative before taking the absolute value. "
    "Bold marks positive year shifts."
)


def render_markdown(ms: Sequence[CollectionMetrics]) -> str:
    parts = []
    for _name, title, build in TABLES:
        header, rows = build(ms)
        if not rows:
            continue
        parts.append(f"### {title}\n\n{_md_table(header, rows)}\n")
    parts.append(LEGEND + "\n")
    return "\n".join(parts)


def _csv_rows(ms: Sequence[CollectionMetrics]):
    def stat_row(table, m, column, s: MeanStat, digits):
        return [table, m.model, m.collection, column, repr(s.value), _num(s.value, digits),
                "" if s.t is None else repr(s.t), "" if s.p is None else repr(s.p),
                "" if s.df is None else s.df, s.n_topics, int(s.significant)]

    yield ["table", "model", "collection", "column", "value", "formatted", "t", "p", "df", "n_topics", "significant"]
    for m in ms:
        if m.maars is not None:
            yield stat_row("rank_shift", m, "mAARS", m.maars, 4)
            yield ["rank_shift", m.model, m.collection, "ALRS_all", m.alrs_all, str(m.alrs_all), "", "", "",
                   m.n_topics, 0]
        for k, s in m.m_ys_topk.items():
            yield stat_row("year_shift_topk", m, f"K={k}", s, 3)
        bounds = group_bounds(max(10 * len(m.m_ysg), 10))
        for (lo, hi), s in zip(bounds, m.m_ysg):
            yield stat_row("year_shift_groups", m, group_label(lo, hi), s, 3)
        for lvl, s in m.rr.items():
            yield stat_row("reversal_rate", m, f"mean RR {lvl}", s.mean, 4)
            yield ["reversal_rate", m.model, m.collection, f"max RR {lvl}", repr(s.max), f"{s.max:.4f}", "", "",
                   "", s.n_topics, 0]


def render_csv(ms: Sequence[CollectionMetrics]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(_csv_rows(ms))
    return buf.getvalue()


def render_json(ms: Sequence[CollectionMetrics]) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "collections": [m.to_dict() for m in ms]}
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def load_tables_json(path) -> list[CollectionMetrics]:
    doc = json.loads(Path(path).read_text("utf-8"))
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    return [CollectionMetrics.from_dict(d) for d in doc["collections"]]


def emit_tables(ms: Sequence[CollectionMetrics], out_dir, formats=FORMATS, stem: str = "tables") -> dict[str, Path]:
    """Write one file per requested format; returns format -> path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    renderers = {"markdown": render_markdown, "csv": render_csv, "json": render_json}
    written = {}
    for fmt in formats:
        if fmt not in renderers:
            raise ValueError(f"unknown format {fmt!r}")
        path = out_dir / f"{stem}.{_SUFFIX[fmt]}"
        path.write_text(renderers[fmt](ms), "utf-8")
        written[fmt] = path
    return written


# -- Kendall's tau box plots -------------------------------------------------

def box_stats(values: Sequence[float]) -> dict:
    """Median, linear-interpolation quartiles, 1.5*IQR whiskers and outliers."""
    data = sorted(values)
    if not data:
        raise ValueError("no values")
    if len(data) == 1:
        q1 = med = q3 = data[0]
    else:
        q1, med, q3 = statistics.quantiles(data, n=4, method="inclusive")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = [v for v in data if lo_fence <= v <= hi_fence]
    return {
        "n": len(data),
        "median": med,
        "q1": q1,
        "q3": q3,
        # with interpolated quartiles the nearest inlier can sit inside the box
        "whisker_low": min(min(inside), q1),
        "whisker_high": max(max(inside), q3),
        "outliers": [v for v in data if v < lo_fence or v > hi_fence],
    }


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".") if v != int(v) else str(int(v))


def render_tau_svg(taus: Mapping[str, Mapping[str, float]], title: str = "Kendall's tau") -> str:
    models = list(taus)
    if not models or any(not taus[m] for m in models):
        raise ValueError("every model needs at least one topic")
    stats_by_model = {m: box_stats(list(taus[m].values())) for m in models}
    left, top, plot_h, slot = 60, 40, 300, 110
    width = left + slot * len(models) + 20
    height = top + plot_h + 70

    def y(v: float) -> float:
        return round(top + (1 - (v + 1) / 2) * plot_h, 2)

    meta = json.dumps(stats_by_model, sort_keys=True)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f"<title>{escape(title)}</title>",
        f"<metadata>{escape(meta)}</metadata>",
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for tick in (-1.0, -0.5, 0.0, 0.5, 1.0):
        ty = y(tick)
        out.append(f'<line x1="{left - 5}" y1="{ty}" x2="{left}" y2="{ty}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{ty + 4}" text-anchor="end">{_fmt(tick)}</text>')
        out.append(f'<line x1="{left}" y1="{ty}" x2="{width - 20}" y2="{ty}" stroke="#ddd"/>')
    for i, model in enumerate(models):
        s = stats_by_model[model]
        cx = left + slot * i + slot / 2
        half = 25
        attrs = " ".join(f'data-{k}="{s[k]!r}"' for k in ("median", "q1", "q3", "whisker_low", "whisker_high"))
        out.append(f'<g class="box" data-model={quoteattr(model)} data-n="{s["n"]}" {attrs}>')
        out.append(f'<line x1="{cx}" y1="{y(s["whisker_high"])}" x2="{cx}" y2="{y(s["q3"])}" stroke="black"/>')
        out.append(f'<line x1="{cx}" y1="{y(s["q1"])}" x2="{cx}" y2="{y(s["whisker_low"])}" stroke="black"/>')
        for w in ("whisker_high", "whisker_low"):
            out.append(f'<line x1="{cx - half / 2}" y1="{y(s[w])}" x2="{cx + half / 2}" y2="{y(s[w])}" stroke="black"/>')
        box_h = round(y(s["q1"]) - y(s["q3"]), 2)
        out.append(f'<rect x="{cx - half}" y="{y(s["q3"])}" width="{2 * half}" height="{box_h}" '
                   'fill="#9ecae1" stroke="black"/>')
        out.append(f'<line class="median" x1="{cx - half}" y1="{y(s["median"])}" x2="{cx + half}" '
                   f'y2="{y(s["median"])}" stroke="#d62728" stroke-width="2"/>')
        for v in s["outliers"]:
            out.append(f'<circle class="outlier" cx="{cx}" cy="{y(v)}" r="3" fill="none" stroke="black"/>')
        out.append(f'<text class="label" x="{cx}" y="{top + plot_h + 20}" text-anchor="middle">{escape(model)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_tau_plot(taus: Mapping[str, Mapping[str, float]], svg_path, csv_path, title: str = "Kendall's tau") -> None:
    svg = render_tau_svg(taus, title)
    Path(svg_path).write_text(svg, "utf-8")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "topic", "tau"])
        for model, per_topic in taus.items():
            for topic in sorted(per_topic):
                writer.writerow([model, topic, repr(per_topic[topic])])


# -- full report -------------------------------------------------------------

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.replace(microsecond=0).isoformat()


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in text)


def _provenance(docs: Sequence[dict]) -> str:
    lines = ["## Provenance", "", f"- generated: {_timestamp()}"]
    for doc in docs:
        p = doc["provenance"]
        cm = doc["collection"]
        fails = doc.get("failures", {})
        n_failed = sum(len(v) for v in fails.values())
        ps = doc.get("parse_stats", {})
        lines.append(
            f"- **{cm['model']} / {cm['collection']}**: config `{p['config_hash']}`, "
            f"prompt templates `{p['template_version']}`, backend `{json.dumps(p['backend'], sort_keys=True)}`, "
            f"window {p['window']}, schedule {p['schedule']}; "
            f"topics {cm['n_topics']}, failed topics {n_failed}; "
            f"pairs evaluated {cm['pairs_evaluated']}/{cm['pairs_raw']}; "
            f"repaired responses {ps.get('repaired', 0)}, strict-parse fallbacks {ps.get('strict_failures', 0)}, "
            f"unparseable {ps.get('unparseable', 0)}"
        )
        for stage, topics in sorted(fails.items()):
            for tid, reason in sorted(topics.items()):
                lines.append(f"  - excluded {stage} topic `{tid}`: {reason}")
    return "\n".join(lines) + "\n"


def write_report(metrics_docs: Sequence[dict], out_dir, title: str = "Recency-bias audit") -> Path:
    """Render report.md, table files and tau plots from one or more metrics.json documents."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ms = [CollectionMetrics.from_dict(d["collection"]) for d in metrics_docs]
    emit_tables(ms, out_dir)
    plots = []
    for collection in dict.fromkeys(m.collection for m in ms):
        taus = {}
        for d in metrics_docs:
            if d["collection"]["collection"] != collection:
                continue
            per_topic = {tid: t["tau"] for tid, t in d["topics"].items() if t.get("tau") is not None}
            if per_topic:
                taus[d["collection"]["model"]] = per_topic
        if taus:
            stem = f"tau_{_slug(collection)}"
            emit_tau_plot(taus, out_dir / f"{stem}.svg", out_dir / f"{stem}.csv", f"Kendall's tau ({collection})")
            plots.append((collection, stem))
    body = [f"# {title}", "", _provenance(metrics_docs), "## Tables", "", render_markdown(ms)]
    if plots:
        body += ["## Kendall's tau distributions", ""]
        body += [f"- {c}: ![tau {c}]({stem}.svg) (raw points: `{stem}.csv`)" for c, stem in plots]
    path = out_dir / "report.md"
    path.write_text("\n".join(body).rstrip("\n") + "\n", "utf-8")
    return path
