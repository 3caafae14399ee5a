"""Report rendering: a seen / unseen / overall text table and a JSON document."""
import json
from pathlib import Path

from zs3.metrics import EvalReport

_GROUPS = (("seen", "Seen"), ("unseen", "Unseen"), ("overall", "Overall"))
_COL = 6


def _pct(value):
    return "--".rjust(_COL) if value is None else f"{100.0 * value:{_COL}.1f}"


def render_text(report, title="ZS3"):
    """One header pair and one row per report, metrics in percent with one decimal.

    ``report`` may also be a list of ``(title, EvalReport)`` rows.
    """
    rows = report if isinstance(report, (list, tuple)) else [(title, report)]
    width = max(12, *(len(t) for t, _ in rows))
    block = 3 * _COL + 2
    head1 = " " * width + " |" + "|".join(f" {name:^{block}} " for _, name in _GROUPS) + "|"
    sub = " ".join(m.rjust(_COL) for m in ("PA", "MA", "mIoU"))
    head2 = "Method".ljust(width) + " |" + "|".join(f" {sub} " for _ in _GROUPS) + "| " + "hIoU".rjust(_COL)
    lines = [head1, head2, "-" * len(head2)]
    for name, rep in rows:
        cells = []
        for key, _ in _GROUPS:
            g = rep.groups.get(key)
            vals = (None, None, None) if g is None else (g.pa, g.ma, g.miou)
            cells.append(" " + " ".join(_pct(v) for v in vals) + " ")
        lines.append(name.ljust(width) + " |" + "|".join(cells) + "| " + _pct(rep.hiou))
    return "\n".join(lines) + "\n"


def report_document(report, config=None, seeds=None, extra=None):
    doc = report.to_dict()
    doc["config"] = config
    doc["seeds"] = seeds
    if extra:
        doc.update(extra)
    return doc


def emit_report(report, path, fmt="text", title="ZS3", config=None, seeds=None):
    """Write ``report`` as a text table or as the JSON document."""
    path = Path(path)
    if fmt == "text":
        path.write_text(render_text(report, title), encoding="utf-8")
    elif fmt == "json":
        doc = report_document(report, config, seeds)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def load_report(path):
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
