"""Confusion matrices, per-class precision/recall/F1, and report rendering."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from typing import Sequence

import numpy as np

FLAG_THRESHOLD_PP = 1.0
TABLE_COLUMNS = ("Precision", "Recall", "F1-Score", "Support")


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray
    class_names: list[str]

    @property
    def k(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def class_counts(self) -> list["ClassCounts"]:
        n = self.total
        tp = np.diag(self.counts)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        return [ClassCounts(int(tp[c]), int(fp[c]), int(fn[c]), int(n - tp[c] - fp[c] - fn[c])) for c in range(self.k)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + self.class_names)
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name] + [int(x) for x in row])
        return buf.getvalue()


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def confusion(labels: Sequence[int], preds: Sequence[int], class_names: Sequence[str] | int) -> ConfusionMatrix:
    names = [str(i) for i in range(class_names)] if isinstance(class_names, int) else list(class_names)
    k = len(names)
    labels = np.asarray(labels, dtype=np.int64)
    preds = np.asarray(preds, dtype=np.int64)
    if labels.shape != preds.shape:
        raise MetricsError(f"length mismatch: {labels.size} labels vs {preds.size} predictions")
    if labels.size == 0:
        raise MetricsError("cannot build a confusion matrix from zero samples")
    if labels.min() < 0 or preds.min() < 0 or labels.max() >= k or preds.max() >= k:
        raise MetricsError(f"class index out of range for K={k}")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts, names)


@dataclass
class MetricsReport:
    class_names: list[str]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    accuracy: float
    model: str = ""
    # per class: names of metrics whose denominator was zero (reported as 0)
    undefined: list[list[str]] = field(default_factory=list)

    def rows(self):
        return zip(self.class_names, self.precision, self.recall, self.f1, self.support)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "accuracy": self.accuracy,
            "classes": [
                {"class": c, "precision": p, "recall": r, "f1": f, "support": s, "undefined": u}
                for (c, p, r, f, s), u in zip(self.rows(), self.undefined or [[]] * len(self.class_names))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        rows = d["classes"]
        return cls(
            [r["class"] for r in rows],
            [float(r["precision"]) for r in rows],
            [float(r["recall"]) for r in rows],
            [float(r["f1"]) for r in rows],
            [int(r["support"]) for r in rows],
            float(d["accuracy"]),
            d.get("model", ""),
            [list(r.get("undefined", [])) for r in rows],
        )


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2 * precision * recall / s if s else 0.0


def per_class_metrics(cm: ConfusionMatrix, model: str = "") -> MetricsReport:
    if cm.total < 1:
        raise MetricsError("no samples")
    prec, rec, f1, support, undefined = [], [], [], [], []
    for c in cm.class_counts():
        p, p_undef = _ratio(c.tp, c.tp + c.fp)
        r, r_undef = _ratio(c.tp, c.tp + c.fn)
        flags = [n for n, bad in (("precision", p_undef), ("recall", r_undef)) if bad]
        if p + r == 0:
            flags.append("f1")
        prec.append(p)
        rec.append(r)
        f1.append(f1_score(p, r))
        support.append(c.tp + c.fn)
        undefined.append(flags)
    return MetricsReport(cm.class_names, prec, rec, f1, support, overall_accuracy(cm), model, undefined)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """Multiclass accuracy, trace / N."""
    if cm.total < 1:
        raise MetricsError("no samples")
    return float(np.trace(cm.counts)) / cm.total


def one_vs_rest_accuracy(cm: ConfusionMatrix) -> list[float]:
    """(TP + TN) / N for each class taken as the positive class."""
    n = cm.total
    return [(c.tp + c.tn) / n for c in cm.class_counts()]


def percent(x: float) -> int:
    """Fraction to an integer percentage, rounding halves up."""
    return int((Decimal(repr(float(x))) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


# --------------------------------------------------------------------------- rendering


def render_table(report: MetricsReport) -> str:
    name_w = max([len(report.model or "Model")] + [len(c) for c in report.class_names] + [len("Accuracy")]) + 2
    head = f"{report.model or 'Model':<{name_w}}" + "".join(f"{c:>11}" for c in TABLE_COLUMNS)
    lines = [head]
    for c, p, r, f, s in report.rows():
        lines.append(f"{c:<{name_w}}" + "".join(f"{v:>11}" for v in (f"{percent(p)}%", f"{percent(r)}%", f"{percent(f)}%", s)))
    lines.append(f"{'Accuracy':<{name_w}}" + f"{'':>11}" * 2 + f"{str(percent(report.accuracy)) + '%':>11}" + f"{sum(report.support):>11}")
    return "\n".join(lines) + "\n"


CSV_HEADER = ["class", "precision", "recall", "f1_score", "support", "undefined"]


def render_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", report.model])
    w.writerow(["accuracy", repr(report.accuracy)])
    w.writerow(CSV_HEADER)
    undefined = report.undefined or [[]] * len(report.class_names)
    for (c, p, r, f, s), u in zip(report.rows(), undefined):
        w.writerow([c, repr(p), repr(r), repr(f), s, ";".join(u)])
    return buf.getvalue()


def parse_csv(text: str) -> MetricsReport:
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 3 or rows[0][0] != "model" or rows[1][0] != "accuracy" or rows[2] != CSV_HEADER:
        raise MetricsError("not a metrics CSV")
    body = rows[3:]
    return MetricsReport(
        [r[0] for r in body],
        [float(r[1]) for r in body],
        [float(r[2]) for r in body],
        [float(r[3]) for r in body],
        [int(r[4]) for r in body],
        float(rows[1][1]),
        rows[0][1],
        [[x for x in r[5].split(";") if x] for r in body],
    )


def render_report(report: MetricsReport, fmt: str = "table") -> str:
    if fmt == "table":
        return render_table(report)
    if fmt == "csv":
        return render_csv(report)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


# --------------------------------------------------------------------------- prediction logs


def write_prediction_log(fh, paths, labels, preds, probs, class_names) -> None:
    for path, y, p, row in zip(paths, labels, preds, probs):
        fh.write(",".join([path, class_names[y], class_names[p]] + [f"{float(q):.9g}" for q in row]) + "\n")


def read_prediction_log(path: str, class_names: Sequence[str]):
    """Parse ``<path>,<true>,<pred>,<p_0..p_K-1>`` lines; labels may be names or indices."""
    index = {n: i for i, n in enumerate(class_names)}

    def label(tok: str) -> int:
        if tok in index:
            return index[tok]
        if tok.isdigit() and int(tok) < len(class_names):
            return int(tok)
        raise MetricsError(f"unknown label {tok!r}")

    paths, labels, preds, probs = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) < 3:
                continue
            paths.append(parts[0])
            labels.append(label(parts[1]))
            preds.append(label(parts[2]))
            probs.append([float(x) for x in parts[3:]])
    return paths, labels, preds, np.array(probs)


# --------------------------------------------------------------------------- published tables


def published_tables() -> dict:
    with resources.files("mucosanet").joinpath("published_tables.json").open(encoding="utf-8") as fh:
        return json.load(fh)


def published_report(model: str, tables: dict | None = None) -> MetricsReport:
    tables = tables or published_tables()
    rows = tables["models"][model]
    return MetricsReport(
        [r[0] for r in rows],
        [r[1] / 100 for r in rows],
        [r[2] / 100 for r in rows],
        [r[3] / 100 for r in rows],
        [r[4] for r in rows],
        tables["accuracy"][model] / 100,
        model,
        [[] for _ in rows],
    )


@dataclass(frozen=True)
class ConsistencyRow:
    model: str
    row: str
    metric: str
    recomputed: float
    published: float
    delta: float
    flagged: bool


def check_published_consistency(tables: dict | None = None, threshold: float = FLAG_THRESHOLD_PP) -> list[ConsistencyRow]:
    """Recompute F1 from published precision/recall and accuracy from recall x support.

    Values are in percentage points; rows off by more than ``threshold`` are flagged.
    """
    tables = tables or published_tables()
    out = []
    for model, rows in tables["models"].items():
        for name, p, r, f, _ in rows:
            f1 = f1_score(p, r)
            out.append(ConsistencyRow(model, name, "f1", f1, f, f1 - f, abs(f1 - f) > threshold))
        total = sum(row[4] for row in rows)
        acc = sum(row[2] * row[4] for row in rows) / total
        pub = tables["accuracy"][model]
        out.append(ConsistencyRow(model, "overall", "accuracy", acc, pub, acc - pub, abs(acc - pub) > threshold))
    return out
