"""Independent reference computations used by the metrics and acceptance tests."""


def brute_force_metrics(labels, preds, k):
    """Per-class (precision, recall, f1, support) and accuracy by plain counting."""
    rows = []
    for c in range(k):
        tp = fp = fn = 0
        for y, p in zip(labels, preds):
            if y == c and p == c:
                tp += 1
            elif y != c and p == c:
                fp += 1
            elif y == c and p != c:
                fn += 1
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows.append((precision, recall, f1, tp + fn))
    correct = sum(1 for y, p in zip(labels, preds) if y == p)
    return rows, correct / len(labels)


def metrics_match(report, labels, preds, k):
    rows, acc = brute_force_metrics(labels, preds, k)
    got = list(zip(report.precision, report.recall, report.f1, report.support))
    return got == rows and report.accuracy == acc
