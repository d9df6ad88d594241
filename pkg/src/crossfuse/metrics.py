"""Classification metrics computed from integer confusion counts."""
from dataclasses import asdict, dataclass, field

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes):
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return conf


def binary_counts(y_true, y_pred):
    """Per-class (tp, fp, fn, tn) for multi-label 0/1 matrices."""
    t = np.asarray(y_true).astype(bool)
    p = np.asarray(y_pred).astype(bool)
    tp = (t & p).sum(0)
    fp = (~t & p).sum(0)
    fn = (t & ~p).sum(0)
    tn = (~t & ~p).sum(0)
    return np.stack([tp, fp, fn, tn], axis=1).astype(np.int64)


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


def f1_score(precision, recall):
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


@dataclass
class MetricsReport:
    task: str
    n_samples: int
    accuracy: float
    per_class_accuracy: list
    precision: list
    recall: list
    f1: list
    confusion: list
    class_names: list = field(default_factory=list)

    @property
    def macro_f1(self):
        return float(np.mean(self.f1)) if self.f1 else 0.0

    def to_dict(self):
        d = asdict(self)
        d["macro_f1"] = self.macro_f1
        return d

    def lines(self):
        names = self.class_names or [str(i) for i in range(len(self.f1))]
        out = [f"task={self.task} n={self.n_samples} accuracy={self.accuracy:.4f} "
               f"macro_f1={self.macro_f1:.4f}"]
        for i, name in enumerate(names):
            out.append(f"  {name:<10} acc={self.per_class_accuracy[i]:.4f} "
                       f"P={self.precision[i]:.4f} R={self.recall[i]:.4f} F1={self.f1[i]:.4f}")
        return out


def single_label_report(y_true, y_pred, n_classes, class_names=None):
    """Overall accuracy is trace/total; per-class accuracy is the class
    recall (correct / occurrences), as in per-emotion accuracy tables."""
    conf = confusion_matrix(y_true, y_pred, n_classes)
    total = int(conf.sum())
    prec, rec, f1 = [], [], []
    for c in range(n_classes):
        p = _ratio(conf[c, c], conf[:, c].sum())
        r = _ratio(conf[c, c], conf[c, :].sum())
        prec.append(p)
        rec.append(r)
        f1.append(f1_score(p, r))
    return MetricsReport("single_label", total, _ratio(np.trace(conf), total), list(rec),
                         prec, rec, f1, conf.tolist(), list(class_names or []))


def multi_label_report(y_true, y_pred, class_names=None):
    """Per-class binary accuracy and F1 from (tp, fp, fn, tn) counts.

    ``accuracy`` is the mean of the per-class binary accuracies.
    """
    counts = binary_counts(y_true, y_pred)
    acc, prec, rec, f1 = [], [], [], []
    for tp, fp, fn, tn in counts:
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        acc.append(_ratio(tp + tn, tp + fp + fn + tn))
        prec.append(p)
        rec.append(r)
        f1.append(f1_score(p, r))
    n = int(np.asarray(y_true).shape[0])
    return MetricsReport("multi_label", n, float(np.mean(acc)), acc, prec, rec, f1,
                         counts.tolist(), list(class_names or []))
