"""Segmentation metrics split by seen / unseen / all classes."""
from dataclasses import dataclass, field

import numpy as np

from zs3.kernels import confusion_counts

GROUPS = ("seen", "unseen", "overall")


@dataclass
class GroupMetrics:
    pa: float
    ma: float
    miou: float
    classes: list


@dataclass
class EvalReport:
    confusion: np.ndarray  # rows: ground truth, cols: prediction
    iou: list  # per class; None when the class is absent from GT and prediction
    accuracy: list  # per class; None when the class has no GT pixels
    groups: dict  # name -> GroupMetrics or None when the group has no classes
    hiou: float = None
    class_names: list = field(default_factory=list)

    def to_dict(self):
        return {
            "confusion": self.confusion.tolist(),
            "class_names": list(self.class_names),
            "iou": self.iou,
            "accuracy": self.accuracy,
            "groups": {k: (None if g is None else vars(g)) for k, g in self.groups.items()},
            "hiou": self.hiou,
        }

    @classmethod
    def from_dict(cls, d):
        groups = {k: (None if g is None else GroupMetrics(**g)) for k, g in d["groups"].items()}
        return cls(np.array(d["confusion"], dtype=np.int64), d["iou"], d["accuracy"], groups,
                   d["hiou"], d.get("class_names", []))


def harmonic_iou(seen, unseen):
    """Harmonic mean of two mIoUs; 0 when both are 0.

    Inputs in [0, 1] or in percent both work; the result has the same scale.
    """
    if seen + unseen == 0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


def _group(conf, classes):
    classes = [int(c) for c in classes]
    if not classes:
        return None
    diag = np.diag(conf)
    gt = conf.sum(axis=1)
    pred = conf.sum(axis=0)
    present_gt = [c for c in classes if gt[c] > 0]
    present_any = [c for c in classes if gt[c] + pred[c] > 0]
    total = sum(int(gt[c]) for c in classes)
    pa = float(sum(int(diag[c]) for c in classes) / total) if total else 0.0
    ma = float(np.mean([diag[c] / gt[c] for c in present_gt])) if present_gt else 0.0
    ious = [diag[c] / (gt[c] + pred[c] - diag[c]) for c in present_any]
    miou = float(np.mean(ious)) if ious else 0.0
    return GroupMetrics(pa, ma, miou, classes)


def report_from_confusion(conf, seen, unseen, class_names=()):
    conf = np.asarray(conf, dtype=np.int64)
    diag = np.diag(conf)
    gt = conf.sum(axis=1)
    pred = conf.sum(axis=0)
    k = conf.shape[0]
    iou = [None if gt[c] + pred[c] == 0 else float(diag[c] / (gt[c] + pred[c] - diag[c]))
           for c in range(k)]
    acc = [None if gt[c] == 0 else float(diag[c] / gt[c]) for c in range(k)]
    groups = {
        "seen": _group(conf, seen),
        "unseen": _group(conf, unseen),
        "overall": _group(conf, range(k)),
    }
    hiou = None
    if groups["seen"] is not None and groups["unseen"] is not None:
        hiou = harmonic_iou(groups["seen"].miou, groups["unseen"].miou)
    return EvalReport(conf, iou, acc, groups, hiou, list(class_names))


def evaluate(predictions, groundtruth, split, class_names=()):
    """Confusion matrix and PA / MA / mIoU for seen, unseen and all classes."""
    predictions = np.asarray(predictions)
    groundtruth = np.asarray(groundtruth)
    if predictions.shape != groundtruth.shape:
        raise ValueError(f"prediction shape {predictions.shape} != ground truth {groundtruth.shape}")
    if groundtruth.size == 0:
        raise ValueError("nothing to evaluate")
    k = split.n_classes
    for arr, what in ((predictions, "prediction"), (groundtruth, "ground truth")):
        if arr.min() < 0 or arr.max() >= k:
            raise ValueError(f"{what} labels outside [0, {k})")
    conf = confusion_counts(groundtruth, predictions, k)
    return report_from_confusion(conf, split.seen, split.unseen, class_names)
