"""Subject-grouped splits, confusion-matrix metrics and paired tests."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from somnwave.exceptions import (
    EmptyInput,
    KTooLarge,
    TooFewSubjects,
    UnknownLabel,
)
from somnwave.stages import SleepStage


@dataclass(frozen=True)
class SplitPlan:
    train: tuple
    val: tuple
    test: tuple
    ratios: tuple = (0.70, 0.15, 0.15)
    seed: int = 0

    def check_disjoint(self):
        a, b, c = set(self.train), set(self.val), set(self.test)
        if a & b or a & c or b & c:
            raise AssertionError("split partitions overlap")
        return True


def _sorted_unique(subjects):
    return sorted(set(subjects), key=str)


def subject_split(subjects, ratios=(0.70, 0.15, 0.15), seed=0):
    """Shuffle subjects by seed; test and validation get ``round(0.15 N)`` each."""
    uniq = _sorted_unique(subjects)
    n = len(uniq)
    if n < 3:
        raise TooFewSubjects(f"need at least 3 subjects, got {n}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [uniq[i] for i in order]
    n_test = max(1, int(round(ratios[2] * n)))
    n_val = max(1, int(round(ratios[1] * n)))
    test = tuple(shuffled[:n_test])
    val = tuple(shuffled[n_test:n_test + n_val])
    train = tuple(shuffled[n_test + n_val:])
    return SplitPlan(train, val, test, tuple(ratios), seed)


def kfold_plan(subjects, k=5, seed=0):
    """Partition shuffled subjects into ``k`` near-equal test groups.

    Returns a list of ``(train_ids, test_ids)`` tuples; the first
    ``N mod k`` groups get one extra subject.
    """
    uniq = _sorted_unique(subjects)
    n = len(uniq)
    if k < 2 or k > n:
        raise KTooLarge(f"k={k} needs 2 <= k <= {n} subjects")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [uniq[i] for i in order]
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    folds = []
    start = 0
    for size in sizes:
        test = tuple(shuffled[start:start + size])
        train = tuple(s for s in shuffled if s not in set(test))
        folds.append((train, test))
        start += size
    return folds


def rows_for(groups, ids):
    ids = set(ids)
    return np.array([g in ids for g in groups], dtype=bool)


def assert_no_leakage(groups, train_mask, test_mask):
    """Raise if any subject contributes rows to both partitions."""
    groups = np.asarray(groups, dtype=object)
    shared = set(groups[np.asarray(train_mask)]) & set(groups[np.asarray(test_mask)])
    if shared:
        raise AssertionError(f"subjects in both train and test: {sorted(shared, key=str)}")


# --- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    classes: tuple
    counts: np.ndarray     # rows = true, columns = predicted

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self, path):
        names = [_class_name(c) for c in self.classes]
        lines = ["true\\pred," + ",".join(names)]
        for name, row in zip(names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")
        return path


def _class_name(c):
    if isinstance(c, (int, np.integer)) and 0 <= int(c) <= 5:
        return SleepStage(int(c)).label
    return str(c)


def confusion_matrix(y_true, y_pred, classes):
    y_true = list(y_true)
    y_pred = list(y_pred)
    if not y_true or len(y_true) != len(y_pred):
        raise EmptyInput("need equal-length, non-empty label sequences")
    classes = tuple(classes)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        try:
            counts[pos[t], pos[p]] += 1
        except KeyError as exc:
            raise UnknownLabel(f"label {exc.args[0]!r} not in {classes}") from None
    return ConfusionMatrix(classes, counts)


@dataclass
class MetricsReport:
    accuracy: float
    precision: dict
    recall: dict
    f1: dict
    macro_f1: float
    kappa: float
    confusion: ConfusionMatrix
    fold: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "fold": self.fold,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "kappa": self.kappa,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {
                "classes": [_class_name(c) for c in self.confusion.classes],
                "counts": self.confusion.counts.tolist(),
            },
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d):
        names = d["confusion"]["classes"]
        cm = ConfusionMatrix(tuple(names), np.array(d["confusion"]["counts"], dtype=np.int64))
        return cls(d["accuracy"], d["precision"], d["recall"], d["f1"], d["macro_f1"],
                   d["kappa"], cm, d.get("fold", ""), d.get("extra", {}))


def compute_metrics(cm, fold=""):
    """Accuracy, per-class P/R/F1, macro-F1 over classes present in truth, kappa."""
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyInput("confusion matrix is empty")
    diag = np.diag(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    precision, recall, f1 = {}, {}, {}
    present_f1 = []
    for i, c in enumerate(cm.classes):
        name = _class_name(c)
        p = diag[i] / cols[i] if cols[i] > 0 else 0.0
        r = diag[i] / rows[i] if rows[i] > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        precision[name], recall[name], f1[name] = float(p), float(r), float(f)
        if rows[i] > 0:
            present_f1.append(f)
    p_o = diag.sum() / total
    # integer form of (p_o - p_e) / (1 - p_e) avoids rounding in the ratio
    icounts = cm.counts.astype(np.int64)
    n = int(icounts.sum())
    chance = int(np.dot(icounts.sum(axis=1), icounts.sum(axis=0)))
    agree = int(np.trace(icounts))
    kappa = 1.0 if chance == n * n else (n * agree - chance) / (n * n - chance)
    return MetricsReport(
        accuracy=float(p_o),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(np.mean(present_f1)),
        kappa=float(kappa),
        confusion=cm,
        fold=fold,
    )


def evaluate(y_true, y_pred, classes, fold=""):
    return compute_metrics(confusion_matrix(y_true, y_pred, classes), fold)


# --- significance tests -----------------------------------------------------

@dataclass
class SignificanceReport:
    test: str
    statistic: float
    p_value: float
    n: int
    summary: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def verdict(self, alpha=0.05):
        return "significant" if self.p_value < alpha else "not significant"


def _summary(a, b):
    return {"mean_a": float(np.mean(a)), "mean_b": float(np.mean(b)),
            "mean_diff": float(np.mean(np.asarray(a) - np.asarray(b)))}


def student_t_sf2(t, df):
    """Two-sided tail ``P(|T| >= |t|)`` via the regularized incomplete beta."""
    x = df / (df + t * t)
    return float(special.betainc(df / 2.0, 0.5, x))


# smallest positive double; reported when the differences are constant and non-zero
P_FLOOR = 5e-324


def paired_t_test(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired t-test needs two equal-length samples with n >= 2")
    d = a - b
    n = d.size
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        t = 0.0 if mean == 0 else math.copysign(math.inf, mean)
        p = 1.0 if mean == 0 else P_FLOOR
        return SignificanceReport("paired_t", t, p, n, {**_summary(a, b), "df": n - 1,
                                                          "zero_variance": True})
    t = mean / (sd / math.sqrt(n))
    p = min(1.0, max(0.0, student_t_sf2(t, n - 1)))
    return SignificanceReport("paired_t", float(t), p, n, {**_summary(a, b), "df": n - 1})


def signed_ranks(d):
    """Average ranks of ``|d|`` (ties share the mean rank)."""
    absd = np.abs(d)
    order = np.argsort(absd, kind="mergesort")
    ranks = np.empty(d.size)
    sorted_abs = absd[order]
    i = 0
    while i < d.size:
        j = i
        while j + 1 < d.size and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def _exact_signed_rank_p(ranks, w):
    """``P(min(W+, W-) <= w)`` under random signs, via a count DP on doubled ranks."""
    doubled = np.round(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r] if r > 0 else counts
        counts = counts + shifted
    w2 = 2 * w
    s = np.arange(total + 1)
    hit = np.minimum(s, total - s) <= w2 + 1e-9
    return float(counts[hit].sum() / counts.sum())


def wilcoxon_signed_rank(a, b, exact_max_n=20):
    """Two-sided Wilcoxon signed-rank test on paired samples.

    Zero differences are dropped. Exact sign-enumeration p-value for
    ``n <= exact_max_n``, otherwise the tie-corrected normal approximation.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need two equal-length 1-D samples")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return SignificanceReport("wilcoxon", 0.0, 1.0, 0, {**_summary(a, b),
                                                            "all_zero_differences": True})
    ranks = signed_ranks(d)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= exact_max_n:
        p = _exact_signed_rank_p(ranks, w)
        method = "exact"
    else:
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
        z = (w - n * (n + 1) / 4.0) / math.sqrt(var) if var > 0 else 0.0
        p = math.erfc(abs(z) / math.sqrt(2))
        method = "normal"
    return SignificanceReport("wilcoxon", w, min(1.0, p), n,
                              {**_summary(a, b), "w_plus": w_plus, "w_minus": w_minus,
                               "method": method})


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path
