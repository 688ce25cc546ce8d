"""Measurement math: splits, confusion-matrix metrics, detection rate,
response times and the one-sample t-test."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    pass


# --- splits ---------------------------------------------------------------------------


def _by_class(labels):
    groups = defaultdict(list)
    for i, lab in enumerate(labels):
        groups[lab].append(i)
    # sorted so the result doesn't depend on the order classes first appear
    return {k: groups[k] for k in sorted(groups, key=str)}


def split_dataset(labels, seed: int, val_frac: float = 0.2, test_frac: float = 0.2) -> dict:
    """Stratified 60/20/20 split of item indices.

    Each class is shuffled with its own stream of the seeded generator; test and
    validation take ``round(frac * n)`` items, training keeps the rest.
    """
    rng = np.random.default_rng(seed)
    out = {"train": [], "val": [], "test": []}
    for lab, idx in _by_class(labels).items():
        if len(idx) < 5:
            raise EvaluationError(f"class {lab!r} has {len(idx)} items; at least 5 are needed")
        idx = [idx[i] for i in rng.permutation(len(idx))]
        n_test = int(round(test_frac * len(idx)))
        n_val = int(round(val_frac * len(idx)))
        out["test"] += idx[:n_test]
        out["val"] += idx[n_test:n_test + n_val]
        out["train"] += idx[n_test + n_val:]
    return {k: sorted(v) for k, v in out.items()}


def kfold(labels, folds: int = 10, seed: int = 0) -> list[int]:
    """Stratified fold id per item.

    Items of each class are shuffled and dealt round-robin; the dealing position
    carries over between classes so fold sizes differ by at most one overall.
    """
    groups = _by_class(labels)
    for lab, idx in groups.items():
        if folds > len(idx):
            raise EvaluationError(f"{folds} folds but class {lab!r} has only {len(idx)} items")
    if folds < 2:
        raise EvaluationError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    assign = [0] * len(labels)
    pos = 0
    for idx in groups.values():
        for j in rng.permutation(len(idx)):
            assign[idx[j]] = pos % folds
            pos += 1
    return assign


# --- confusion matrix ------------------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    """Rows are truth, columns are predictions."""

    counts: np.ndarray

    @classmethod
    def from_pairs(cls, truth, pred, n: int) -> "ConfusionMatrix":
        cm = np.zeros((n, n), dtype=np.int64)
        np.add.at(cm, (np.asarray(truth, dtype=int), np.asarray(pred, dtype=int)), 1)
        return cls(cm)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise EvaluationError("confusion matrix must be square")
        if (self.counts < 0).any():
            raise EvaluationError("confusion counts must be non-negative")

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def tp(self):
        return np.diag(self.counts)

    def fp(self):
        return self.counts.sum(axis=0) - self.tp()

    def fn(self):
        return self.counts.sum(axis=1) - self.tp()

    def tn(self):
        return self.total - self.tp() - self.fp() - self.fn()


@dataclass
class Metrics:
    accuracy: float
    precision: list
    recall: list
    f_score: list
    macro_precision: float
    macro_recall: float
    macro_f: float
    # (class index, metric name) pairs where a 0/0 was reported as 0
    undefined: list = field(default_factory=list)


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total < 1:
        raise EvaluationError("confusion matrix is empty")
    tp, fp, fn = cm.tp(), cm.fp(), cm.fn()
    prs, res, fs, flagged = [], [], [], []
    for c in range(cm.n):
        pr, bad_pr = _ratio(int(tp[c]), int(tp[c] + fp[c]))
        re, bad_re = _ratio(int(tp[c]), int(tp[c] + fn[c]))
        if bad_pr:
            flagged.append((c, "precision"))
        if bad_re:
            flagged.append((c, "recall"))
        prs.append(pr)
        res.append(re)
        fs.append(f_score(pr, re))
    return Metrics(
        accuracy=float(np.trace(cm.counts)) / cm.total,
        precision=prs,
        recall=res,
        f_score=fs,
        macro_precision=float(np.mean(prs)),
        macro_recall=float(np.mean(res)),
        macro_f=float(np.mean(fs)),
        undefined=flagged,
    )


def detection_rate(hits: int, misses: int) -> float:
    if hits < 0 or misses < 0:
        raise EvaluationError("hits and misses must be non-negative")
    if hits + misses < 1:
        raise EvaluationError("detection rate needs at least one trial")
    return hits / (hits + misses)


def response_stats(events, n: int | None = None) -> dict:
    """Mean ``response_ms`` per ``(context, action)``.

    With ``n`` given the total is divided by ``n`` (the protocol's trials per
    control) instead of the number of events observed.
    """
    if n is not None and n < 1:
        raise EvaluationError("N must be >= 1")
    totals = defaultdict(float)
    counts = defaultdict(int)
    for ev in events:
        key = (ev.context, ev.action)
        totals[key] += ev.response_ms
        counts[key] += 1
    return {k: totals[k] / (n if n is not None else counts[k]) for k in totals}


@dataclass
class ActionStats:
    hits: int = 0
    misses: int = 0
    response_ms: list = field(default_factory=list)

    @property
    def detection_rate(self) -> float:
        return detection_rate(self.hits, self.misses)

    @property
    def avg_response_ms(self) -> float:
        return sum(self.response_ms) / len(self.response_ms) if self.response_ms else 0.0


@dataclass
class RunStats:
    """Per-action trial tallies keyed by ``(context, action)``."""

    actions: dict = field(default_factory=dict)

    def record(self, context: str, action: str, hit: bool, response_ms: float | None = None):
        st = self.actions.setdefault((context, action), ActionStats())
        if hit:
            st.hits += 1
            if response_ms is not None:
                st.response_ms.append(response_ms)
        else:
            st.misses += 1

    def rows(self):
        for (ctx, action), st in self.actions.items():
            yield {
                "ctx": ctx, "action": action, "hits": st.hits, "misses": st.misses,
                "N": st.hits + st.misses,
                "detection_rate": st.detection_rate if st.hits + st.misses else None,
                "avg_response_ms": st.avg_response_ms,
            }


# --- Student t ------------------------------------------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise EvaluationError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise EvaluationError("x must lie in [0, 1]")
    if x in (0.0, 1.0):
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, df: float) -> float:
    if df <= 0:
        raise EvaluationError("degrees of freedom must be positive")
    if t * t < df:
        c = _central(t, df)
        return 0.5 + c if t > 0 else 0.5 - c
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def _central(t: float, df: float) -> float:
    # P(0 < T < |t|); avoids the 1 - I_x cancellation when x = df/(df+t^2) is near 1
    return 0.5 * betainc(0.5, df / 2.0, t * t / (df + t * t))


def t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)``, computed directly so tiny p-values keep precision."""
    if t * t < df:
        c = _central(t, df)
        return 0.5 - c if t > 0 else 0.5 + c
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return tail if t > 0 else 1.0 - tail


def t_ppf(p: float, df: float) -> float:
    """Quantile of Student's t by bisection on the CDF."""
    if not 0.0 < p < 1.0:
        raise EvaluationError("p must lie in (0, 1)")
    lo, hi = -1.0, 1.0
    while t_cdf(lo, df) > p:
        lo *= 2
    while t_cdf(hi, df) < p:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return (lo + hi) / 2


@dataclass
class TTestResult:
    k: int
    mean: float
    sd: float
    mu: float
    se: float
    t: float
    df: int
    p_one: float
    p_two: float
    ci95: tuple

    @property
    def mean_difference(self) -> float:
        return self.mean - self.mu


def t_test_from_stats(mean: float, sd: float, k: int, mu: float, level: float = 0.95) -> TTestResult:
    if k < 2:
        raise EvaluationError("t-test needs at least two samples")
    if not sd > 0:
        raise EvaluationError("standard deviation is zero; t statistic undefined")
    se = sd / math.sqrt(k)
    t = (mean - mu) / se
    df = k - 1
    p_one = t_sf(abs(t), df)
    crit = t_ppf(0.5 + level / 2, df)
    diff = mean - mu
    return TTestResult(k=k, mean=mean, sd=sd, mu=mu, se=se, t=t, df=df,
                       p_one=p_one, p_two=min(1.0, 2 * p_one),
                       ci95=(diff - crit * se, diff + crit * se))


def t_test(samples, mu: float) -> TTestResult:
    """One-sample t-test with the k-1 sample standard deviation."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise EvaluationError("t-test needs at least two samples")
    return t_test_from_stats(float(x.mean()), float(x.std(ddof=1)), int(x.size), mu)


# --- reports --------------------------------------------------------------------------------


def metrics_csv(m: Metrics, class_names) -> str:
    lines = ["class,precision,recall,f_score"]
    for name, pr, re, f in zip(class_names, m.precision, m.recall, m.f_score):
        lines.append(f"{name},{pr:.6f},{re:.6f},{f:.6f}")
    lines.append(f"macro,{m.macro_precision:.6f},{m.macro_recall:.6f},{m.macro_f:.6f}")
    lines.append(f"accuracy,{m.accuracy:.6f},,")
    return "\n".join(lines) + "\n"


def format_metrics_table(m: Metrics, cm: ConfusionMatrix, class_names) -> str:
    width = max(8, *(len(str(c)) for c in class_names))
    out = [f"Testing accuracy (%): {100 * m.accuracy:.2f}",
           f"Precision (%): {100 * m.macro_precision:.2f}  "
           f"Recall (%): {100 * m.macro_recall:.2f}  F-score (%): {100 * m.macro_f:.2f}",
           "",
           "Confusion matrix (rows = truth, cols = predicted)",
           " " * width + "".join(f"{str(c)[:width]:>{width + 1}}" for c in class_names)]
    for name, row in zip(class_names, cm.counts):
        out.append(f"{str(name):<{width}}" + "".join(f"{v:>{width + 1}}" for v in row))
    return "\n".join(out) + "\n"


def format_ttest_table(r: TTestResult) -> str:
    return (
        "One-sample statistics\n"
        f"N\tMean\tStd. deviation\tStd. error mean\n"
        f"{r.k}\t{r.mean:.4f}\t{r.sd:.4f}\t{r.se:.4f}\n\n"
        f"One-sample test (test value = {r.mu:g})\n"
        "t\tdf\tOne-sided p\tTwo-sided p\tMean difference\tLower\tUpper\n"
        f"{r.t:.3f}\t{r.df}\t{_fmt_p(r.p_one)}\t{_fmt_p(r.p_two)}\t"
        f"{r.mean_difference:.4f}\t{r.ci95[0]:.4f}\t{r.ci95[1]:.4f}\n"
    )


def _fmt_p(p: float) -> str:
    return "<0.001" if p < 0.001 else f"{p:.3f}"


def format_detection_table(stats: RunStats) -> str:
    out = ["Action\tHits\tMisses\tDetection rate (%)\tAverage response time (ms)"]
    for row in stats.rows():
        rate = "" if row["detection_rate"] is None else f"{100 * row['detection_rate']:.0f}"
        out.append(f"{row['action']}\t{row['hits']}\t{row['misses']}\t{rate}\t"
                   f"{row['avg_response_ms']:.2f}")
    return "\n".join(out) + "\n"
