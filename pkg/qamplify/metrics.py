#!/usr/bin/env python3
'''
Metrics for imbalanced binary classification. The positive class is 1
(backorder). Per-class rows are computed by treating each class in turn as
positive, the way imbalanced-learn's classification report does.
'''
import math
import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata
from sklearn.metrics import roc_curve
from sklearn.model_selection import StratifiedKFold
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple
from .helper import Log, DataError, SchemaError

RATES = ('precision', 'recall', 'f1', 'specificity', 'gmean', 'iba')

# fit(features, labels, seed) -> score function returning p_backorder
ScoreFn = Callable[[np.ndarray], np.ndarray]
ModelSpec = Callable[[np.ndarray, np.ndarray, int], ScoreFn]


class ConfusionMatrix:
    def __init__(self, tp: int, tn: int, fp: int, fn: int) -> None:
        counts = (tp, tn, fp, fn)
        if any(int(c) != c or c < 0 for c in counts):
            raise SchemaError('Confusion counts must be non-negative '
                              'integers, got {}'.format(counts))
        self.tp, self.tn, self.fp, self.fn = (int(c) for c in counts)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> 'ConfusionMatrix':
        ''' Same matrix with class 0 regarded as positive. '''
        return ConfusionMatrix(self.tn, self.tp, self.fn, self.fp)

    def to_dict(self) -> Dict[str, int]:
        return {'tp': self.tp, 'tn': self.tn, 'fp': self.fp, 'fn': self.fn}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ConfusionMatrix) \
            and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return 'ConfusionMatrix(tp={tp}, tn={tn}, fp={fp}, fn={fn})'.format(
            **self.to_dict())


def _binary(values: Any, name: str) -> np.ndarray:
    arr = np.asarray(values).ravel()
    if arr.size and not np.all(np.isin(arr, (0, 1))):
        raise SchemaError('{} must be binary 0/1'.format(name))
    return arr.astype(int)


def hard_labels(p_backorder: Any) -> np.ndarray:
    ''' argmax of the (p0, p1) pair; an exact tie goes to class 0. '''
    return (np.asarray(p_backorder, dtype=float) > 0.5).astype(int)


def confusion(labels: Any, predictions: Any) -> ConfusionMatrix:
    y = _binary(labels, 'labels')
    p = _binary(predictions, 'predictions')
    if y.size != p.size:
        raise SchemaError('{} labels but {} predictions'.format(y.size, p.size))
    return ConfusionMatrix(
        tp=int(np.sum((y == 1) & (p == 1))),
        tn=int(np.sum((y == 0) & (p == 0))),
        fp=int(np.sum((y == 0) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))))


class MetricsReport:
    '''
    `per_class[c]` holds the RATES with class c as positive, `macro` their
    unweighted mean. Zero denominators yield 0 and are listed in
    `zero_division` as "<metric>_<class>".
    '''

    def __init__(
        self,
        cm: ConfusionMatrix,
        per_class: Dict[int, Dict[str, float]],
        accuracy: float,
        iba_alpha: float,
        zero_division: List[str],
        roc_auc: Optional[float] = None
    ) -> None:
        self.confusion = cm
        self.per_class = per_class
        self.accuracy = accuracy
        self.iba_alpha = iba_alpha
        self.zero_division = zero_division
        self.roc_auc = roc_auc

    @property
    def macro(self) -> Dict[str, float]:
        return {k: (self.per_class[0][k] + self.per_class[1][k]) / 2
                for k in RATES}

    def percent(self) -> Dict[str, Any]:
        ''' Integer percentages as printed in result tables. '''
        return {
            'accuracy': round(100 * self.accuracy),
            'per_class': {str(c): {k: round(100 * v) for k, v in row.items()}
                          for c, row in self.per_class.items()},
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            'confusion': self.confusion.to_dict(),
            'per_class': {str(c): row for c, row in self.per_class.items()},
            'macro': self.macro,
            'accuracy': self.accuracy,
            'roc_auc': self.roc_auc,
            'iba_alpha': self.iba_alpha,
            'zero_division': self.zero_division,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'MetricsReport':
        ''' Rebuild and cross-check a serialized report. '''
        try:
            cm = ConfusionMatrix(**data['confusion'])
            report = classification_metrics(cm, data['iba_alpha'])
            report.roc_auc = data['roc_auc']
            stored = {int(c): row for c, row in data['per_class'].items()}
        except (KeyError, TypeError) as e:
            raise SchemaError('Malformed metrics report: {!r}'.format(e))
        for c in (0, 1):
            for k in RATES:
                if not math.isclose(stored[c][k], report.per_class[c][k],
                                    abs_tol=1e-12):
                    raise SchemaError('Report value {}[{}] inconsistent with '
                                      'its confusion matrix'.format(k, c))
        return report

    def __str__(self) -> str:
        lines = ['{:>6} {}'.format('class', ' '.join(
            '{:>11}'.format(k) for k in RATES))]
        rows = [(str(c), self.per_class[c]) for c in (0, 1)]
        rows.append(('macro', self.macro))
        for name, row in rows:
            lines.append('{:>6} {}'.format(name, ' '.join(
                '{:>11.4f}'.format(row[k]) for k in RATES)))
        lines.append('accuracy {:.4f}'.format(self.accuracy))
        if self.roc_auc is not None:
            lines.append('roc_auc  {:.4f}'.format(self.roc_auc))
        return '\n'.join(lines)


def _ratio(num: float, den: float, flag: str, flags: List[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _rates(
    cm: ConfusionMatrix,
    alpha: float,
    cls: int,
    flags: List[str]
) -> Dict[str, float]:
    precision = _ratio(cm.tp, cm.tp + cm.fp, 'precision_{}'.format(cls), flags)
    recall = _ratio(cm.tp, cm.tp + cm.fn, 'recall_{}'.format(cls), flags)
    specificity = _ratio(cm.tn, cm.tn + cm.fp,
                         'specificity_{}'.format(cls), flags)
    f1 = _ratio(2 * precision * recall, precision + recall,
                'f1_{}'.format(cls), flags)
    gmean = math.sqrt(recall * specificity)
    # dominance = recall - specificity
    iba = (1 + alpha * (recall - specificity)) * gmean ** 2
    return {'precision': precision, 'recall': recall, 'f1': f1,
            'specificity': specificity, 'gmean': gmean, 'iba': iba}


def classification_metrics(
    cm: ConfusionMatrix,
    alpha: float = 0.1
) -> MetricsReport:
    ''' Everything but AUC. Gmean uses rates: sqrt(recall * specificity). '''
    if cm.total == 0:
        raise DataError('Empty confusion matrix')
    flags = []  # type: List[str]
    per_class = {1: _rates(cm, alpha, 1, flags),
                 0: _rates(cm.swapped(), alpha, 0, flags)}
    accuracy = (cm.tp + cm.tn) / cm.total
    return MetricsReport(cm, per_class, accuracy, alpha, sorted(flags))


def _check_scores(labels: Any, scores: Any) -> Tuple[np.ndarray, np.ndarray]:
    y = _binary(labels, 'labels')
    s = np.asarray(scores, dtype=float).ravel()
    if y.size != s.size:
        raise SchemaError('{} labels but {} scores'.format(y.size, s.size))
    if np.count_nonzero(y == 1) == 0 or np.count_nonzero(y == 0) == 0:
        raise DataError('ROC needs both classes in the labels')
    return y, s


def roc_auc(labels: Any, scores: Any) -> float:
    '''
    Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly,
    ties count 1/2.
    '''
    y, s = _check_scores(labels, scores)
    ranks = rankdata(s)  # average ranks for ties
    n_pos = np.count_nonzero(y == 1)
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_points(labels: Any, scores: Any) -> List[Tuple[float, float]]:
    '''
    (fpr, tpr) for every distinct threshold "score >= t", descending,
    starting at (0, 0) and ending at (1, 1).
    '''
    y, s = _check_scores(labels, scores)
    fpr, tpr, _ = roc_curve(y, s, drop_intermediate=False)
    return [(float(a), float(b)) for a, b in zip(fpr, tpr)]


def roc_csv(points: Sequence[Tuple[float, float]]) -> str:
    return 'fpr,tpr\n' + ''.join('{!r},{!r}\n'.format(float(x), float(y))
                                 for x, y in points)


class StatTestResult:
    '''
    `t_statistic` and `p_value` are None when the fold differences have
    zero variance (`zero_variance` is then True).
    '''

    def __init__(
        self,
        scores_a: Sequence[float],
        scores_b: Sequence[float],
        t_statistic: Optional[float],
        p_value: Optional[float],
        zero_variance: bool = False
    ) -> None:
        self.scores_a = [float(x) for x in scores_a]
        self.scores_b = [float(x) for x in scores_b]
        self.t_statistic = t_statistic
        self.p_value = p_value
        self.degrees_of_freedom = len(self.scores_a) - 1
        self.zero_variance = zero_variance

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value is not None and self.p_value < alpha

    def to_dict(self) -> Dict[str, Any]:
        return {'t': self.t_statistic, 'p': self.p_value,
                'dof': self.degrees_of_freedom,
                'zero_variance': self.zero_variance,
                'fold_scores': {'a': self.scores_a, 'b': self.scores_b}}


def student_t_two_sided(t: float, dof: int) -> float:
    ''' P(|T| >= |t|) = I_{dof/(dof+t^2)}(dof/2, 1/2). '''
    return float(betainc(dof / 2, 0.5, dof / (dof + t * t)))


def paired_ttest(scores_a: Sequence[float], scores_b: Sequence[float]) \
        -> StatTestResult:
    ''' Paired t-test on per-fold scores, two-sided. '''
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.size != b.size:
        raise SchemaError('Fold counts differ: {} vs {}'.format(a.size, b.size))
    if a.size < 2:
        raise SchemaError('Need at least 2 folds, got {}'.format(a.size))
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd <= 1e-15 * max(1.0, float(np.max(np.abs(d)))):
        Log.warn('Paired differences have zero variance, no p-value')
        return StatTestResult(a, b, None, None, zero_variance=True)
    t = float(np.mean(d)) / (sd / math.sqrt(d.size))
    return StatTestResult(a, b, t, student_t_two_sided(t, d.size - 1))


def stratified_folds(labels: Any, folds: int, seed: int) -> np.ndarray:
    ''' Fold index per sample from a shuffled StratifiedKFold. '''
    y = _binary(labels, 'labels')
    assign = np.empty(y.size, dtype=int)
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    try:
        for k, (_, test_idx) in enumerate(splitter.split(np.zeros(y.size), y)):
            assign[test_idx] = k
    except ValueError as e:
        raise DataError('Cannot split into {} folds: {}'.format(folds, e))
    return assign


def crossval_compare(
    model_a: ModelSpec,
    model_b: ModelSpec,
    features: Any,
    labels: Any,
    folds: int = 10,
    seed: int = 42
) -> Tuple[Dict[str, StatTestResult], np.ndarray]:
    '''
    Train both models on identical shuffled stratified folds and run a
    paired t-test per metric. Returns ({'accuracy', 'roc_auc'}, fold index
    per sample).
    '''
    if folds < 2:
        raise SchemaError('Need at least 2 folds, got {}'.format(folds))
    x = np.asarray(features, dtype=float)
    y = _binary(labels, 'labels')
    assign = stratified_folds(y, folds, seed)
    scores = {}  # type: Dict[str, Tuple[List[float], List[float]]]
    for metric in ('accuracy', 'roc_auc'):
        scores[metric] = ([], [])
    for k in range(folds):
        test = assign == k
        for part, name in ((test, 'test'), (~test, 'train')):
            if np.unique(y[part]).size < 2:
                raise DataError('Fold {} {} split holds a single class'
                                .format(k + 1, name))
        Log.debug('fold {}: test rows {}'.format(
            k + 1, np.flatnonzero(test).tolist()))
        for i, spec in enumerate((model_a, model_b)):
            score_fn = spec(x[~test], y[~test], seed + k)
            p = np.asarray(score_fn(x[test]), dtype=float)
            scores['accuracy'][i].append(
                float(np.mean(hard_labels(p) == y[test])))
            scores['roc_auc'][i].append(roc_auc(y[test], p))
        Log.info('fold {}/{}: accuracy {:.4f} vs {:.4f}'.format(
            k + 1, folds, scores['accuracy'][0][-1],
            scores['accuracy'][1][-1]))
    return {m: paired_ttest(a, b) for m, (a, b) in scores.items()}, assign
