#!/usr/bin/env python3
'''
Post-hoc explanations of p_backorder: exact Shapley values by subset
enumeration and a LIME-style proximity-weighted linear surrogate.
'''
import itertools
import math
import numpy as np
from scipy.special import comb
from sklearn.linear_model import LinearRegression
from typing import Any, Callable, Dict, List, Optional, Sequence
from .helper import NumericError, SchemaError

MAX_SHAPLEY_FEATURES = 12
EFFICIENCY_TOL = 1e-9

# (B, m) -> (B,) p_backorder
ModelFn = Callable[[np.ndarray], np.ndarray]


class Attribution:
    '''
    Signed per-feature contributions toward p_backorder.
    For Shapley `base_value` is the output on the background vector and
    `base_value + sum(values) == prediction`. For LIME `base_value` is the
    surrogate intercept and `score` its weighted R^2.
    '''

    def __init__(
        self,
        names: Sequence[str],
        values: Sequence[float],
        base_value: float,
        prediction: float,
        method: str,
        score: Optional[float] = None
    ) -> None:
        if len(names) != len(values):
            raise SchemaError('{} names for {} values'.format(
                len(names), len(values)))
        self.names = list(names)
        self.values = np.asarray(values, dtype=float)
        self.base_value = float(base_value)
        self.prediction = float(prediction)
        self.method = method
        self.score = score

    @property
    def intercept(self) -> float:
        return self.base_value

    def efficiency_gap(self) -> float:
        return abs(self.base_value + float(self.values.sum())
                   - self.prediction)

    def check_efficiency(self, tol: float = EFFICIENCY_TOL) -> None:
        gap = self.efficiency_gap()
        if not gap <= tol:
            raise NumericError('Attributions miss the prediction by {:.3g}'
                               .format(gap))

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'method': self.method,
            'base_value': self.base_value,
            'prediction': self.prediction,
            'features': [{'name': n, 'value': float(v)}
                         for n, v in zip(self.names, self.values)],
        }  # type: Dict[str, Any]
        if self.method == 'lime':
            data['intercept'] = self.base_value
            data['score'] = self.score
        return data

    def to_csv(self) -> str:
        return 'feature,value\n' + ''.join(
            '{},{!r}\n'.format(n, float(v))
            for n, v in zip(self.names, self.values))

    def bars(self, width: int = 30) -> str:
        ''' One signed text bar per feature, scaled to the largest |value|. '''
        top = float(np.max(np.abs(self.values))) if self.values.size else 0.0
        pad = max(len(n) for n in self.names) if self.names else 0
        lines = []
        for name, value in zip(self.names, self.values):
            n = int(round(width * abs(value) / top)) if top > 0 else 0
            bar = ('+' if value >= 0 else '-') * n
            lines.append('{:<{}} {:>+10.6f} {}'.format(name, pad, value, bar))
        return '\n'.join(lines)


def _evaluate(model_fn: ModelFn, batch: np.ndarray) -> np.ndarray:
    out = np.asarray(model_fn(batch), dtype=float).reshape(-1)
    if out.size != len(batch):
        raise SchemaError('Model returned {} values for {} rows'.format(
            out.size, len(batch)))
    if not np.all(np.isfinite(out)):
        raise NumericError('Model output is not finite')
    return out


def _feature_names(names: Optional[Sequence[str]], m: int) -> List[str]:
    if names is None:
        return ['x{}'.format(i + 1) for i in range(m)]
    if len(names) != m:
        raise SchemaError('{} names for {} features'.format(len(names), m))
    return list(names)


def shapley_exact(
    model_fn: ModelFn,
    instance: Sequence[float],
    background: Sequence[float],
    names: Optional[Sequence[str]] = None
) -> Attribution:
    '''
    Exact Shapley values over all 2^m coalitions. Features outside a
    coalition take their background value.
    '''
    x = np.asarray(instance, dtype=float).ravel()
    base = np.asarray(background, dtype=float).ravel()
    m = x.size
    if m == 0 or m > MAX_SHAPLEY_FEATURES:
        raise SchemaError('Exact Shapley supports 1..{} features, got {}'
                          .format(MAX_SHAPLEY_FEATURES, m))
    if base.shape != x.shape:
        raise SchemaError('Background has {} features, instance {}'.format(
            base.size, m))

    masks = np.array(list(itertools.product([0, 1], repeat=m)), dtype=bool)
    values = _evaluate(model_fn, np.where(masks, x, base))
    # row index of a mask in product() order
    powers = 1 << np.arange(m - 1, -1, -1)

    phi = np.zeros(m)
    others = np.array(list(itertools.product([0, 1], repeat=m - 1)),
                      dtype=int)
    for j in range(m):
        without = np.insert(others, j, 0, axis=1)
        with_j = np.insert(others, j, 1, axis=1)
        size = without.sum(axis=1)
        weight = 1.0 / (m * comb(m - 1, size))
        phi[j] = np.sum(weight * (values[with_j @ powers]
                                  - values[without @ powers]))
    return Attribution(_feature_names(names, m), phi, values[0], values[-1],
                       'shap_exact')


class LimeConfig:
    ''' `kernel_width` None means 0.75 * sqrt(m). '''

    def __init__(
        self,
        n_samples: int = 5000,
        kernel_width: Optional[float] = None,
        seed: int = 42
    ) -> None:
        if kernel_width is not None and not kernel_width > 0:
            raise SchemaError('Kernel width must be positive')
        self.n_samples = int(n_samples)
        self.kernel_width = kernel_width
        self.seed = int(seed)

    def width(self, m: int) -> float:
        if self.kernel_width is None:
            return 0.75 * math.sqrt(m)
        return float(self.kernel_width)

    def to_dict(self) -> Dict[str, Any]:
        return {'n_samples': self.n_samples,
                'kernel_width': self.kernel_width, 'seed': self.seed}

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'LimeConfig':
        try:
            return LimeConfig(**data)
        except TypeError as e:
            raise SchemaError('Bad LIME config: {}'.format(e))


def lime_explain(
    model_fn: ModelFn,
    instance: Sequence[float],
    config: Optional[LimeConfig] = None,
    names: Optional[Sequence[str]] = None
) -> Attribution:
    '''
    Sample z ~ N(instance, I), weight by exp(-|z - x|^2 / width^2) and fit
    an unpenalized weighted least-squares linear surrogate.
    '''
    config = config or LimeConfig()
    x = np.asarray(instance, dtype=float).ravel()
    m = x.size
    if config.n_samples < m + 1:
        raise SchemaError('LIME needs at least {} samples, got {}'.format(
            m + 1, config.n_samples))
    rng = np.random.default_rng(config.seed)
    z = x + rng.standard_normal((config.n_samples, m))
    target = _evaluate(model_fn, z)
    dist2 = np.sum((z - x) ** 2, axis=1)
    weights = np.exp(-dist2 / config.width(m) ** 2)

    design = np.sqrt(weights)[:, None] * np.hstack((np.ones((len(z), 1)), z))
    if np.linalg.matrix_rank(design) < m + 1:
        raise NumericError('Singular weighted design, sampling degenerate')
    surrogate = LinearRegression().fit(z, target, sample_weight=weights)
    score = float(surrogate.score(z, target, sample_weight=weights)) \
        if np.ptp(target) > 0 else 1.0
    prediction = float(_evaluate(model_fn, x[None, :])[0])
    return Attribution(_feature_names(names, m), surrogate.coef_,
                       float(surrogate.intercept_), prediction, 'lime',
                       score=score)
