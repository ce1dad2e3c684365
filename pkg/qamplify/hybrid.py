#!/usr/bin/env python3
'''
Usage: `HybridModel.build(seed)` creates the frozen dense stack, the 2-qubit
       quantum layer and the trainable softmax head. `train(model, X, y, cfg)`
       returns the fitted model and its `TrainHistory`. Inference with
       `forward()` (one sample) or `model.predict_proba()` (a batch).

       Column 0 of every probability pair is not-backorder, column 1 is
       backorder.
'''
import math
import numpy as np
from scipy.special import expit
from sklearn.model_selection import train_test_split
from typing import Any, Dict, List, Optional, Sequence, Tuple
from .helper import Log, DataError, NumericError, SchemaError
from .qsim import SELWeights, param_shift_jacobian, quantum_layer_batch

DENSE, RELU, QUANTUM, SOFTMAX = 'DENSE', 'RELU', 'QUANTUM', 'SOFTMAX'
PROB_CLIP = 1e-7

Params = Dict[str, np.ndarray]
Moments = Dict[str, Tuple[np.ndarray, np.ndarray]]


class LayerSpec:
    def __init__(
        self,
        kind: str,
        in_dim: int,
        out_dim: int,
        trainable: bool = False
    ) -> None:
        if kind not in (DENSE, RELU, QUANTUM, SOFTMAX):
            raise SchemaError('Unknown layer kind "{}"'.format(kind))
        if in_dim < 1 or out_dim < 1:
            raise SchemaError('Layer dimensions must be positive')
        self.kind = kind
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.trainable = bool(trainable)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'in_dim': self.in_dim,
                'out_dim': self.out_dim, 'trainable': self.trainable}

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'LayerSpec':
        try:
            return LayerSpec(data['kind'], data['in_dim'], data['out_dim'],
                             data.get('trainable', False))
        except KeyError as e:
            raise SchemaError('Layer spec missing key {}'.format(e))

    def __repr__(self) -> str:
        return '{}({}->{}{})'.format(self.kind, self.in_dim, self.out_dim,
                                     '' if self.trainable else ', frozen')


def default_architecture(
    n_features: int = 4,
    hidden: Sequence[int] = (512, 256),
    n_qubits: int = 2,
    n_classes: int = 2
) -> List[LayerSpec]:
    '''
    input -> DENSE (frozen) + RELU per hidden width -> DENSE 2^n (frozen)
    -> RELU -> QUANTUM -> DENSE n_classes (trainable) -> SOFTMAX
    '''
    layers = []  # type: List[LayerSpec]
    prev = n_features
    for width in list(hidden) + [2 ** n_qubits]:
        layers.append(LayerSpec(DENSE, prev, width, trainable=False))
        layers.append(LayerSpec(RELU, width, width))
        prev = width
    layers.append(LayerSpec(QUANTUM, prev, n_qubits, trainable=True))
    layers.append(LayerSpec(DENSE, n_qubits, n_classes, trainable=True))
    layers.append(LayerSpec(SOFTMAX, n_classes, n_classes))
    return layers


def check_architecture(layers: Sequence[LayerSpec]) -> int:
    ''' Validate the layer stack. Returns the index of the QUANTUM layer. '''
    for prev, cur in zip(layers, layers[1:]):
        if prev.out_dim != cur.in_dim:
            raise SchemaError('Layer mismatch: {} feeds {}'.format(prev, cur))
    kinds = [x.kind for x in layers]
    if kinds.count(QUANTUM) != 1 or kinds[-2:] != [DENSE, SOFTMAX] \
            or kinds[-3] != QUANTUM:
        raise SchemaError('Expected ... -> QUANTUM -> DENSE -> SOFTMAX, '
                          'got {}'.format(kinds))
    q_idx = kinds.index(QUANTUM)
    q = layers[q_idx]
    if q.in_dim != 2 ** q.out_dim:
        raise SchemaError('QUANTUM layer needs in_dim = 2^n_qubits, got {}'
                          .format(q))
    if any(x.trainable for x in layers[:q_idx]):
        raise SchemaError('Layers before the quantum layer must be frozen')
    return q_idx


def glorot_uniform(
    rng: np.random.Generator,
    fan_in: int,
    fan_out: int
) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class HybridModel:
    '''
    Dense kernels are stored (in_dim, out_dim): y = x @ kernel + bias.
    `dense_weights` maps the architecture index of every DENSE layer
    to its (kernel, bias).
    '''

    def __init__(
        self,
        layers: Sequence[LayerSpec],
        dense_weights: Dict[int, Tuple[np.ndarray, np.ndarray]],
        quantum_weights: SELWeights,
        seed: int,
        *, pre_rotation: bool = False,
        preprocessing_artifact_ref: Optional[str] = None
    ) -> None:
        self.layers = list(layers)
        self._q_idx = check_architecture(self.layers)
        q_layer = self.layers[self._q_idx]
        if quantum_weights.n_qubits != q_layer.out_dim:
            raise SchemaError('Quantum weights for {} qubits, layer has {}'
                              .format(quantum_weights.n_qubits,
                                      q_layer.out_dim))
        self.dense_weights = {}  # type: Dict[int, Tuple[np.ndarray, np.ndarray]]
        for i, layer in enumerate(self.layers):
            if layer.kind != DENSE:
                continue
            if i not in dense_weights:
                raise SchemaError('Missing weights for dense layer {}'
                                  .format(i))
            kernel = np.array(dense_weights[i][0], dtype=float)
            bias = np.array(dense_weights[i][1], dtype=float)
            if kernel.shape != (layer.in_dim, layer.out_dim) \
                    or bias.shape != (layer.out_dim,):
                raise SchemaError('Dense layer {} weights have shape {}/{}'
                                  .format(i, kernel.shape, bias.shape))
            kernel.flags.writeable = False
            bias.flags.writeable = False
            self.dense_weights[i] = (kernel, bias)
        self.quantum_weights = quantum_weights
        self.seed = int(seed)
        self.pre_rotation = pre_rotation
        self.preprocessing_artifact_ref = preprocessing_artifact_ref

    @staticmethod
    def build(
        seed: int,
        *, n_features: int = 4,
        hidden: Sequence[int] = (512, 256),
        n_qubits: int = 2,
        sel_layers: int = 1,
        pre_rotation: bool = False
    ) -> 'HybridModel':
        ''' Glorot-uniform kernels and zero biases, all drawn from `seed`. '''
        layers = default_architecture(n_features, hidden, n_qubits)
        rng = np.random.default_rng(seed)
        dense = {}
        for i, layer in enumerate(layers):
            if layer.kind == DENSE:
                dense[i] = (glorot_uniform(rng, layer.in_dim, layer.out_dim),
                            np.zeros(layer.out_dim))
        quantum = SELWeights.random(sel_layers, n_qubits, rng)
        return HybridModel(layers, dense, quantum, seed,
                           pre_rotation=pre_rotation)

    @property
    def n_features(self) -> int:
        return self.layers[0].in_dim

    @property
    def head_index(self) -> int:
        return self._q_idx + 1

    @property
    def head(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.dense_weights[self.head_index]

    def trainables(self) -> Params:
        kernel, bias = self.head
        return {'quantum': self.quantum_weights.angles.copy(),
                'kernel': kernel.copy(), 'bias': bias.copy()}

    def with_trainables(self, params: Params) -> 'HybridModel':
        ''' Copy of this model with new quantum angles and head weights. '''
        dense = dict(self.dense_weights)
        dense[self.head_index] = (params['kernel'], params['bias'])
        return HybridModel(self.layers, dense, SELWeights(params['quantum']),
                           self.seed, pre_rotation=self.pre_rotation,
                           preprocessing_artifact_ref=(
                               self.preprocessing_artifact_ref))

    def check_features(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise SchemaError('Model expects {} features per sample, got '
                              'shape {}'.format(self.n_features, x.shape))
        if not np.all(np.isfinite(x)):
            raise NumericError('Non-finite feature value')
        return x

    def quantum_inputs(self, features: np.ndarray) -> np.ndarray:
        '''
        Run the frozen prefix. All-zero rows (dead ReLU output) are
        replaced by the first basis vector so the embedding stays defined.
        '''
        x = self.check_features(features)
        for i, layer in enumerate(self.layers[:self._q_idx]):
            if layer.kind == DENSE:
                kernel, bias = self.dense_weights[i]
                x = x @ kernel + bias
            elif layer.kind == RELU:
                x = np.maximum(x, 0.0)
        dead = ~np.any(x != 0, axis=1)
        if np.any(dead):
            Log.warn('{} sample(s) reach the quantum layer as an all-zero '
                     'vector, substituting |0...0>'.format(int(dead.sum())))
            x = x.copy()
            x[dead] = 0.0
            x[dead, 0] = 1.0
        return x

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        ''' Shape (batch, 2). '''
        q_in = self.quantum_inputs(features)
        return _head_forward(self.trainables(), q_in, self.pre_rotation)[1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'architecture': [x.to_dict() for x in self.layers],
            'dense_weights': {
                str(i): {'kernel': k.tolist(), 'bias': b.tolist()}
                for i, (k, b) in sorted(self.dense_weights.items())},
            'quantum_weights': self.quantum_weights.to_dict(),
            'model_seed': self.seed,
            'pre_rotation': self.pre_rotation,
            'preprocessing_artifact_ref': self.preprocessing_artifact_ref,
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'HybridModel':
        try:
            layers = [LayerSpec.from_dict(x) for x in data['architecture']]
            dense = {int(k): (v['kernel'], v['bias'])
                     for k, v in data['dense_weights'].items()}
            quantum = SELWeights.from_dict(data['quantum_weights'])
            seed = data.get('model_seed', data.get('seed'))
        except (KeyError, TypeError, AttributeError) as e:
            raise SchemaError('Malformed model file: {!r}'.format(e))
        return HybridModel(layers, dense, quantum, seed or 0,
                           pre_rotation=bool(data.get('pre_rotation')),
                           preprocessing_artifact_ref=data.get(
                               'preprocessing_artifact_ref'))


def softmax(logits: Any) -> np.ndarray:
    ''' Shift-invariant softmax over the last axis. '''
    z = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError('Non-finite logits')
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: HybridModel, features: Sequence[float]) -> np.ndarray:
    ''' Class probabilities (not-backorder, backorder) for one sample. '''
    x = np.asarray(features, dtype=float).ravel()
    return model.predict_proba(x[None, :])[0]


def bce_loss(predicted: Any, labels: Any) -> float:
    '''
    Mean cross-entropy of the true class on (N, 2) probability pairs.
    Equal to binary cross-entropy since both columns sum to 1.
    '''
    p = np.asarray(predicted, dtype=float)
    y = np.asarray(labels).astype(int).ravel()
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] != y.size:
        raise SchemaError('Got {} predictions for {} labels'.format(
            p.shape, y.size))
    if y.size == 0:
        raise SchemaError('Empty batch')
    p_true = np.clip(p[np.arange(y.size), y], PROB_CLIP, 1 - PROB_CLIP)
    return float(-np.mean(np.log(p_true)))


def adam_step(
    params: Params,
    grads: Params,
    moments: Optional[Moments],
    t: int,
    lr: float,
    *, beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8
) -> Tuple[Params, Moments]:
    '''
    One bias-corrected Adam update. Inputs are not modified.
    Pass `moments=None` on the first step.
    '''
    if t < 1:
        raise SchemaError('Adam step index starts at 1, got {}'.format(t))
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_params = {}  # type: Params
    new_moments = {}  # type: Moments
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != np.shape(p):
            raise SchemaError('Gradient "{}" has shape {}, parameter {}'
                              .format(k, g.shape, np.shape(p)))
        m, v = moments[k] if moments else (np.zeros_like(g), np.zeros_like(g))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params[k] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_moments[k] = (m, v)
    return new_params, new_moments


class TrainConfig:
    def __init__(
        self,
        learning_rate: float = 0.01,
        batch_size: int = 5,
        max_epochs: int = 100,
        patience: int = 5,
        validation_fraction: float = 0.2,
        seed: int = 42
    ) -> None:
        if not learning_rate > 0:
            raise SchemaError('learning_rate must be > 0')
        if not 0 < validation_fraction < 1:
            raise SchemaError('validation_fraction must be in (0, 1)')
        if batch_size < 1 or max_epochs < 1 or patience < 1:
            raise SchemaError(
                'batch_size, max_epochs and patience must be >= 1')
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.max_epochs = int(max_epochs)
        self.patience = int(patience)
        self.validation_fraction = float(validation_fraction)
        self.seed = int(seed)

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'TrainConfig':
        try:
            return TrainConfig(**data)
        except TypeError as e:
            raise SchemaError('Bad train config: {}'.format(e))


class TrainHistory:
    COLUMNS = ('epoch', 'train_loss', 'val_loss', 'train_acc', 'val_acc')

    def __init__(self) -> None:
        self.train_loss = []  # type: List[float]
        self.val_loss = []  # type: List[float]
        self.train_acc = []  # type: List[float]
        self.val_acc = []  # type: List[float]
        self.stopped_epoch = 0
        self.best_epoch = 0
        self.best_val_loss = math.inf

    def append(
        self,
        train_loss: float,
        val_loss: float,
        train_acc: float,
        val_acc: float
    ) -> None:
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.train_acc.append(train_acc)
        self.val_acc.append(val_acc)
        self.stopped_epoch = len(self.train_loss)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_csv(self) -> str:
        ''' One row per epoch, floats in round-trip precision. '''
        lines = [','.join(self.COLUMNS)]
        for i in range(len(self)):
            lines.append(','.join([str(i + 1)] + [repr(x) for x in (
                self.train_loss[i], self.val_loss[i],
                self.train_acc[i], self.val_acc[i])]))
        return '\n'.join(lines) + '\n'

    def summary(self) -> Dict[str, Any]:
        return {'stopped_epoch': self.stopped_epoch,
                'best_epoch': self.best_epoch,
                'best_val_loss': self.best_val_loss}


class EarlyStopping:
    ''' Stop after `patience` epochs without a lower validation loss. '''

    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.best_state = None  # type: Any
        self.wait = 0

    def update(self, epoch: int, loss: float, state: Any = None) -> bool:
        ''' Record an epoch. Returns True if training should stop. '''
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.best_state = state
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def stratified_split(
    labels: np.ndarray,
    fraction: float,
    seed: int
) -> Tuple[np.ndarray, np.ndarray]:
    '''
    Return sorted (train_idx, val_idx) with exactly ceil(fraction * N)
    validation samples, stratified on the labels.
    '''
    y = np.asarray(labels).astype(int)
    n_val = math.ceil(fraction * y.size - 1e-9)
    train_idx, val_idx = train_test_split(
        np.arange(y.size), test_size=n_val, stratify=y, random_state=seed)
    return np.sort(train_idx), np.sort(val_idx)


def _head_forward(
    params: Params,
    q_in: np.ndarray,
    pre_rotation: bool
) -> Tuple[np.ndarray, np.ndarray]:
    ''' (expectations, probabilities) for a batch of quantum inputs. '''
    expect = quantum_layer_batch(q_in, SELWeights(params['quantum']),
                                 pre_rotation=pre_rotation)
    return expect, softmax(expect @ params['kernel'] + params['bias'])


def _loss_and_grads(
    params: Params,
    q_in: np.ndarray,
    labels: np.ndarray,
    pre_rotation: bool
) -> Tuple[float, Params]:
    expect, probs = _head_forward(params, q_in, pre_rotation)
    loss = bce_loss(probs, labels)
    onehot = np.eye(2)[labels]
    d_logits = (probs - onehot) / labels.size
    d_expect = d_logits @ params['kernel'].T
    jac = param_shift_jacobian(q_in, SELWeights(params['quantum']),
                               pre_rotation=pre_rotation)
    grads = {
        'quantum': np.einsum('bq,bqlkc->lkc', d_expect, jac),
        'kernel': expect.T @ d_logits,
        'bias': d_logits.sum(axis=0),
    }
    return loss, grads


def batch_gradients(
    model: HybridModel,
    features: np.ndarray,
    labels: Sequence[int]
) -> Tuple[float, Params]:
    '''
    Loss and gradient of every trainable parameter: parameter-shift through
    the quantum layer, chained with the analytic softmax/head gradient.
    '''
    y = np.asarray(labels).astype(int).ravel()
    return _loss_and_grads(model.trainables(), model.quantum_inputs(features),
                           y, model.pre_rotation)


def _score(
    params: Params,
    q_in: np.ndarray,
    labels: np.ndarray,
    pre_rotation: bool
) -> Tuple[float, float]:
    probs = _head_forward(params, q_in, pre_rotation)[1]
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return bce_loss(probs, labels), acc


def check_labels(labels: Any, *, min_per_class: int = 1) -> np.ndarray:
    ''' Binary int labels; DataError unless both classes are present. '''
    y = np.asarray(labels).ravel()
    if y.size and not np.all(np.isin(y, (0, 1))):
        raise SchemaError('Labels must be 0/1')
    y = y.astype(int)
    counts = np.bincount(y, minlength=2)
    if counts.min() < min_per_class:
        raise DataError('Need >= {} sample(s) per class, got {}/{}'.format(
            min_per_class, counts[0], counts[1]))
    return y


def train(
    model: HybridModel,
    features: np.ndarray,
    labels: Sequence[int],
    config: TrainConfig
) -> Tuple[HybridModel, TrainHistory]:
    '''
    Mini-batch Adam on the quantum angles and the head; the dense stack
    in front of the quantum layer stays frozen. Early stopping monitors the
    validation loss and the best weights are restored at the end.
    '''
    y = check_labels(labels, min_per_class=2)
    x = model.check_features(features)
    if x.shape[0] != y.size:
        raise SchemaError('{} samples but {} labels'.format(x.shape[0], y.size))
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = stratified_split(y, config.validation_fraction,
                                          config.seed)
    q_in = model.quantum_inputs(x)  # frozen layers, compute once
    Log.info('Training on {} samples, validating on {}'.format(
        train_idx.size, val_idx.size))

    params = model.trainables()
    moments = None  # type: Optional[Moments]
    step = 0
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(train_idx)
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = _loss_and_grads(params, q_in[batch], y[batch],
                                          model.pre_rotation)
            if not math.isfinite(loss):
                raise NumericError('Non-finite loss in epoch {}'.format(epoch))
            step += 1
            params, moments = adam_step(params, grads, moments, step,
                                        config.learning_rate)
        tr_loss, tr_acc = _score(params, q_in[train_idx], y[train_idx],
                                 model.pre_rotation)
        va_loss, va_acc = _score(params, q_in[val_idx], y[val_idx],
                                 model.pre_rotation)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise NumericError('Non-finite loss in epoch {}'.format(epoch))
        history.append(tr_loss, va_loss, tr_acc, va_acc)
        Log.debug('epoch {}: loss {:.6f} val_loss {:.6f} acc {:.4f} '
                  'val_acc {:.4f}'.format(epoch, tr_loss, va_loss, tr_acc,
                                          va_acc))
        if stopper.update(epoch, va_loss, params):
            Log.info('Early stopping after epoch {}'.format(epoch))
            break
    history.best_epoch = stopper.best_epoch
    history.best_val_loss = stopper.best
    return model.with_trainables(stopper.best_state or params), history


class LogisticRegression:
    '''
    Zero-initialized sigmoid linear model with intercept, fit by full-batch
    gradient descent on the mean log-loss (no regularization).
    '''

    def __init__(
        self,
        iterations: int = 1000,
        learning_rate: float = 0.1
    ) -> None:
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.coef = None  # type: Optional[np.ndarray]
        self.intercept = 0.0

    def fit(self, features: Any, labels: Any) -> 'LogisticRegression':
        x = np.asarray(features, dtype=float)
        y = check_labels(labels)
        if x.ndim != 2 or x.shape[0] != y.size:
            raise SchemaError('Got features {} for {} labels'.format(
                x.shape, y.size))
        w = np.zeros(x.shape[1])
        b = 0.0
        for _ in range(self.iterations):
            err = expit(x @ w + b) - y
            w = w - self.learning_rate * (x.T @ err) / y.size
            b = b - self.learning_rate * float(err.mean())
        self.coef, self.intercept = w, b
        return self

    def predict_proba(self, features: Any) -> np.ndarray:
        ''' p_backorder per sample. '''
        if self.coef is None:
            raise RuntimeError('LogisticRegression is not fitted')
        return expit(np.asarray(features, dtype=float) @ self.coef
                     + self.intercept)

    def predict(self, features: Any) -> np.ndarray:
        return (self.predict_proba(features) > 0.5).astype(int)


def logistic_regression(
    train_features: Any,
    train_labels: Any,
    test_features: Any,
    *, iterations: int = 1000,
    learning_rate: float = 0.1
) -> Tuple[np.ndarray, np.ndarray]:
    ''' Fit on train, return (hard predictions, p_backorder) for test. '''
    model = LogisticRegression(iterations, learning_rate).fit(
        train_features, train_labels)
    proba = model.predict_proba(test_features)
    return (proba > 0.5).astype(int), proba
