#!/usr/bin/env python3
'''
Preprocessing for the product backorder data set:
clean -> signed log -> standard scale -> VIF selection -> NearMiss -> PCA.
'''
import numpy as np
import pandas as pd
from imblearn.under_sampling import NearMiss
from sklearn.preprocessing import StandardScaler
from statsmodels.stats.outliers_influence import variance_inflation_factor
from statsmodels.tools.tools import add_constant
from typing import Any, Dict, Iterable, List, Optional, Tuple
from .helper import Log, DataError, SchemaError

LABEL = 'went_on_backorder'
ID_COLUMN = 'sku'
MISSING = frozenset(('?', '', 'NA', 'NaN', 'nan', 'N/A', 'null'))
YES_NO = {'Yes': 1, 'No': 0}
NON_NEGATIVE = ('perf_6_month_avg', 'perf_12_month_avg')
VIF_CAP = 1e12
ORTHO_TOL = 1e-9

# Columns kept by VIF=5 on the full Kaggle data set, as published.
REFERENCE_SURVIVORS = (
    'national_inv', 'lead_time', 'in_transit_qty', 'forecast_3_month',
    'sales_9_month', 'min_bank', 'potential_issue', 'pieces_past_due',
    'perf_12_month_avg', 'local_bo_qty', 'ppap_risk', 'deck_risk',
    'stop_auto_buy', 'oe_constraint')


class FeatureFrame:
    '''
    Feature table plus binary label. The index of `features` is the row
    position in the source CSV and stays attached through every stage.
    `binary` names the Yes/No flag columns (never log-transformed/scaled).
    '''

    def __init__(
        self,
        features: pd.DataFrame,
        label: pd.Series,
        binary: Iterable[str] = ()
    ) -> None:
        if len(features) != len(label):
            raise SchemaError('{} feature rows but {} labels'.format(
                len(features), len(label)))
        if not features.index.equals(label.index):
            raise SchemaError('Feature and label rows are not aligned')
        self.features = features.astype(float)
        self.label = label.astype(int)
        self.binary = frozenset(binary) & frozenset(features.columns)

    @property
    def columns(self) -> List[str]:
        return list(self.features.columns)

    @property
    def continuous(self) -> List[str]:
        return [c for c in self.features.columns if c not in self.binary]

    @property
    def rows(self) -> np.ndarray:
        return self.features.to_numpy(dtype=float)

    @property
    def ids(self) -> np.ndarray:
        return self.features.index.to_numpy()

    def __len__(self) -> int:
        return len(self.features)

    def class_counts(self) -> Tuple[int, int]:
        ''' (class 0, class 1) '''
        n_pos = int(self.label.sum())
        return len(self) - n_pos, n_pos

    def replace(self, features: pd.DataFrame) -> 'FeatureFrame':
        ''' Same rows (by id) with new feature columns. '''
        return FeatureFrame(features, self.label.loc[features.index],
                            self.binary)

    def select(self, columns: Iterable[str]) -> 'FeatureFrame':
        return self.replace(self.features.loc[:, list(columns)])

    def take(self, ids: Iterable[int]) -> 'FeatureFrame':
        ''' Rows by id, in the given order. '''
        ids = list(ids)
        return FeatureFrame(self.features.loc[ids], self.label.loc[ids],
                            self.binary)

    def to_csv(self) -> str:
        df = self.features.copy()
        df[LABEL] = self.label
        return df.to_csv(index=False, lineterminator='\n', float_format='%r')

    @staticmethod
    def load(fname: str) -> 'FeatureFrame':
        ''' Read raw CSV as strings and clean it. '''
        try:
            raw = pd.read_csv(fname, dtype=str, keep_default_na=False)
        except (OSError, ValueError) as e:
            raise SchemaError('Cannot read CSV "{}": {}'.format(fname, e))
        return clean(raw)


def _parse_column(values: pd.Series, name: str) -> Tuple[pd.Series, bool]:
    ''' Returns (numeric column, is Yes/No flag). '''
    if values.isin(YES_NO.keys()).all():
        return values.map(YES_NO), True
    try:
        return pd.to_numeric(values, errors='raise').astype(float), False
    except (ValueError, TypeError):
        bad = values[pd.to_numeric(values, errors='coerce').isna()].iloc[0]
        raise SchemaError('Unparseable value "{}" in column "{}"'.format(
            bad, name))


def clean(raw: pd.DataFrame, label: str = LABEL) -> FeatureFrame:
    '''
    Drop the sku column, every row holding a missing marker, and rows with
    negative performance averages. Map Yes/No to 1/0.
    '''
    if label not in raw.columns:
        raise SchemaError('Missing label column "{}"'.format(label))
    df = raw.drop(columns=[ID_COLUMN], errors='ignore')
    df = df.astype(str).apply(lambda col: col.str.strip())
    missing = df.isin(MISSING).any(axis=1)
    if missing.any():
        Log.info('clean: dropping {} rows with missing values'.format(
            int(missing.sum())))
    df = df.loc[~missing]

    y = df.pop(label)
    y_num = y.map({'Yes': 1, 'No': 0, '1': 1, '0': 0, '1.0': 1, '0.0': 0})
    if y_num.isna().any():
        raise SchemaError('Label column "{}" must be Yes/No or 1/0, got "{}"'
                          .format(label, y[y_num.isna()].iloc[0]))
    parsed = {}  # type: Dict[str, pd.Series]
    binary = []
    for name in df.columns:
        parsed[name], is_flag = _parse_column(df[name], name)
        if is_flag:
            binary.append(name)
    features = pd.DataFrame(parsed, index=df.index, columns=df.columns)

    keep = np.isfinite(features.to_numpy(dtype=float)).all(axis=1)
    for name in NON_NEGATIVE:
        if name in features.columns:
            keep &= (features[name] >= 0).to_numpy()
    if not keep.all():
        Log.info('clean: dropping {} rows with negative or non-finite values'
                 .format(int((~keep).sum())))
    return FeatureFrame(features.loc[keep], y_num.loc[keep], binary)


def signed_log_transform(frame: FeatureFrame) -> FeatureFrame:
    ''' x -> sign(x) * ln(1 + |x|) on continuous columns. '''
    features = frame.features.copy()
    cols = frame.continuous
    if cols:
        x = features[cols].to_numpy(dtype=float)
        features[cols] = np.sign(x) * np.log1p(np.abs(x))
    finite = np.isfinite(features.to_numpy(dtype=float)).all(axis=1)
    if not finite.all():
        Log.warn('log transform: dropping {} non-finite rows'.format(
            int((~finite).sum())))
        features = features.loc[finite]
    return frame.replace(features)


def fitted_scaler(means: Dict[str, float], stds: Dict[str, float]) \
        -> StandardScaler:
    ''' StandardScaler restored from stored per-column statistics. '''
    scaler = StandardScaler()
    scaler.mean_ = np.array([means[c] for c in means], dtype=float)
    scaler.scale_ = np.array([stds[c] for c in means], dtype=float)
    scaler.var_ = scaler.scale_ ** 2
    scaler.n_features_in_ = len(means)
    return scaler


def _scale_columns(
    features: pd.DataFrame,
    columns: List[str],
    scaler: StandardScaler
) -> pd.DataFrame:
    features = features.copy()
    if columns:
        features[columns] = scaler.transform(
            features[columns].to_numpy(dtype=float))
    return features


def standard_scale(frame: FeatureFrame) \
        -> Tuple[FeatureFrame, Dict[str, float], Dict[str, float]]:
    '''
    Scale continuous columns to mean 0, population std 1. Constant columns
    (binary ones included) are dropped. Returns (frame, means, stds).
    '''
    if len(frame) < 2:
        raise DataError('Scaling needs at least 2 rows, got {}'.format(
            len(frame)))
    features = frame.features
    constant = [c for c in features.columns
                if features[c].std(ddof=0) == 0]
    for name in constant:
        Log.warn('Dropping constant column "{}"'.format(name))
    features = features.drop(columns=constant)
    columns = [c for c in features.columns if c not in frame.binary]
    if not columns:
        return frame.replace(features), {}, {}
    fit = StandardScaler().fit(features[columns].to_numpy(dtype=float))
    means = {c: float(m) for c, m in zip(columns, fit.mean_)}
    stds = {c: float(s) for c, s in zip(columns, fit.scale_)}
    features = _scale_columns(features, columns, fit)
    return frame.replace(features), means, stds


def compute_vif(frame: FeatureFrame) -> pd.Series:
    '''
    VIF per column: 1 / (1 - R^2) of an OLS fit (with intercept) of the
    column on all others. Perfect collinearity is capped at VIF_CAP.
    '''
    if len(frame.columns) < 2:
        raise SchemaError('VIF needs at least 2 columns, got {}'.format(
            len(frame.columns)))
    exog = add_constant(frame.rows, has_constant='add')
    with np.errstate(divide='ignore', invalid='ignore'):
        vif = np.array([variance_inflation_factor(exog, i)
                        for i in range(1, exog.shape[1])], dtype=float)
    vif = np.nan_to_num(vif, nan=VIF_CAP, posinf=VIF_CAP)
    return pd.Series(np.clip(vif, 1.0, VIF_CAP), index=frame.columns)


def vif_select(frame: FeatureFrame, threshold: float = 5) \
        -> Tuple[FeatureFrame, List[str]]:
    ''' Drop the max-VIF column (lowest index on ties) until max <= limit. '''
    if not frame.columns:
        raise DataError('VIF selection on a frame without columns')
    while len(frame.columns) >= 2:
        vif = compute_vif(frame)
        worst = int(np.argmax(vif.to_numpy()))
        if vif.iloc[worst] <= threshold:
            break
        Log.info('VIF: drop "{}" ({:.4g})'.format(vif.index[worst],
                                                  vif.iloc[worst]))
        frame = frame.select(c for c in frame.columns
                             if c != vif.index[worst])
    return frame, frame.columns


def compare_survivors(kept: Iterable[str]) -> Tuple[List[str], List[str]]:
    ''' (missing, extra) against the published survivor list. '''
    kept = list(kept)
    missing = [c for c in REFERENCE_SURVIVORS if c not in kept]
    extra = [c for c in kept if c not in REFERENCE_SURVIVORS]
    if missing or extra:
        Log.warn('VIF survivors differ from the reference list; missing: {}, '
                 'extra: {}'.format(missing or '-', extra or '-'))
    return missing, extra


def nearmiss_undersample(
    frame: FeatureFrame,
    target_ratio: float,
    k: int = 3
) -> FeatureFrame:
    '''
    NearMiss-1: keep the majority rows with the smallest mean distance to
    their k nearest minority rows until majority:minority == target_ratio.
    Minority rows are untouched and the original row order is kept.
    '''
    counts = frame.class_counts()
    minority = 1 if counts[1] <= counts[0] else 0
    n_min, n_maj = counts[minority], counts[1 - minority]
    if n_min == 0:
        raise DataError('NearMiss needs a non-empty minority class')
    if target_ratio <= 0:
        raise SchemaError('Target ratio must be positive')
    n_keep = int(round(target_ratio * n_min))
    if n_maj < n_keep:
        raise DataError('Majority class has {} rows, {} requested'.format(
            n_maj, n_keep))
    if n_maj == n_keep:
        return frame
    if k > n_min:
        Log.warn('NearMiss k={} exceeds minority count, clamped to {}'
                 .format(k, n_min))
        k = n_min
    sampler = NearMiss(version=1, n_neighbors=k,
                       sampling_strategy={1 - minority: n_keep})
    sampler.fit_resample(frame.rows, frame.label.to_numpy())
    keep = np.sort(sampler.sample_indices_)
    return frame.take(frame.ids[keep])


class SamplingConfig:
    ''' Ratios are majority:minority. '''

    def __init__(
        self,
        nearmiss_k: int = 3,
        train_majority_ratio: float = 1.0,
        test_majority_ratio: float = 3.0,
        train_size: int = 1000,
        test_size: int = 267,
        seed: int = 42
    ) -> None:
        for name, value in (('nearmiss_k', nearmiss_k),
                            ('train_majority_ratio', train_majority_ratio),
                            ('test_majority_ratio', test_majority_ratio),
                            ('train_size', train_size),
                            ('test_size', test_size)):
            if not value > 0:
                raise SchemaError('{} must be positive, got {}'.format(
                    name, value))
        self.nearmiss_k = int(nearmiss_k)
        self.train_majority_ratio = float(train_majority_ratio)
        self.test_majority_ratio = float(test_majority_ratio)
        self.train_size = int(train_size)
        self.test_size = int(test_size)
        self.seed = int(seed)

    @staticmethod
    def _counts(size: int, ratio: float) -> Tuple[int, int]:
        majority = int(round(size * ratio / (ratio + 1)))
        return majority, size - majority

    @property
    def train_counts(self) -> Tuple[int, int]:
        ''' (class 0, class 1) '''
        return self._counts(self.train_size, self.train_majority_ratio)

    @property
    def test_counts(self) -> Tuple[int, int]:
        ''' (class 0, class 1), e.g., (200, 67) '''
        return self._counts(self.test_size, self.test_majority_ratio)

    def to_dict(self) -> Dict[str, Any]:
        return dict(vars(self))

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'SamplingConfig':
        try:
            return SamplingConfig(**data)
        except TypeError as e:
            raise SchemaError('Bad sampling config: {}'.format(e))


def build_splits(frame: FeatureFrame, config: SamplingConfig) \
        -> Tuple[FeatureFrame, FeatureFrame]:
    '''
    Test rows are drawn at random per class. Training backorders are drawn
    from the rest and NearMiss picks the training majority rows out of all
    remaining class-0 rows. Both outputs are in original row order.
    '''
    test_neg, test_pos = config.test_counts
    train_neg, train_pos = config.train_counts
    labels = frame.label.to_numpy()
    ids = frame.ids
    pos = ids[labels == 1]
    neg = ids[labels == 0]
    if pos.size < test_pos + train_pos:
        raise DataError('Need {} backorder rows, have {}'.format(
            test_pos + train_pos, pos.size))
    if neg.size < test_neg + train_neg:
        raise DataError('Need {} non-backorder rows, have {}'.format(
            test_neg + train_neg, neg.size))
    rng = np.random.default_rng(config.seed)
    pos = rng.permutation(pos)
    neg = rng.permutation(neg)
    test_ids = np.sort(np.concatenate((pos[:test_pos], neg[:test_neg])))
    pool_ids = np.sort(np.concatenate(
        (pos[test_pos:test_pos + train_pos], neg[test_neg:])))
    train = nearmiss_undersample(frame.take(pool_ids),
                                 train_neg / train_pos, config.nearmiss_k)
    return train, frame.take(test_ids)


def _project(rows: np.ndarray, means: np.ndarray, components: np.ndarray) \
        -> np.ndarray:
    # row-wise products, so a row's result never depends on the batch
    centered = rows - means
    return (centered[:, None, :] * components[None, :, :]).sum(axis=2)


def pca_fit_transform(
    train: FeatureFrame,
    test: FeatureFrame,
    n_components: int = 4
) -> Tuple[FeatureFrame, FeatureFrame, 'PreprocessArtifacts']:
    '''
    Fit PCA on train only: top eigenvectors of the train covariance, by
    descending eigenvalue, each flipped so its largest |entry| is positive.
    Artifacts carry only the PCA part; `preprocess` fills in the rest.
    '''
    x = train.rows
    if x.shape[1] < n_components:
        raise SchemaError('{} columns left, {} components requested'.format(
            x.shape[1], n_components))
    if x.shape[0] < n_components:
        raise DataError('{} training rows, {} components requested'.format(
            x.shape[0], n_components))
    if list(test.columns) != list(train.columns):
        raise SchemaError('Train and test columns differ')
    means = x.mean(axis=0)
    values, vectors = np.linalg.eigh(np.cov(x - means, rowvar=False))
    order = np.argsort(-values, kind='stable')[:n_components]
    components = vectors[:, order].T
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    ratio = values[order] / values.sum()
    art = PreprocessArtifacts(
        kept_columns=train.columns, scaler_means={}, scaler_stds={},
        pca_means=means, pca_components=components,
        explained_variance_ratio=ratio, binary_columns=sorted(train.binary))
    return art.project(train), art.project(test), art


class PreprocessArtifacts:
    ''' Everything needed to map a cleaned frame to its principal components. '''

    def __init__(
        self,
        kept_columns: List[str],
        scaler_means: Dict[str, float],
        scaler_stds: Dict[str, float],
        pca_means: Any,
        pca_components: Any,
        explained_variance_ratio: Any = (),
        binary_columns: Iterable[str] = (),
        vif_threshold: float = 5.0,
        sampling: Optional[SamplingConfig] = None
    ) -> None:
        self.kept_columns = list(kept_columns)
        self.scaler_means = dict(scaler_means)
        self.scaler_stds = dict(scaler_stds)
        self.pca_means = np.asarray(pca_means, dtype=float)
        self.pca_components = np.asarray(pca_components, dtype=float)
        self.explained_variance_ratio = np.asarray(
            explained_variance_ratio, dtype=float)
        self.binary_columns = sorted(binary_columns)
        self.vif_threshold = float(vif_threshold)
        self.sampling = sampling or SamplingConfig()
        self.check()

    def check(self) -> None:
        n_comp, n_cols = self.pca_components.shape
        if n_cols != len(self.kept_columns) or \
                self.pca_means.shape != (n_cols,):
            raise SchemaError('PCA shapes do not match {} kept columns'
                              .format(len(self.kept_columns)))
        gram = self.pca_components @ self.pca_components.T
        if not np.allclose(gram, np.eye(n_comp), rtol=0, atol=ORTHO_TOL):
            raise SchemaError('PCA components are not orthonormal')
        if any(not s > 0 for s in self.scaler_stds.values()):
            raise SchemaError('Scaler deviations must be positive')

    @property
    def pc_names(self) -> List[str]:
        return ['pc{}'.format(i + 1) for i in range(len(self.pca_components))]

    def project(self, frame: FeatureFrame) -> FeatureFrame:
        ''' Selected, scaled frame -> principal components. '''
        pcs = _project(frame.select(self.kept_columns).rows,
                       self.pca_means, self.pca_components)
        return FeatureFrame(
            pd.DataFrame(pcs, index=frame.features.index,
                         columns=self.pc_names), frame.label)

    def apply(self, frame: FeatureFrame) -> FeatureFrame:
        ''' Cleaned frame -> principal components, using stored statistics. '''
        missing = [c for c in self.kept_columns if c not in frame.columns]
        if missing:
            raise SchemaError('Missing columns: {}'.format(missing))
        frame = signed_log_transform(frame.select(self.kept_columns))
        means = {c: m for c, m in self.scaler_means.items()
                 if c in frame.columns}
        stds = {c: self.scaler_stds[c] for c in means}
        features = _scale_columns(frame.features, list(means),
                                  fitted_scaler(means, stds))
        return self.project(frame.replace(features))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kept_columns': self.kept_columns,
            'binary_columns': self.binary_columns,
            'scaler_means': self.scaler_means,
            'scaler_stds': self.scaler_stds,
            'pca_means': self.pca_means.tolist(),
            'pca_components': self.pca_components.tolist(),
            'explained_variance_ratio':
                self.explained_variance_ratio.tolist(),
            'vif_threshold': self.vif_threshold,
            'sampling': self.sampling.to_dict(),
        }

    @staticmethod
    def from_dict(data: Dict[str, Any]) -> 'PreprocessArtifacts':
        try:
            return PreprocessArtifacts(
                kept_columns=data['kept_columns'],
                scaler_means=data['scaler_means'],
                scaler_stds=data['scaler_stds'],
                pca_means=data['pca_means'],
                pca_components=data['pca_components'],
                explained_variance_ratio=data.get(
                    'explained_variance_ratio', ()),
                binary_columns=data.get('binary_columns', ()),
                vif_threshold=data.get('vif_threshold', 5.0),
                sampling=SamplingConfig.from_dict(data.get('sampling', {})))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SchemaError):
                raise
            raise SchemaError('Malformed preprocessing artifacts: {!r}'
                              .format(e))


def preprocess(
    frame: FeatureFrame,
    config: SamplingConfig,
    *, vif_threshold: float = 5.0,
    n_components: int = 4
) -> Tuple[FeatureFrame, FeatureFrame, PreprocessArtifacts]:
    ''' Cleaned frame -> (train PCs, test PCs, artifacts). '''
    logged = signed_log_transform(frame)
    scaled, means, stds = standard_scale(logged)
    selected, kept = vif_select(scaled, vif_threshold)
    Log.info('VIF kept {} of {} columns'.format(len(kept),
                                                len(scaled.columns)))
    compare_survivors(kept)
    train, test = build_splits(selected, config)
    train_pcs, test_pcs, art = pca_fit_transform(train, test, n_components)
    art.scaler_means = {c: means[c] for c in kept if c in means}
    art.scaler_stds = {c: stds[c] for c in kept if c in stds}
    art.vif_threshold = float(vif_threshold)
    art.sampling = config
    return train_pcs, test_pcs, art


def pca_frame(df: pd.DataFrame, n_features: int = 4) \
        -> Tuple[np.ndarray, np.ndarray, List[str]]:
    '''
    Processed CSV -> (features, labels, feature names). Exactly the label
    plus `n_features` numeric columns are accepted.
    '''
    if LABEL not in df.columns:
        raise SchemaError('Missing label column "{}"'.format(LABEL))
    names = [c for c in df.columns if c != LABEL]
    if len(names) != n_features:
        raise SchemaError('Expected {} feature columns, got {}'.format(
            n_features, len(names)))
    try:
        x = df[names].to_numpy(dtype=float)
        y = df[LABEL].to_numpy(dtype=float)
    except (TypeError, ValueError) as e:
        raise SchemaError('Non-numeric cell: {}'.format(e))
    if not np.isfinite(x).all():
        raise SchemaError('Non-finite feature values')
    if not np.isin(y, (0, 1)).all():
        raise SchemaError('Labels must be 0/1')
    return x, y.astype(int), names


def load_processed(fname: str, n_features: int = 4) \
        -> Tuple[np.ndarray, np.ndarray, List[str]]:
    try:
        df = pd.read_csv(fname)
    except (OSError, ValueError) as e:
        raise SchemaError('Cannot read CSV "{}": {}'.format(fname, e))
    return pca_frame(df, n_features)


def split_paths(out_data: str) -> Tuple[str, str]:
    ''' "dir/data.csv" -> ("dir/data_train.csv", "dir/data_test.csv") '''
    stem = out_data[:-4] if out_data.lower().endswith('.csv') else out_data
    return stem + '_train.csv', stem + '_test.csv'
