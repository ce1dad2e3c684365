import math
import numpy as np
import pandas as pd
import pytest

from qamplify.helper import DataError, SchemaError
from qamplify.pipeline import (
    REFERENCE_SURVIVORS, VIF_CAP, FeatureFrame, PreprocessArtifacts,
    SamplingConfig, build_splits, clean, compare_survivors, compute_vif,
    fitted_scaler, nearmiss_undersample, pca_fit_transform, preprocess,
    signed_log_transform, split_paths, standard_scale, vif_select)


def make_frame(columns, label=None, binary=()):
    features = pd.DataFrame(columns)
    if label is None:
        label = [i % 2 for i in range(len(features))]
    return FeatureFrame(features, pd.Series(label, index=features.index),
                        binary)


def raw(rows):
    cols = ['sku', 'national_inv', 'perf_6_month_avg', 'perf_12_month_avg',
            'deck_risk', 'went_on_backorder']
    return pd.DataFrame(rows, columns=cols, dtype=str)


def test_clean_drops_bad_rows_and_maps_flags():
    frame = clean(raw([
        ['1', '10', '0.5', '0.6', 'Yes', 'No'],
        ['2', '3', '-99', '0.6', 'No', 'Yes'],
        ['3', '?', '0.5', '0.6', 'No', 'No'],
        ['4', '5', '0.1', '-99', 'No', 'No'],
        ['5', '', '0.1', '0.2', 'No', 'No'],
        ['6', '-7', '0.9', '0.8', 'No', 'Yes'],
    ]))
    assert list(frame.ids) == [0, 5]
    assert frame.columns == ['national_inv', 'perf_6_month_avg',
                             'perf_12_month_avg', 'deck_risk']
    assert frame.binary == {'deck_risk'}
    assert list(frame.features['deck_risk']) == [1, 0]
    assert list(frame.label) == [0, 1]
    assert list(frame.features['national_inv']) == [10, -7]


def test_clean_identity_case():
    frame = clean(raw([['1', '2', '0.5', '0.5', 'No', 'No'],
                       ['2', '4', '0.7', '0.1', 'Yes', 'Yes']]))
    assert frame.rows.tolist() == [[2, 0.5, 0.5, 0], [4, 0.7, 0.1, 1]]


def test_clean_errors():
    with pytest.raises(SchemaError, match='went_on_backorder'):
        clean(pd.DataFrame({'sku': ['1'], 'national_inv': ['1']}))
    with pytest.raises(SchemaError, match='national_inv'):
        clean(raw([['1', 'abc', '0.5', '0.5', 'No', 'No']]))
    with pytest.raises(SchemaError):
        clean(raw([['1', '1', '0.5', '0.5', 'No', 'maybe']]))


def test_signed_log_transform():
    frame = make_frame({'a': [0.0, math.e - 1, -(math.e - 1)],
                        'flag': [1.0, 0.0, 1.0]}, binary=['flag'])
    out = signed_log_transform(frame)
    assert np.allclose(out.features['a'], [0, 1, -1], atol=1e-15)
    assert list(out.features['flag']) == [1, 0, 1]


def test_standard_scale():
    frame = make_frame({'a': [1.0, 3.0], 'c': [5.0, 5.0]})
    out, means, stds = standard_scale(frame)
    assert out.columns == ['a']
    assert list(out.features['a']) == [-1, 1]
    assert means == {'a': 2.0} and stds == {'a': 1.0}
    rng = np.random.default_rng(0)
    frame = make_frame({'a': rng.normal(size=50), 'b': rng.normal(size=50)})
    once, _, _ = standard_scale(frame)
    assert np.allclose(once.rows.mean(axis=0), 0, atol=1e-9)
    assert np.allclose(once.rows.std(axis=0), 1, atol=1e-9)
    twice, _, _ = standard_scale(once)
    assert np.allclose(twice.rows, once.rows, atol=1e-9)
    with pytest.raises(DataError):
        standard_scale(make_frame({'a': [1.0]}))


def test_standard_scale_skips_binary_columns():
    frame = make_frame({'a': [1.0, 2.0, 3.0, 4.0],
                        'flag': [0.0, 1.0, 1.0, 0.0]}, binary=['flag'])
    out, means, _ = standard_scale(frame)
    assert list(means) == ['a']
    assert list(out.features['flag']) == [0, 1, 1, 0]


def test_fitted_scaler_reproduces_fit():
    rng = np.random.default_rng(4)
    frame = make_frame({'a': rng.normal(3, 2, size=40),
                        'b': rng.exponential(size=40)})
    out, means, stds = standard_scale(frame)
    assert means['a'] == pytest.approx(frame.features['a'].mean())
    assert stds['b'] == pytest.approx(frame.features['b'].std(ddof=0))
    again = fitted_scaler(means, stds).transform(frame.rows)
    assert again.tobytes() == out.rows.tobytes()


def test_vif_orthogonal_and_duplicate():
    frame = make_frame({'a': [1.0, -1.0, 1.0, -1.0],
                        'b': [1.0, 1.0, -1.0, -1.0]})
    assert np.allclose(compute_vif(frame), [1.0, 1.0], atol=1e-9)
    rng = np.random.default_rng(1)
    a = rng.normal(size=30)
    dup = make_frame({'a': a, 'b': a.copy(), 'c': rng.normal(size=30)})
    vif = compute_vif(dup)
    assert vif['a'] == VIF_CAP and vif['b'] == VIF_CAP
    with pytest.raises(SchemaError):
        compute_vif(make_frame({'a': a}))


def test_vif_matches_normal_equations():
    rng = np.random.default_rng(2)
    x1, x2 = rng.normal(size=200), rng.normal(size=200)
    x3 = 0.8 * x1 + 0.3 * rng.normal(size=200)
    frame = make_frame({'x1': x1, 'x2': x2, 'x3': x3})
    design = np.column_stack([np.ones(200), x1, x2])
    beta = np.linalg.solve(design.T @ design, design.T @ x3)
    resid = x3 - design @ beta
    r2 = 1 - resid @ resid / np.sum((x3 - x3.mean()) ** 2)
    assert compute_vif(frame)['x3'] == pytest.approx(1 / (1 - r2), rel=1e-8)


def test_vif_select():
    rng = np.random.default_rng(3)
    cols = {'a': rng.normal(size=100), 'b': rng.normal(size=100)}
    frame = make_frame(cols)
    out, kept = vif_select(frame)
    assert kept == ['a', 'b']
    cols['c'] = cols['a'].copy()
    out, kept = vif_select(make_frame(cols))
    assert kept == ['b', 'c']
    assert compute_vif(out).max() <= 5


def test_compare_survivors():
    assert compare_survivors(REFERENCE_SURVIVORS) == ([], [])
    missing, extra = compare_survivors(['national_inv', 'rev_stop'])
    assert 'lead_time' in missing and extra == ['rev_stop']


def test_nearmiss_toy_matches_brute_force():
    maj = np.array([[0, 0], [5, 5], [0.2, 0.1], [9, 9], [1.0, 1.1], [4, 0]])
    mino = np.array([[0.1, 0.0], [1.0, 1.0]])
    x = np.vstack([maj, mino])
    y = [0] * 6 + [1] * 2
    frame = make_frame({'u': x[:, 0], 'v': x[:, 1]}, label=y)
    out = nearmiss_undersample(frame, 1.0, k=1)
    nearest = [min(np.linalg.norm(p - m) for m in mino) for p in maj]
    expect = sorted(np.argsort(nearest, kind='stable')[:2].tolist())
    assert list(out.ids) == expect + [6, 7]
    assert out.class_counts() == (2, 2)


def test_nearmiss_ratio_and_identity():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(100, 3))
    y = [1] * 10 + [0] * 90
    frame = make_frame({'a': x[:, 0], 'b': x[:, 1], 'c': x[:, 2]}, label=y)
    out = nearmiss_undersample(frame, 3.0)
    assert out.class_counts() == (30, 10)
    minority = frame.take(range(10))
    assert out.take(range(10)).rows.tobytes() == minority.rows.tobytes()
    assert nearmiss_undersample(out, 3.0) is out
    with pytest.raises(DataError):
        nearmiss_undersample(frame, 10.0)


def test_nearmiss_clamps_k():
    frame = make_frame({'a': [0.0, 1.0, 2.0, 3.0, 10.0]},
                       label=[0, 0, 0, 0, 1])
    out = nearmiss_undersample(frame, 2.0, k=3)
    assert out.class_counts() == (2, 1)
    with pytest.raises(DataError):
        nearmiss_undersample(make_frame({'a': [0.0, 1.0]}, label=[0, 0]), 1.0)


def test_pca_diagonal_covariance():
    rng = np.random.default_rng(5)
    scales = np.sqrt([4, 3, 2, 1, 0.5])
    z = rng.standard_normal((5000, 5))
    # exact diagonal sample covariance via orthogonalized columns
    q, _ = np.linalg.qr(z - z.mean(axis=0))
    x = q * np.sqrt(4999) * scales
    frame = make_frame({'x{}'.format(i): x[:, i] for i in range(5)})
    train, test, art = pca_fit_transform(frame, frame)
    assert np.allclose(np.abs(art.pca_components), np.eye(5)[:4], atol=1e-8)
    assert np.all(art.pca_components[np.arange(4), np.arange(4)] > 0)
    assert np.allclose(art.pca_components @ art.pca_components.T, np.eye(4),
                       atol=1e-9)
    assert np.allclose(art.explained_variance_ratio,
                       np.array([4, 3, 2, 1]) / 10.5)
    assert train.columns == ['pc1', 'pc2', 'pc3', 'pc4']


def test_pca_decorrelates_and_matches_eigen_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(300, 6)) @ rng.normal(size=(6, 6))
    frame = make_frame({'c{}'.format(i): x[:, i] for i in range(6)})
    train, _, art = pca_fit_transform(frame, frame)
    cov = np.cov(train.rows, rowvar=False)
    assert np.all(np.abs(cov - np.diag(np.diag(cov))) < 1e-8)
    top = np.max(np.linalg.eigvalsh(np.cov(x, rowvar=False)))
    assert cov[0, 0] == pytest.approx(top, abs=1e-8)
    for row in art.pca_components:
        assert row[np.argmax(np.abs(row))] > 0
    with pytest.raises(SchemaError):
        pca_fit_transform(frame.select(['c0', 'c1']),
                          frame.select(['c0', 'c1']))


def test_sampling_config():
    cfg = SamplingConfig()
    assert cfg.train_counts == (500, 500)
    assert cfg.test_counts == (200, 67)
    assert SamplingConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(SchemaError):
        SamplingConfig(train_size=0)


def test_build_splits_counts_and_determinism():
    rng = np.random.default_rng(7)
    n_pos, n_neg = 600, 3000
    x = rng.normal(size=(n_pos + n_neg, 3))
    y = [1] * n_pos + [0] * n_neg
    frame = make_frame({'a': x[:, 0], 'b': x[:, 1], 'c': x[:, 2]}, label=y)
    cfg = SamplingConfig(seed=3)
    train, test = build_splits(frame, cfg)
    assert train.class_counts() == (500, 500)
    assert test.class_counts() == (200, 67)
    assert not set(train.ids) & set(test.ids)
    again, again_test = build_splits(frame, SamplingConfig(seed=3))
    assert list(again.ids) == list(train.ids)
    assert list(again_test.ids) == list(test.ids)
    with pytest.raises(DataError):
        build_splits(frame.take(range(500)), cfg)


def test_preprocess_end_to_end(raw_frame):
    frame = clean(raw_frame)
    cfg = SamplingConfig(train_size=100, test_size=40, seed=1)
    train, test, art = preprocess(frame, cfg)
    assert train.class_counts() == (50, 50)
    assert test.class_counts() == (30, 10)
    assert train.columns == ['pc1', 'pc2', 'pc3', 'pc4']
    assert set(art.kept_columns) <= set(frame.columns)
    assert 'forecast_6_month' not in art.kept_columns \
        or 'forecast_3_month' not in art.kept_columns
    assert np.allclose(art.pca_components @ art.pca_components.T, np.eye(4),
                       atol=1e-9)
    # stored statistics reproduce the training matrix exactly
    applied = art.apply(frame).take(train.ids)
    assert applied.rows.tobytes() == train.rows.tobytes()
    restored = PreprocessArtifacts.from_dict(art.to_dict())
    assert restored.apply(frame).take(test.ids).rows.tobytes() \
        == test.rows.tobytes()
    again = preprocess(frame, SamplingConfig(train_size=100, test_size=40,
                                             seed=1))
    assert again[0].to_csv() == train.to_csv()


def test_post_vif_columns_within_threshold(raw_frame):
    frame = clean(raw_frame)
    scaled, _, _ = standard_scale(signed_log_transform(frame))
    selected, kept = vif_select(scaled)
    assert compute_vif(selected).max() <= 5
    assert len(kept) < len(scaled.columns)


def test_artifacts_validation():
    with pytest.raises(SchemaError):
        PreprocessArtifacts(['a', 'b'], {}, {}, [0, 0], [[1, 1], [0, 1]])
    with pytest.raises(SchemaError):
        PreprocessArtifacts.from_dict({'kept_columns': ['a']})


def test_split_paths():
    assert split_paths('out/data.csv') == ('out/data_train.csv',
                                           'out/data_test.csv')
    assert split_paths('data') == ('data_train.csv', 'data_test.csv')


def test_load_raw_csv(raw_csv):
    frame = FeatureFrame.load(raw_csv)
    assert len(frame) == 750
    assert 'sku' not in frame.columns
    assert frame.binary == {'potential_issue', 'deck_risk', 'oe_constraint',
                            'ppap_risk', 'stop_auto_buy', 'rev_stop'}
