import numpy as np
import pandas as pd
import pytest

from qamplify.helper import Log

PC_COLUMNS = ['pc1', 'pc2', 'pc3', 'pc4']
LABEL = 'went_on_backorder'

RAW_CONTINUOUS = [
    'national_inv', 'lead_time', 'in_transit_qty', 'forecast_3_month',
    'forecast_6_month', 'forecast_9_month', 'sales_1_month', 'sales_3_month',
    'sales_6_month', 'sales_9_month', 'min_bank', 'pieces_past_due',
    'perf_6_month_avg', 'perf_12_month_avg', 'local_bo_qty']
RAW_FLAGS = ['potential_issue', 'deck_risk', 'oe_constraint', 'ppap_risk',
             'stop_auto_buy', 'rev_stop']


@pytest.fixture(autouse=True)
def quiet_log():
    level, fname = Log.LEVEL, Log.FILE
    Log.LEVEL, Log.FILE = 1, None
    yield
    Log.LEVEL, Log.FILE = level, fname


def blobs(n=200, seed=42, spread=0.3, center=1.5):
    ''' Two Gaussian clusters at -center and +center on every axis. '''
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = np.where(y[:, None] == 1, center, -center) \
        + spread * rng.standard_normal((n, 4))
    return x, y


def write_processed(path, x, y):
    df = pd.DataFrame(np.asarray(x), columns=PC_COLUMNS[:np.shape(x)[1]])
    df[LABEL] = np.asarray(y).astype(int)
    df.to_csv(path, index=False)
    return str(path)


@pytest.fixture
def separable():
    return blobs()


@pytest.fixture
def separable_csv(tmp_path):
    x, y = blobs()
    return write_processed(tmp_path / 'separable.csv', x, y)


def raw_backorders(n_pos=150, n_neg=600, seed=0):
    '''
    String-typed frame with the Kaggle header. forecast_6/9 and sales_6 are
    near-copies of other columns so VIF has something to drop.
    '''
    rng = np.random.default_rng(seed)
    n = n_pos + n_neg
    y = np.array([1] * n_pos + [0] * n_neg)
    rng.shuffle(y)
    data = {'sku': ['{}'.format(1000000 + i) for i in range(n)]}
    base = rng.lognormal(2.0, 1.0, size=n)
    data['national_inv'] = np.round(np.where(y == 1, base * 0.3, base * 3))
    data['lead_time'] = rng.integers(2, 12, size=n).astype(float)
    data['in_transit_qty'] = rng.poisson(3, size=n).astype(float)
    f3 = rng.poisson(20, size=n).astype(float)
    data['forecast_3_month'] = f3
    data['forecast_6_month'] = 2 * f3 + rng.poisson(1, size=n)
    data['forecast_9_month'] = 3 * f3 + rng.poisson(1, size=n)
    for col, lam in (('sales_1_month', 5), ('sales_3_month', 15),
                     ('sales_9_month', 45)):
        data[col] = rng.poisson(lam, size=n).astype(float)
    data['sales_6_month'] = 2 * data['sales_3_month'] + rng.poisson(1, size=n)
    data['min_bank'] = rng.poisson(4, size=n).astype(float)
    data['pieces_past_due'] = rng.poisson(0.5, size=n).astype(float)
    data['perf_6_month_avg'] = np.round(rng.uniform(0, 1, size=n), 2)
    data['perf_12_month_avg'] = np.round(rng.uniform(0, 1, size=n), 2)
    data['local_bo_qty'] = rng.poisson(0.5, size=n).astype(float)
    for col in RAW_FLAGS:
        data[col] = np.where(rng.random(n) < 0.3, 'Yes', 'No')
    data[LABEL] = np.where(y == 1, 'Yes', 'No')
    df = pd.DataFrame(data)
    for col in RAW_CONTINUOUS:
        df[col] = [repr(float(v)) for v in df[col]]
    return df


@pytest.fixture
def raw_frame():
    return raw_backorders()


@pytest.fixture
def raw_csv(tmp_path):
    path = tmp_path / 'raw.csv'
    raw_backorders().to_csv(path, index=False)
    return str(path)
