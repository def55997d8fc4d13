import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from optregime import _kernels


def _case(seed, n, groups, p, q):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, groups, n)
    return codes, rng.normal(size=(n, p)), rng.normal(size=(n, q)), rng.normal(size=(groups, p, q))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 60), groups=st.integers(1, 7),
       p=st.integers(1, 4), q=st.integers(1, 4))
def test_numba_and_numpy_kernels_agree(seed, n, groups, p, q):
    codes, X, Z, B = _case(seed, n, groups, p, q)
    assert np.allclose(_kernels.group_sum_numpy(codes, X, groups),
                       _kernels.group_sum_numba(codes, X, groups), atol=1e-12)
    assert np.allclose(_kernels.group_outer_numpy(codes, X, Z, groups),
                       _kernels.group_outer_numba(codes, X, Z, groups), atol=1e-12)
    assert np.allclose(_kernels.rowwise_apply_numpy(codes, B, Z),
                       _kernels.rowwise_apply_numba(codes, B, Z), atol=1e-12)


def test_group_mean_broadcasts_rows():
    codes = np.array([0, 1, 0, 1, 2])
    x = np.array([1.0, 2.0, 3.0, 6.0, 5.0])
    assert np.allclose(_kernels.group_mean(codes, x, 3), [2.0, 4.0, 2.0, 4.0, 5.0])
    assert _kernels.group_mean(codes, np.stack([x, -x], 1), 3).shape == (5, 2)


def test_empty_group_has_zero_outer():
    out = _kernels.group_outer(np.array([0, 0]), np.ones((2, 1)), np.ones((2, 1)), 3)
    assert out[0, 0, 0] == 2.0 and not out[1:].any()
