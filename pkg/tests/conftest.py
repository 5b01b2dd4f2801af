import numpy as np
import pytest


def naive_conv(x, w, b, d, pad):
    """Scalar-loop dilated correlation with zero padding."""
    batch, cin, length = x.shape
    cout, _, r = w.shape
    out_len = length + 2 * pad - d * (r - 1)
    y = np.zeros((batch, cout, out_len))
    for n in range(batch):
        for o in range(cout):
            for t in range(out_len):
                acc = 0.0 if b is None else b[o]
                for c in range(cin):
                    for j in range(r):
                        s = t - pad + d * j
                        if 0 <= s < length:
                            acc += w[o, c, j] * x[n, c, s]
                y[n, o, t] = acc
    return y


def naive_deconv(x, w, b, d, shift, out_len):
    """y[t] = sum_j x[t + shift - d*j] * w[j], taps restricted to 0 <= index < len(x)."""
    batch, cin, length = x.shape
    _, cout, r = w.shape
    y = np.zeros((batch, cout, out_len))
    for n in range(batch):
        for o in range(cout):
            for t in range(out_len):
                acc = 0.0 if b is None else b[o]
                for c in range(cin):
                    for j in range(r):
                        s = t + shift - d * j
                        if 0 <= s <= length - 1:
                            acc += x[n, c, s] * w[c, o, j]
                y[n, o, t] = acc
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
