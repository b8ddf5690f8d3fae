import numpy as np

from drlr import nn


def fd_grad(loss_fn, params, h=1e-5):
    """Central finite differences of scalar loss_fn(MlpParams) over all params."""
    flat = nn.flatten_params(params)
    g = np.zeros_like(flat)
    for i in range(flat.size):
        up = flat.copy(); up[i] += h
        dn = flat.copy(); dn[i] -= h
        g[i] = (loss_fn(nn.set_flat_params(params, up))
                - loss_fn(nn.set_flat_params(params, dn))) / (2 * h)
    return g


def rel_err(analytic, numeric, idx=None):
    a, b = np.asarray(analytic), np.asarray(numeric)
    if idx is not None:
        a, b = a[idx], b[idx]
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-6)))
