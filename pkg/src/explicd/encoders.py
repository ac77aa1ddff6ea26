"""Token encoders with explicit backward passes.

Each encoder maps an embedded document ``E`` of shape ``(n_tokens, d)`` to
hidden states ``T`` of shape ``(n_tokens, d_out)``. ``*_forward`` returns the
states and a cache; ``*_backward`` takes ``dL/dT`` and the cache and returns
``dL/dE`` plus a dict of parameter gradients keyed like the parameters.
"""

import numpy as np


def conv_param_shapes(d, d_out, width):
    return {"conv_W": (width * d, d_out), "conv_b": (d_out,)}


def rnn_param_shapes(d, d_out):
    h = d_out // 2
    return {"rnn_Wf": (d, h), "rnn_Uf": (h, h), "rnn_bf": (h,),
            "rnn_Wb": (d, h), "rnn_Ub": (h, h), "rnn_bb": (h,)}


def _windows(E, width):
    n, d = E.shape
    left = (width - 1) // 2
    P = np.zeros((n + width - 1, d))
    P[left:left + n] = E
    return np.hstack([P[k:k + n] for k in range(width)])


def conv_forward(p, E, width):
    """Same-length 1-d convolution followed by tanh."""
    cols = _windows(E, width)
    T = np.tanh(cols @ p["conv_W"] + p["conv_b"])
    return T, (cols, T, E.shape)


def conv_backward(p, dT, cache, width):
    cols, T, (n, d) = cache
    dpre = dT * (1.0 - T * T)
    grads = {"conv_W": cols.T @ dpre, "conv_b": dpre.sum(axis=0)}
    dcols = dpre @ p["conv_W"].T
    left = (width - 1) // 2
    dP = np.zeros((n + width - 1, d))
    for k in range(width):
        dP[k:k + n] += dcols[:, k * d:(k + 1) * d]
    return dP[left:left + n], grads


def _rnn_scan(X, U, reverse):
    n, h = X.shape
    H = np.zeros((n, h))
    prev = np.zeros(h)
    steps = range(n - 1, -1, -1) if reverse else range(n)
    for j in steps:
        prev = np.tanh(X[j] + prev @ U)
        H[j] = prev
    return H


def _rnn_scan_backward(dH, H, U, reverse):
    n, h = H.shape
    dX = np.zeros((n, h))
    dU = np.zeros_like(U)
    carry = np.zeros(h)
    steps = range(n) if reverse else range(n - 1, -1, -1)
    for j in steps:
        dpre = (dH[j] + carry) * (1.0 - H[j] * H[j])
        dX[j] = dpre
        k = j + 1 if reverse else j - 1
        if 0 <= k < n:
            dU += np.outer(H[k], dpre)
        carry = dpre @ U.T
    return dX, dU


def rnn_forward(p, E):
    """Bidirectional tanh recurrence; outputs ``[forward, backward]`` states."""
    Xf = E @ p["rnn_Wf"] + p["rnn_bf"]
    Xb = E @ p["rnn_Wb"] + p["rnn_bb"]
    Hf = _rnn_scan(Xf, p["rnn_Uf"], reverse=False)
    Hb = _rnn_scan(Xb, p["rnn_Ub"], reverse=True)
    return np.hstack([Hf, Hb]), (E, Hf, Hb)


def rnn_backward(p, dT, cache):
    E, Hf, Hb = cache
    h = Hf.shape[1]
    dXf, dUf = _rnn_scan_backward(dT[:, :h], Hf, p["rnn_Uf"], reverse=False)
    dXb, dUb = _rnn_scan_backward(dT[:, h:], Hb, p["rnn_Ub"], reverse=True)
    grads = {"rnn_Wf": E.T @ dXf, "rnn_Uf": dUf, "rnn_bf": dXf.sum(axis=0),
             "rnn_Wb": E.T @ dXb, "rnn_Ub": dUb, "rnn_bb": dXb.sum(axis=0)}
    dE = dXf @ p["rnn_Wf"].T + dXb @ p["rnn_Wb"].T
    return dE, grads


def encode(variant, p, E, width):
    if variant == "conv":
        return conv_forward(p, E, width)
    if variant == "recur":
        return rnn_forward(p, E)
    raise ValueError(f"unknown encoder variant {variant!r}")


def encode_backward(variant, p, dT, cache, width):
    if variant == "conv":
        return conv_backward(p, dT, cache, width)
    return rnn_backward(p, dT, cache)


def encoder_shapes(variant, d, d_out, width):
    if variant == "conv":
        return conv_param_shapes(d, d_out, width)
    if variant == "recur":
        return rnn_param_shapes(d, d_out)
    raise ValueError(f"unknown encoder variant {variant!r}")
