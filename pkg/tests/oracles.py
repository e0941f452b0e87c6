"""Independent reference computations used as test oracles.

Everything here is deliberately written as straight-line scalar code
(plain Python loops over floats), separate from the vectorised library
implementations it checks.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch


# -- linear-chain CRF by exhaustive enumeration ------------------------------

def brute_force_scores(logits, T, b_begin, e_end):
    """Score of every label sequence, as {sequence tuple: float}."""
    logits = np.asarray(logits, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    b_begin = np.asarray(b_begin, dtype=np.float64)
    e_end = np.asarray(e_end, dtype=np.float64)
    n, L = logits.shape
    out = {}
    for seq in itertools.product(range(L), repeat=n):
        s = b_begin[seq[0]] + e_end[seq[-1]]
        for t in range(n):
            s += logits[t, seq[t]]
        for t in range(n - 1):
            s += T[seq[t], seq[t + 1]]
        out[seq] = float(s)
    return out


def brute_force_log_partition(logits, T, b_begin, e_end):
    scores = list(brute_force_scores(logits, T, b_begin, e_end).values())
    m = max(scores)
    return m + math.log(sum(math.exp(s - m) for s in scores))


def brute_force_best(logits, T, b_begin, e_end):
    """(best sequence, best score, is_unique) under exhaustive search.

    itertools.product yields sequences in lexicographic order, so the first
    maximum is also the lexicographically smallest argmax.
    """
    scores = brute_force_scores(logits, T, b_begin, e_end)
    best_seq, best = None, -math.inf
    near_ties = 0
    for seq, s in scores.items():
        if s > best:
            best_seq, best = seq, s
    for s in scores.values():
        if abs(s - best) < 1e-9:
            near_ties += 1
    return best_seq, best, near_ties == 1


# -- finite differences -------------------------------------------------------

def finite_difference_grads(loss_fn, arrays: dict[str, torch.Tensor], h: float = 1e-4):
    """Central-difference gradients of a scalar function of the given arrays."""
    grads = {}
    with torch.no_grad():
        for name, tensor in arrays.items():
            flat = tensor.view(-1)
            g = torch.zeros_like(flat)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
                g[i] = (up - down) / (2.0 * h)
            grads[name] = g.view(tensor.shape)
    return grads


def relative_group_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    a = analytic.detach().reshape(-1)
    b = numeric.detach().reshape(-1)
    denom = max(float(a.norm()), float(b.norm()), 1e-12)
    return float((a - b).norm()) / denom


# -- scalar recomputation of the sentence encoder ------------------------------

def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm(W_ih, W_hh, b, xs):
    """One LSTM direction over a list of input vectors, scalar arithmetic.

    Gate order in the stacked weight rows is input, forget, cell, output.
    Returns the list of hidden-state vectors.
    """
    W_ih = [[float(v) for v in row] for row in W_ih]
    W_hh = [[float(v) for v in row] for row in W_hh]
    b = [float(v) for v in b]
    H = len(W_hh[0])
    h = [0.0] * H
    c = [0.0] * H
    outs = []
    for x in xs:
        z = []
        for k in range(4 * H):
            acc = b[k]
            for j, xv in enumerate(x):
                acc += W_ih[k][j] * float(xv)
            for j in range(H):
                acc += W_hh[k][j] * h[j]
            z.append(acc)
        i = [_sigmoid(z[k]) for k in range(H)]
        f = [_sigmoid(z[H + k]) for k in range(H)]
        g = [math.tanh(z[2 * H + k]) for k in range(H)]
        o = [_sigmoid(z[3 * H + k]) for k in range(H)]
        c = [f[k] * c[k] + i[k] * g[k] for k in range(H)]
        h = [o[k] * math.tanh(c[k]) for k in range(H)]
        outs.append(list(h))
    return outs


def scalar_sentence_encoding(params, emb):
    """Recompute the Bi-LSTM + attention-pooled sentence vector step by step.

    ``params`` is a SentenceEncoderParams; ``emb`` an (m, d_w) array.
    """
    xs = [list(map(float, row)) for row in np.asarray(emb, dtype=np.float64)]
    fwd = scalar_lstm(params.lstm.fwd.W_ih.detach().numpy(),
                      params.lstm.fwd.W_hh.detach().numpy(),
                      params.lstm.fwd.b.detach().numpy(), xs)
    bwd_rev = scalar_lstm(params.lstm.bwd.W_ih.detach().numpy(),
                          params.lstm.bwd.W_hh.detach().numpy(),
                          params.lstm.bwd.b.detach().numpy(), xs[::-1])
    bwd = bwd_rev[::-1]
    h = [f + bk for f, bk in zip(fwd, bwd)]  # concat per token

    W = params.W.detach().numpy()
    b = params.b.detach().numpy()
    U = params.U.detach().numpy()
    d_u, d_h = W.shape
    r = U.shape[0]
    a = []
    for ht in h:
        row = []
        for u in range(d_u):
            acc = float(b[u])
            for j in range(d_h):
                acc += float(W[u][j]) * ht[j]
            row.append(math.tanh(acc))
        a.append(row)
    e = []
    for k in range(r):
        scores = []
        for at in a:
            acc = 0.0
            for u in range(d_u):
                acc += float(U[k][u]) * at[u]
            scores.append(acc)
        m = max(scores)
        exps = [math.exp(s - m) for s in scores]
        z = sum(exps)
        alpha = [v / z for v in exps]
        head = [0.0] * d_h
        for t, ht in enumerate(h):
            for j in range(d_h):
                head[j] += alpha[t] * ht[j]
        e.extend(head)
    return np.array(e)
