"""Blocked attention kernels.

The double-softmax attention used by the encoder is evaluated in blocks of
query rows so that no full ``heads x n x n`` intermediate is materialized.
The backward pass recomputes the attention weights block by block instead of
caching them; memory stays linear in the token count.

Elementwise passes over a block dominate the cost, so the kernels keep them
to a minimum: block buffers are allocated once per call, exponentials skip
the max-shift whenever the arguments are provably small, and the softmax
backward sums are rewritten as matrix products.
"""

import numpy as np

ROW_BLOCK = 16
# exp arguments below this bound cannot overflow a row sum of any sane length
EXP_SAFE = 300.0


def _score_bound(qs, k):
    """Upper bound on ``|qs_i . k_j|`` per batch and head, shape (B, H)."""
    return (np.abs(qs).max(axis=2) * np.abs(k).max(axis=2)).sum(axis=-1)


class _Workspace:
    def __init__(self, H, n, n_buffers):
        self.bufs = [np.empty((H, ROW_BLOCK, n)) for _ in range(n_buffers)]

    def view(self, i, r):
        return self.bufs[i][:, :r]


def _exp_rows(s, shift):
    """In place ``exp`` of ``s``; returns the row sums (H, r, 1)."""
    if shift:
        s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    return s.sum(axis=-1, keepdims=True)


def _block_weights(qb, kt, Pb, shift_a, shift_e, a, z, e, normalize_e):
    """Fill the inner weights ``a`` and the outer weights ``e`` for one block.

    ``qb`` is (H, r, dh) and already scaled, ``kt`` is (H, dh, n), ``Pb`` is
    (r, n) or None for plain attention, in which case ``a`` doubles as ``e``.
    ``z`` receives ``a * Pb``. Returns ``(a, e, row sums of e)``; when
    ``normalize_e`` is off ``e`` is left unnormalized.
    """
    if qb.shape[-1] == 1:
        np.multiply(qb, kt, out=a)  # outer product; faster than matmul
    else:
        np.matmul(qb, kt, out=a)
    za = _exp_rows(a, shift_a)
    if Pb is None:
        if normalize_e:
            a /= za
        return a, a, za
    a /= za
    np.multiply(a, Pb, out=z)
    np.copyto(e, z)
    ze = _exp_rows(e, shift_e)
    if normalize_e:
        e /= ze
    return a, e, ze


def attention_forward(q, k, v, P, scale, use_prior=True, want_received=True):
    """Evaluate ``softmax(softmax(q k^T * scale) * P) v`` per batch and head.

    Parameters
    ----------
    q, k : ndarray, shape (B, H, n, dh)
    v : ndarray, shape (B, H, n, dv)
    P : ndarray, shape (B, n, n) or None
        Non-negative prior score matrix; ignored when ``use_prior`` is False.
    scale : float
        Multiplier applied to the raw scores, normally ``1 / sqrt(dh)``.
    use_prior : bool
        When False the outer softmax is skipped (vanilla attention).
    want_received : bool
        Whether to accumulate the received-attention map.

    Returns
    -------
    out : ndarray, shape (B, H, n, dv)
    received : ndarray, shape (B, n), or None
        Column mean of the final attention weights over heads and query rows,
        i.e. how much attention each token receives on average.
    """
    B, H, n, _ = q.shape
    out = np.empty(v.shape)
    received = np.zeros((B, n)) if want_received else None
    qs = q * scale
    shift_a = _score_bound(qs, k) > EXP_SAFE
    ws = _Workspace(H, n, 3 if use_prior else 1)
    for b in range(B):
        kt = k[b].transpose(0, 2, 1)
        shift_e = use_prior and (P[b].min() < 0 or P[b].max() > EXP_SAFE)
        for i0 in range(0, n, ROW_BLOCK):
            rows = slice(i0, min(i0 + ROW_BLOCK, n))
            r = rows.stop - i0
            Pb = P[b, rows] if use_prior else None
            bufs = [ws.view(0, r), *(ws.view(i, r) for i in (1, 2))] if use_prior else [ws.view(0, r)] * 3
            _, e, ze = _block_weights(qs[b, :, rows], kt, Pb, shift_a[b].any(), shift_e, *bufs, False)
            inv = 1.0 / ze
            out[b, :, rows] = np.matmul(e, v[b]) * inv
            if want_received:
                received[b] += np.matmul(inv.transpose(0, 2, 1), e).sum(axis=(0, 1))
    if want_received:
        received /= H * n
    return out, received


def attention_backward(q, k, v, P, scale, use_prior, g):
    """Gradients of ``attention_forward`` output w.r.t. ``q``, ``k`` and ``v``.

    ``g`` is the upstream gradient, same shape as the forward output. ``P`` is
    treated as a constant.

    With ``dE = g v^T`` the outer softmax gives ``dZ = e * (dE - c)`` where
    ``c_i = sum_j e_ij dE_ij = g_i . out_i``. Writing ``X = a * dA`` for the
    inner softmax input gradient ``dA`` (``dZ * P`` with the prior, ``dE``
    without), the score gradient is ``X - a * rowsum(X)``, whose products
    with ``k`` and ``q`` only need ``X`` and ``a`` themselves.
    """
    B, H, n, _ = q.shape
    dq = np.empty_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    qs = q * scale
    shift_a = _score_bound(qs, k) > EXP_SAFE
    ws = _Workspace(H, n, 4)
    for b in range(B):
        kb = k[b]
        kt = kb.transpose(0, 2, 1)
        vt = v[b].transpose(0, 2, 1)
        shift_e = use_prior and (P[b].min() < 0 or P[b].max() > EXP_SAFE)
        for i0 in range(0, n, ROW_BLOCK):
            rows = slice(i0, min(i0 + ROW_BLOCK, n))
            r = rows.stop - i0
            Pb = P[b, rows] if use_prior else None
            qb = qs[b, :, rows]
            gb = g[b, :, rows]
            a, z, e, X = (ws.view(i, r) for i in range(4))
            a, e, _ = _block_weights(qb, kt, Pb, shift_a[b].any(), shift_e, a, z, e, True)
            dv[b] += np.matmul(e.transpose(0, 2, 1), gb)
            if v.shape[-1] == 1:
                np.multiply(gb, vt, out=X)
            else:
                np.matmul(gb, vt, out=X)
            if use_prior:
                c = (gb * np.matmul(e, v[b])).sum(axis=-1, keepdims=True)
                X -= c
                X *= e
                X *= z  # z = a * P, folds the inner softmax's leading factor
            else:
                X *= a
            c1 = X.sum(axis=-1, keepdims=True)
            # qb is pre-scaled, so dk needs no extra factor
            dq[b, :, rows] = (np.matmul(X, kb) - c1 * np.matmul(a, kb)) * scale
            dk[b] += np.matmul(X.transpose(0, 2, 1), qb) - np.matmul(a.transpose(0, 2, 1), c1 * qb)
    return dq, dk, dv
