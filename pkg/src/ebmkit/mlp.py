"""Fully connected tanh networks with hand-written reverse-mode gradients.

Parameters live in one flat vector ordered ``W1, b1, W2, b2, ...`` with
``W_l`` of shape ``(out, in)``.  Batches are ``(n, in)``.
"""
from __future__ import annotations

import numpy as np

from .core import RngStream

__all__ = ["MLP"]


class MLP:
    """Shape bookkeeping and forward/backward passes for a tanh MLP.

    The object holds no parameters; every method takes ``theta``.
    """

    def __init__(self, sizes):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        self.sizes = sizes
        self._shapes = []
        offset = 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            w = (offset, offset + n_out * n_in, (n_out, n_in))
            offset += n_out * n_in
            b = (offset, offset + n_out, (n_out,))
            offset += n_out
            self._shapes.append((w, b))
        self.n_params = offset

    @property
    def n_layers(self):
        return len(self._shapes)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        out = []
        for (wa, wb, ws), (ba, bb, bs) in self._shapes:
            out.append((theta[wa:wb].reshape(ws), theta[ba:bb]))
        return out

    def init(self, stream: RngStream, scale=1.0, zero_last=False):
        """Glorot-style normal initialization."""
        theta = np.zeros(self.n_params)
        for i, ((wa, wb, (n_out, n_in)), _) in enumerate(self._shapes):
            if zero_last and i == self.n_layers - 1:
                continue
            std = scale * np.sqrt(2.0 / (n_in + n_out))
            theta[wa:wb] = std * stream.normal(n_out * n_in)
        return theta

    def forward(self, theta, x):
        """Return the output and the list of hidden activations (the cache)."""
        layers = self.unpack(theta)
        acts = [x]
        h = x
        for i, (W, b) in enumerate(layers):
            a = h @ W.T + b
            h = a if i == len(layers) - 1 else np.tanh(a)
            acts.append(h)
        return h, acts

    def backward(self, theta, acts, g_out, per_sample=False):
        """Pull back ``g_out`` (shape of the output) to parameters and input.

        Returns ``(g_theta, g_x)``; ``g_theta`` is summed over the batch unless
        ``per_sample`` is set, in which case it has shape ``(n, p)``.
        """
        layers = self.unpack(theta)
        n = g_out.shape[0]
        g_theta = np.zeros((n, self.n_params)) if per_sample else np.zeros(self.n_params)
        g = g_out
        for i in range(self.n_layers - 1, -1, -1):
            W, _ = layers[i]
            (wa, wb, _), (ba, bb, _) = self._shapes[i]
            if i < self.n_layers - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            h_in = acts[i]
            if per_sample:
                g_theta[:, wa:wb] = (g[:, :, None] * h_in[:, None, :]).reshape(n, -1)
                g_theta[:, ba:bb] = g
            else:
                g_theta[wa:wb] = (g.T @ h_in).ravel()
                g_theta[ba:bb] = g.sum(axis=0)
            g = g @ W
        return g_theta, g

    def jacobian_trace(self, theta, x, with_grad=False):
        """Trace of the input Jacobian for square nets, by forward tangents.

        One tangent pass per input coordinate.  With ``with_grad`` the
        parameter gradient of the batch-summed trace is returned as well,
        obtained by reverse accumulation through the tangent passes.
        """
        if self.sizes[0] != self.sizes[-1]:
            raise ValueError("jacobian_trace needs equal input and output width")
        layers = self.unpack(theta)
        _, acts = self.forward(theta, x)
        n, d = x.shape
        L = self.n_layers
        trace = np.zeros(n)
        g_theta = np.zeros(self.n_params)
        for k in range(d):
            # forward tangent along e_k
            tang = [None] * (L + 1)
            pre_tang = [None] * L
            t = np.zeros((n, d))
            t[:, k] = 1.0
            tang[0] = t
            for i, (W, _) in enumerate(layers):
                pt = tang[i] @ W.T
                pre_tang[i] = pt
                tang[i + 1] = pt if i == L - 1 else (1.0 - acts[i + 1] ** 2) * pt
            trace += tang[L][:, k]
            if not with_grad:
                continue
            # reverse pass through both the tangent and the primal chains
            g_t = np.zeros((n, d))
            g_t[:, k] = 1.0
            g_h = np.zeros_like(acts[L])
            for i in range(L - 1, -1, -1):
                W, _ = layers[i]
                (wa, wb, _), (ba, bb, _) = self._shapes[i]
                if i < L - 1:
                    h = acts[i + 1]
                    deriv = 1.0 - h**2
                    g_pt = g_t * deriv
                    g_h = g_h + g_t * pre_tang[i] * (-2.0 * h)
                    g_a = g_h * deriv
                else:
                    g_pt = g_t
                    g_a = g_h
                g_theta[wa:wb] += (g_pt.T @ tang[i] + g_a.T @ acts[i]).ravel()
                g_theta[ba:bb] += g_a.sum(axis=0)
                g_t = g_pt @ W
                g_h = g_a @ W
        if with_grad:
            return trace, g_theta
        return trace
