"""Adam with optional global grad-norm clipping."""

import math

import numpy as np

from rtfusion.tensor import kernels as _k


class NumericalError(RuntimeError):
    """A loss or gradient went non-finite."""


class Adam:
    """Adam over a whole ParamStore.

    Moments live in two flat buffers covering every parameter in store order;
    the update runs as one fused kernel over the concatenated parameters.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, grad_clip=5.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self._layout = []
        off = 0
        for n, t in params.items():
            self._layout.append((n, off, t.data.shape))
            off += t.data.size
        self._size = off
        self.m_flat = np.zeros(off, dtype=params.dtype)
        self.v_flat = np.zeros(off, dtype=params.dtype)

    def _view(self, flat, off, shape):
        return flat[off : off + int(np.prod(shape, dtype=np.int64))].reshape(shape)

    @property
    def m(self):
        return {n: self._view(self.m_flat, off, shape) for n, off, shape in self._layout}

    @property
    def v(self):
        return {n: self._view(self.v_flat, off, shape) for n, off, shape in self._layout}

    def flat_grad(self):
        """Concatenated gradients; parameters without a grad contribute zeros."""
        out = np.zeros(self._size, dtype=self.params.dtype)
        for n, off, shape in self._layout:
            g = self.params[n].grad
            if g is not None:
                out[off : off + g.size] = g.ravel()
        return out

    def grad_norm(self, flat=None):
        g = (self.flat_grad() if flat is None else flat).astype(np.float64)
        return math.sqrt(float(np.dot(g, g)))

    def step(self):
        """One update from the ``.grad`` fields; parameters without a grad count as zero-grad."""
        g = self.flat_grad()
        if self.grad_clip:
            norm = self.grad_norm(g)
            if not math.isfinite(norm):
                raise NumericalError("gradient norm is not finite")
            if norm > self.grad_clip:
                g *= g.dtype.type(self.grad_clip / norm)
        self.step_count += 1
        t = self.step_count
        flat = np.concatenate([self.params[n].data.ravel() for n, _, _ in self._layout]) if self._layout else g[:0].copy()
        # scalars in the parameter dtype keep the fused update in single precision for f32 runs
        c = flat.dtype.type
        _k.KERNELS.adam(
            flat, g, self.m_flat, self.v_flat,
            c(self.lr), c(self.beta1), c(self.beta2),
            c(1.0 - self.beta1**t), c(1.0 - self.beta2**t), c(self.eps),
        )
        # fresh views each step, so arrays captured by an earlier graph stay untouched
        for n, off, shape in self._layout:
            self.params[n].data = self._view(flat, off, shape)

    def state(self):
        out = {}
        for n, off, shape in self._layout:
            out[f"m.{n}"] = self._view(self.m_flat, off, shape).copy()
            out[f"v.{n}"] = self._view(self.v_flat, off, shape).copy()
        return out

    def load_state(self, state, step_count):
        for n, off, shape in self._layout:
            for key, flat in ((f"m.{n}", self.m_flat), (f"v.{n}", self.v_flat)):
                arr = np.asarray(state[key])
                if arr.shape != shape:
                    raise ValueError(f"optimizer state {key} has shape {arr.shape}, expected {shape}")
                self._view(flat, off, shape)[...] = arr
        self.step_count = int(step_count)
