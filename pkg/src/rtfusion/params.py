"""Named parameter storage and the small conv / norm layer helpers built on it."""

import numpy as np

from rtfusion import tensor as T


class ParamStore:
    """Ordered name -> leaf Tensor mapping; the unit of checkpointing and optimization."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = {}

    @classmethod
    def wrap(cls, named_tensors, dtype):
        """Store over existing Tensors (no copies); lets gradchecks differentiate w.r.t. given leaves."""
        p = cls(dtype)
        p._params = dict(named_tensors)
        return p

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        t = T.Tensor(np.array(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def sub(self, prefix):
        return ParamView(self, prefix)

    def num_params(self, prefix=""):
        return int(sum(t.data.size for n, t in self._params.items() if n.startswith(prefix)))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state(self):
        return {n: t.data for n, t in self._params.items()}

    def load_state(self, state):
        missing = set(self._params) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)[:5]}")
        for n, t in self._params.items():
            arr = np.asarray(state[n])
            if arr.shape != t.shape:
                raise ValueError(f"parameter {n!r}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(self.dtype, copy=True)

    def astype(self, dtype):
        out = ParamStore(dtype)
        for n, t in self._params.items():
            out.add(n, t.data)
        return out

    def copy(self):
        return self.astype(self.dtype)


class ParamView:
    """Prefix-scoped window onto a ParamStore."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix
        self.dtype = store.dtype

    def add(self, name, value):
        return self.store.add(self.prefix + name, value)

    def __getitem__(self, name):
        return self.store[self.prefix + name]

    def __contains__(self, name):
        return (self.prefix + name) in self.store

    def sub(self, prefix):
        return ParamView(self.store, self.prefix + prefix)

    def names(self):
        return [n[len(self.prefix):] for n in self.store.names() if n.startswith(self.prefix)]

    def num_params(self):
        return self.store.num_params(self.prefix)


def trunc_normal(rng, shape, std=0.02, bound=2.0):
    """Gaussian samples with everything beyond ``bound`` sigmas redrawn."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out * std


def init_conv(p, name, cin, cout, k, rng, groups=1, bias=True):
    p.add(f"{name}.weight", trunc_normal(rng, (cout, cin // groups, k, k)))
    if bias:
        p.add(f"{name}.bias", np.zeros(cout))


def conv(p, name, x, stride=1, padding=0, groups=1):
    b = p[f"{name}.bias"] if f"{name}.bias" in p else None
    return T.conv2d(x, p[f"{name}.weight"], b, stride=stride, padding=padding, groups=groups)


def conv_params(cin, cout, k, groups=1, bias=True):
    return cout * (cin // groups) * k * k + (cout if bias else 0)


def init_norm(p, name, c):
    p.add(f"{name}.weight", np.ones(c))
    p.add(f"{name}.bias", np.zeros(c))


def norm(p, name, x, eps=1e-6):
    return T.layer_norm(x, p[f"{name}.weight"], p[f"{name}.bias"], eps=eps)
