"""Layer building blocks over the autodiff core.

Weights are drawn from N(0, 0.02) (normalization gains from N(1, 0.02)),
biases start at zero; construction order is fixed, so a model built twice
from the same seed is bit-identical.
"""

from __future__ import annotations

import numpy as np

from semedit.nn import tensor as T
from semedit.nn.tensor import Tensor

WEIGHT_STD = 0.02


class Module:
    """Lightweight container tracking parameters and submodules by attribute name."""

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self.__dict__.setdefault("_params", {})[name] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[name] = value
        object.__setattr__(self, name, value)

    def named_params(self, prefix=""):
        for name, p in self.__dict__.get("_params", {}).items():
            yield prefix + name, p
        for name, child in self.__dict__.get("_children", {}).items():
            yield from child.named_params(prefix + name + ".")

    def params(self):
        return dict(self.named_params())

    def zero_grad(self):
        for _, p in self.named_params():
            p.grad = None

    def to_dtype(self, dtype):
        for _, p in self.named_params():
            p.data = p.data.astype(dtype)
        return self

    def set_requires_grad(self, flag: bool):
        for _, p in self.named_params():
            p.requires_grad = flag
        return self

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        """Copy named arrays into parameters; names and shapes must match exactly."""
        params = self.params()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise KeyError(f"parameter name mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.data.shape):
                raise ValueError(
                    f"shape mismatch for '{name}': checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr.astype(p.data.dtype)
        return self


class ModuleList(Module):
    def __init__(self, mods):
        self.items = list(mods)
        for i, m in enumerate(mods):
            setattr(self, str(i), m)

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


def _weight(rng, shape, dtype):
    return Tensor(rng.normal(0.0, WEIGHT_STD, size=shape).astype(dtype), requires_grad=True)


def same_pad(k: int):
    """Asymmetric zero padding keeping spatial size under stride 1 (even k pads more on the far side)."""
    lo = (k - 1) // 2
    return (lo, k - 1 - lo, lo, k - 1 - lo)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride, pad, rng, dtype, bias=True):
        self.stride = stride
        self.pad = pad
        self.w = _weight(rng, (k, k, cin, cout), dtype)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride, rng, dtype, bias=True):
        # pad/out_pad chosen so the output is exactly stride * input size
        self.stride = stride
        self.pad = (k - 1) // 2
        self.out_pad = stride - 1 if k % 2 else 0
        self.w = _weight(rng, (k, k, cout, cin), dtype)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x):
        return T.conv_transpose2d(x, self.w, self.b, stride=self.stride,
                                  pad=self.pad, out_pad=self.out_pad)


class InstanceNorm2d(Module):
    def __init__(self, c, rng, dtype):
        self.gamma = Tensor((1.0 + rng.normal(0.0, WEIGHT_STD, size=c)).astype(dtype),
                            requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return T.instance_norm(x, self.gamma, self.beta)


class ConvBlock(Module):
    """Conv + instance norm + ReLU, stride 2 downsampling or stride 1."""

    def __init__(self, cin, cout, k, stride, rng, dtype):
        pad = (k - 1) // 2 if stride > 1 else same_pad(k)
        self.conv = Conv2d(cin, cout, k, stride, pad, rng, dtype)
        self.norm = InstanceNorm2d(cout, rng, dtype)

    def __call__(self, x):
        return T.relu(self.norm(self.conv(x)))


class UpBlock(Module):
    """Transposed conv (x2 upsampling) + instance norm + ReLU."""

    def __init__(self, cin, cout, k, rng, dtype):
        self.conv = ConvTranspose2d(cin, cout, k, 2, rng, dtype)
        self.norm = InstanceNorm2d(cout, rng, dtype)

    def __call__(self, x):
        return T.relu(self.norm(self.conv(x)))


class ResBlock(Module):
    """Two same-size convs with instance norm; identity skip, projection on width change."""

    def __init__(self, cin, cout, k, rng, dtype):
        self.conv1 = Conv2d(cin, cout, k, 1, same_pad(k), rng, dtype)
        self.norm1 = InstanceNorm2d(cout, rng, dtype)
        self.conv2 = Conv2d(cout, cout, k, 1, same_pad(k), rng, dtype)
        self.norm2 = InstanceNorm2d(cout, rng, dtype)
        self.proj = Conv2d(cin, cout, 1, 1, 0, rng, dtype, bias=False) if cin != cout else None

    def __call__(self, x):
        h = T.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        skip = self.proj(x) if self.proj is not None else x
        return T.relu(h + skip)


class Adam:
    """Adam with bias correction; lr is supplied per step (schedules live outside)."""

    def __init__(self, params: dict[str, Tensor], beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * (p.grad * p.grad)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
