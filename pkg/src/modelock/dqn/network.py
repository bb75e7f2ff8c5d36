"""Q-network with hand-written forward and backward passes.

The observation is split into a multi-channel field block, processed by
alternating 1-D convolutions and max-pooling, and a short vector of extra
entries (the control angles) that is appended after flattening. Fully
connected leaky-ReLU layers then map to one value per action.

All parameters live in one flat float64 vector so that optimizer steps,
soft target updates and checkpointing act on a single array; each layer
holds reshaped views into it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class NetSpec:
    """Architecture description.

    ``field_channels = 0`` gives a plain fully connected network on the
    ``n_extra`` inputs.
    """

    field_channels: int
    field_len: int
    n_extra: int
    n_actions: int
    conv: tuple[tuple[int, int], ...] = ((8, 5), (16, 5))  # (out_channels, kernel)
    pool: int = 2
    fc: tuple[int, ...] = (256, 128)
    slope: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(x) for x in c) for c in self.conv))
        object.__setattr__(self, "fc", tuple(int(x) for x in self.fc))
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        if self.field_channels == 0 and self.n_extra < 1:
            raise ValueError("network has no inputs")
        if self.field_channels > 0 and self.conv_out_len() < 1:
            raise ValueError("field block too short for the convolution stack")

    @property
    def obs_len(self) -> int:
        return self.field_channels * self.field_len + self.n_extra

    def conv_out_len(self) -> int:
        L = self.field_len
        for _, k in self.conv:
            L = (L - k + 1) // self.pool
        return L

    def flat_len(self) -> int:
        if self.field_channels == 0:
            return self.n_extra
        ch = self.conv[-1][0] if self.conv else self.field_channels
        return ch * self.conv_out_len() + self.n_extra

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(c) for c in self.conv]
        d["fc"] = list(self.fc)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        d = dict(d)
        d["conv"] = tuple(tuple(c) for c in d["conv"])
        d["fc"] = tuple(d["fc"])
        return cls(**d)


class Conv1D:
    """Valid-padding 1-D convolution, input (batch, c_in, L)."""

    def __init__(self, c_in: int, c_out: int, k: int):
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.shapes = [(c_out, c_in, k), (c_out,)]
        self.fan_in = c_in * k

    def bind(self, W, b):
        self.W, self.b = W, b

    def forward(self, x):
        B, C, L = x.shape
        Lo = L - self.k + 1
        cols = sliding_window_view(x, self.k, axis=2)  # (B, C, Lo, k)
        cols = cols.transpose(0, 2, 1, 3).reshape(B, Lo, C * self.k)
        y = cols @ self.W.reshape(self.c_out, -1).T + self.b
        return y.transpose(0, 2, 1), (cols, L)

    def backward(self, dy, cache):
        cols, L = cache
        B, _, Lo = dy.shape
        dyt = dy.transpose(0, 2, 1)  # (B, Lo, c_out)
        dW = (dyt.reshape(-1, self.c_out).T @ cols.reshape(-1, cols.shape[-1]))
        db = dy.sum(axis=(0, 2))
        dcols = (dyt @ self.W.reshape(self.c_out, -1)).reshape(B, Lo, self.c_in, self.k)
        dx = np.zeros((B, self.c_in, L))
        for j in range(self.k):
            dx[:, :, j:j + Lo] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dx, [dW.reshape(self.W.shape), db]


class MaxPool1D:
    """Non-overlapping max pooling; a trailing remainder is dropped."""

    shapes: list = []

    def __init__(self, size: int):
        self.size = size

    def bind(self):
        pass

    def forward(self, x):
        B, C, L = x.shape
        Lo = L // self.size
        xr = x[:, :, :Lo * self.size].reshape(B, C, Lo, self.size)
        if self.size == 2:
            second = xr[..., 1] > xr[..., 0]
            return np.where(second, xr[..., 1], xr[..., 0]), (second, L)
        idx = xr.argmax(axis=3)
        y = np.take_along_axis(xr, idx[..., None], axis=3)[..., 0]
        return y, (idx, L)

    def backward(self, dy, cache):
        idx, L = cache
        B, C, Lo = dy.shape
        if self.size == 2:
            g = np.stack([np.where(idx, 0.0, dy), np.where(idx, dy, 0.0)], axis=3)
        else:
            g = np.zeros((B, C, Lo, self.size))
            np.put_along_axis(g, idx[..., None], dy[..., None], axis=3)
        dx = np.zeros((B, C, L))
        dx[:, :, :Lo * self.size] = g.reshape(B, C, Lo * self.size)
        return dx, []


class LeakyReLU:
    shapes: list = []

    def __init__(self, slope: float):
        self.slope = slope

    def bind(self):
        pass

    def forward(self, x):
        gain = np.where(x > 0, 1.0, self.slope)
        return x * gain, gain

    def backward(self, dy, gain):
        return dy * gain, []


class Linear:
    """``y = x @ W + b`` with ``W`` of shape (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int):
        self.shapes = [(n_in, n_out), (n_out,)]
        self.fan_in = n_in

    def bind(self, W, b):
        self.W, self.b = W, b

    def forward(self, x):
        return x @ self.W + self.b, x

    def backward(self, dy, x):
        return dy @ self.W.T, [x.T @ dy, dy.sum(axis=0)]


class QNetwork:
    """Maps observations (batch, obs_len) to action values (batch, n_actions)."""

    def __init__(self, spec: NetSpec, params: np.ndarray | None = None):
        self.spec = spec
        self.conv_layers: list = []
        ch = spec.field_channels
        if ch:
            for c_out, k in spec.conv:
                self.conv_layers += [Conv1D(ch, c_out, k), LeakyReLU(spec.slope), MaxPool1D(spec.pool)]
                ch = c_out
        self.fc_layers: list = []
        n_in = spec.flat_len()
        for width in spec.fc:
            self.fc_layers += [Linear(n_in, width), LeakyReLU(spec.slope)]
            n_in = width
        self.fc_layers.append(Linear(n_in, spec.n_actions))
        self.layers = self.conv_layers + self.fc_layers
        self.shapes = [s for layer in self.layers for s in layer.shapes]
        self.size = int(sum(np.prod(s) for s in self.shapes))
        if params is None:
            params = np.zeros(self.size)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {params.shape}")
        self.params = params
        self._bind()

    def _bind(self):
        off = 0
        for layer in self.layers:
            views = []
            for s in layer.shapes:
                n = int(np.prod(s))
                views.append(self.params[off:off + n].reshape(s))
                off += n
            layer.bind(*views)

    @classmethod
    def initialize(cls, spec: NetSpec, rng: np.random.Generator) -> "QNetwork":
        """He-uniform weights, zero biases."""
        net = cls(spec)
        for layer in net.layers:
            if isinstance(layer, (Conv1D, Linear)):
                bound = np.sqrt(6.0 / layer.fan_in)
                layer.W[...] = rng.uniform(-bound, bound, layer.W.shape)
        return net

    def copy(self) -> "QNetwork":
        return QNetwork(self.spec, self.params.copy())

    def set_params(self, params: np.ndarray) -> None:
        self.params[...] = params

    @property
    def obs_len(self) -> int:
        return self.spec.obs_len

    @property
    def n_actions(self) -> int:
        return self.spec.n_actions

    def _split(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != self.obs_len:
            raise ValueError(f"observation length {obs.shape[-1]} does not match "
                             f"network input length {self.obs_len}")
        s = self.spec
        nf = s.field_channels * s.field_len
        if nf == 0:
            return None, obs
        return obs[:, :nf].reshape(-1, s.field_channels, s.field_len), obs[:, nf:]

    def forward_batch(self, obs, keep_cache: bool = False):
        x, extra = self._split(obs)
        caches = []
        if self.conv_layers:
            for layer in self.conv_layers:
                x, c = layer.forward(x)
                caches.append(c)
            conv_shape = x.shape
            x = np.concatenate([x.reshape(x.shape[0], -1), extra], axis=1)
        else:
            conv_shape = None
            x = extra
        for layer in self.fc_layers:
            x, c = layer.forward(x)
            caches.append(c)
        if keep_cache:
            return x, (caches, conv_shape)
        return x

    def backward_batch(self, dq, cache) -> np.ndarray:
        """Flat parameter gradient for upstream gradient ``dq`` on the outputs."""
        caches, conv_shape = cache
        grads: list = [None] * len(self.layers)
        dx = dq
        nconv = len(self.conv_layers)
        for i in range(len(self.layers) - 1, nconv - 1, -1):
            dx, grads[i] = self.layers[i].backward(dx, caches[i])
        if nconv:
            nflat = int(np.prod(conv_shape[1:]))
            dx = dx[:, :nflat].reshape(conv_shape)
            for i in range(nconv - 1, -1, -1):
                dx, grads[i] = self.layers[i].backward(dx, caches[i])
        return np.concatenate([g.ravel() for gl in grads for g in gl])


def forward(net: QNetwork, obs) -> np.ndarray:
    """Action values for one observation (1-D) or a batch (2-D)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 1:
        return net.forward_batch(obs[None])[0]
    return net.forward_batch(obs)


def loss_and_grad(net: QNetwork, obs, actions, targets, return_q: bool = False):
    """Mean squared error between targets and Q(s, a) over a batch.

    Returns ``(loss, grad)``, plus the batch Q-values when ``return_q``.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    if np.any(actions < 0) or np.any(actions >= net.n_actions):
        raise ValueError("action index out of range")
    q, cache = net.forward_batch(obs, keep_cache=True)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    B = len(actions)
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / B
    grad = net.backward_batch(dq, cache)
    if return_q:
        return float(np.mean(err * err)), grad, q
    return float(np.mean(err * err)), grad


def backward(net: QNetwork, obs, action: int, target: float) -> tuple[np.ndarray, float]:
    """Gradient of ``(target - Q(obs, action))**2`` and the loss value."""
    loss, g = loss_and_grad(net, np.asarray(obs)[None], [action], [target])
    return g, loss
