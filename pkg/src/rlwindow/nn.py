"""Minimal feed-forward Q-network machinery with explicit gradients.

Layers store their parameters and gradients as plain numpy arrays; backward
passes are hand-derived and verified against central finite differences by
:func:`grad_check`. No autograd, no framework.

All parameters (and gradients) live as views into one flat buffer per
network, so the optimizer updates every weight with a handful of vector ops.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # running = (1 - momentum) * running + momentum * batch


def lr_schedule(t: int, base: float = 1e-3, floor: float = 1e-4, decay_steps: int = 50_000) -> float:
    """Linear decay from ``base`` to ``floor`` over ``decay_steps``, then flat.

    The endpoints are returned exactly (no float drift at t=0 or t>=decay).
    """
    if t <= 0:
        return base
    if t >= decay_steps:
        return floor
    return base - (base - floor) * t / decay_steps


class Dense:
    """Fully connected layer, weights uniform in +-1/sqrt(fan_in)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        bound = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)
        self.b = rng.uniform(-bound, bound, size=n_out).astype(dtype)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)
        self._x = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        self._x = x if train else None
        return x @ self.W + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called without a matching train-mode forward")
        np.matmul(self._x.T, dy, out=self.dW)
        np.sum(dy, axis=0, out=self.db)
        return dy @ self.W.T

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def _rebind(self, name: str, array: np.ndarray) -> None:
        setattr(self, name, array)
        setattr(self, "d" + name, np.zeros_like(array))


def _scaled_noise(rng: np.random.Generator, n: int, dtype) -> np.ndarray:
    eps = rng.standard_normal(n)
    return (np.sign(eps) * np.sqrt(np.abs(eps))).astype(dtype)


class NoisyDense:
    """Dense layer with factorized Gaussian parameter noise.

    Effective weights are mu + sigma * outer(f(eps_in), f(eps_out)) while
    noise is active; with noise off (or sigma zero) the layer reduces to the
    plain dense layer on mu. Noise samples are refreshed via
    :meth:`resample`, not implicitly, so forward stays a pure function.
    """

    SIGMA0 = 0.5

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        bound = 1.0 / np.sqrt(n_in)
        self.mu_W = rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)
        self.mu_b = rng.uniform(-bound, bound, size=n_out).astype(dtype)
        self.sigma_W = np.full((n_in, n_out), self.SIGMA0 / np.sqrt(n_in), dtype=dtype)
        self.sigma_b = np.full(n_out, self.SIGMA0 / np.sqrt(n_in), dtype=dtype)
        self.dmu_W = np.zeros_like(self.mu_W)
        self.dmu_b = np.zeros_like(self.mu_b)
        self.dsigma_W = np.zeros_like(self.sigma_W)
        self.dsigma_b = np.zeros_like(self.sigma_b)
        self._eps_in = np.zeros(n_in, dtype=dtype)
        self._eps_out = np.zeros(n_out, dtype=dtype)
        self._x = None
        self._noise_active = False

    def resample(self, rng: np.random.Generator) -> None:
        self._eps_in = _scaled_noise(rng, self.mu_W.shape[0], self.mu_W.dtype)
        self._eps_out = _scaled_noise(rng, self.mu_W.shape[1], self.mu_W.dtype)

    def forward(self, x: np.ndarray, train: bool, use_noise: bool) -> np.ndarray:
        self._x = x if train else None
        self._noise_active = use_noise
        if use_noise:
            W = self.mu_W + self.sigma_W * np.outer(self._eps_in, self._eps_out)
            b = self.mu_b + self.sigma_b * self._eps_out
        else:
            W = self.mu_W
            b = self.mu_b
        self._W_eff = W
        return x @ W + b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called without a matching train-mode forward")
        np.matmul(self._x.T, dy, out=self.dmu_W)
        np.sum(dy, axis=0, out=self.dmu_b)
        if self._noise_active:
            np.multiply(self.dmu_W, np.outer(self._eps_in, self._eps_out), out=self.dsigma_W)
            np.multiply(self.dmu_b, self._eps_out, out=self.dsigma_b)
        else:
            self.dsigma_W[...] = 0.0
            self.dsigma_b[...] = 0.0
        return dy @ self._W_eff.T

    def params(self):
        return {"mu_W": self.mu_W, "mu_b": self.mu_b,
                "sigma_W": self.sigma_W, "sigma_b": self.sigma_b}

    def grads(self):
        return {"mu_W": self.dmu_W, "mu_b": self.dmu_b,
                "sigma_W": self.dsigma_W, "sigma_b": self.dsigma_b}

    def _rebind(self, name: str, array: np.ndarray) -> None:
        setattr(self, name, array)
        setattr(self, "d" + name, np.zeros_like(array))


class BatchNorm:
    """Batch normalization; train mode uses batch statistics and updates the
    running ones, eval mode freezes to the running statistics."""

    def __init__(self, n: int, dtype=np.float64):
        self.gamma = np.ones(n, dtype=dtype)
        self.beta = np.zeros(n, dtype=dtype)
        self.dgamma = np.zeros_like(self.gamma)
        self.dbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(n, dtype=dtype)
        self.running_var = np.ones(n, dtype=dtype)
        self._cache = None

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (x - mu) * inv_std
            self._cache = (xhat, inv_std)
            self.running_mean = (1 - BN_MOMENTUM) * self.running_mean + BN_MOMENTUM * mu
            self.running_var = (1 - BN_MOMENTUM) * self.running_var + BN_MOMENTUM * var
        else:
            self._cache = None
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + BN_EPS)
        return self.gamma * xhat + self.beta

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called without a matching train-mode forward")
        xhat, inv_std = self._cache
        n = dy.shape[0]
        self.dgamma[...] = (dy * xhat).sum(axis=0)
        self.dbeta[...] = dy.sum(axis=0)
        dxhat = dy * self.gamma
        return inv_std / n * (
            n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
        )

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.dgamma, "beta": self.dbeta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _rebind(self, name: str, array: np.ndarray) -> None:
        setattr(self, name, array)
        setattr(self, "d" + name, np.zeros_like(array))


class QNetwork:
    """ReLU trunk (default widths 256/128/64) with a plain or dueling head.

    The dueling head combines a scalar state value V and per-action
    advantages A as Q = V + A - mean(A). Optional batch norm sits between
    each trunk layer and its ReLU; optional noisy layers replace the head
    layer(s) only.
    """

    FORMAT_VERSION = 1

    def __init__(
        self,
        n_inputs: int,
        n_actions: int,
        widths=(256, 128, 64),
        dueling: bool = True,
        batchnorm: bool = False,
        noisy: bool = False,
        seed: int = 0,
        dtype=np.float64,
    ):
        self.n_inputs = n_inputs
        self.n_actions = n_actions
        self.widths = tuple(widths)
        self.dueling = dueling
        self.batchnorm = batchnorm
        self.noisy = noisy
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self._seed = seed

        self.trunk = []
        self.norms = []
        prev = n_inputs
        for w in self.widths:
            self.trunk.append(Dense(prev, w, rng, dtype))
            self.norms.append(BatchNorm(w, dtype) if batchnorm else None)
            prev = w
        head_cls = NoisyDense if noisy else Dense
        if dueling:
            self.value_head = head_cls(prev, 1, rng, dtype)
            self.adv_head = head_cls(prev, n_actions, rng, dtype)
        else:
            self.out_head = head_cls(prev, n_actions, rng, dtype)
        self._relu_masks = None
        self._flatten()

    def _flatten(self) -> None:
        """Move every parameter into one flat buffer (layer arrays become
        views) so optimizer updates are a few whole-vector operations."""
        entries = []
        total = 0
        for lp, layer in self.layers():
            for name, arr in layer.params().items():
                entries.append((layer, name, arr))
                total += arr.size
        self.param_flat = np.empty(total, dtype=self.dtype)
        self.grad_flat = np.zeros(total, dtype=self.dtype)
        offset = 0
        for layer, name, arr in entries:
            view = self.param_flat[offset:offset + arr.size].reshape(arr.shape)
            view[...] = arr
            gview = self.grad_flat[offset:offset + arr.size].reshape(arr.shape)
            layer._rebind(name, view)
            setattr(layer, "d" + name, gview)
            offset += arr.size

    # -- layer bookkeeping ---------------------------------------------------

    def _head_layers(self):
        if self.dueling:
            return [("value", self.value_head), ("adv", self.adv_head)]
        return [("out", self.out_head)]

    def layers(self):
        """(path, layer) pairs for every parameterized layer, fixed order."""
        out = []
        for i, layer in enumerate(self.trunk):
            out.append((f"trunk{i}", layer))
            if self.norms[i] is not None:
                out.append((f"norm{i}", self.norms[i]))
        out.extend(self._head_layers())
        return out

    def parameters(self):
        """(path, array) pairs for every parameter, fixed order."""
        return [(f"{lp}.{name}", arr)
                for lp, layer in self.layers()
                for name, arr in layer.params().items()]

    def gradients(self):
        return [(f"{lp}.{name}", arr)
                for lp, layer in self.layers()
                for name, arr in layer.grads().items()]

    def resample_noise(self, rng: np.random.Generator) -> None:
        if not self.noisy:
            return
        for _, layer in self._head_layers():
            layer.resample(rng)

    # -- forward / backward ----------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, use_noise: Optional[bool] = None) -> np.ndarray:
        """Q-values, shape (batch, n_actions).

        Eval mode (train=False) freezes batch-norm statistics and applies no
        parameter noise, so it is deterministic for fixed parameters.
        """
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.n_inputs:
            raise ValueError(f"input width {x.shape[1]} != network width {self.n_inputs}")
        if use_noise is None:
            use_noise = self.noisy and train
        masks = []
        for layer, norm in zip(self.trunk, self.norms):
            x = layer.forward(x, train)
            if norm is not None:
                x = norm.forward(x, train)
            mask = x > 0
            masks.append(mask if train else None)
            x = x * mask
        self._relu_masks = masks if train else None

        def head_fwd(layer, h):
            if isinstance(layer, NoisyDense):
                return layer.forward(h, train, use_noise)
            return layer.forward(h, train)

        if self.dueling:
            v = head_fwd(self.value_head, x)
            a = head_fwd(self.adv_head, x)
            q = v + a - a.mean(axis=1, keepdims=True)
        else:
            q = head_fwd(self.out_head, x)
        return q[0] if squeeze else q

    def backward(self, dq: np.ndarray) -> None:
        """Populate parameter gradients from the loss gradient at the outputs."""
        if self._relu_masks is None:
            raise RuntimeError("backward called without a matching train-mode forward")
        dq = np.asarray(dq, dtype=self.dtype)
        if dq.ndim == 1:
            dq = dq[None, :]
        if self.dueling:
            dv = dq.sum(axis=1, keepdims=True)
            da = dq - dq.mean(axis=1, keepdims=True)
            dx = self.value_head.backward(dv) + self.adv_head.backward(da)
        else:
            dx = self.out_head.backward(dq)
        for layer, norm, mask in zip(reversed(self.trunk), reversed(self.norms),
                                     reversed(self._relu_masks)):
            dx = dx * mask
            if norm is not None:
                dx = norm.backward(dx)
            dx = layer.backward(dx)

    # -- cloning / checkpoints -------------------------------------------------

    def copy_from(self, other: "QNetwork") -> None:
        """Hard-copy all parameters and batch-norm state from ``other``."""
        self.param_flat[...] = other.param_flat
        for mine, theirs in zip(self.norms, other.norms):
            if mine is not None:
                mine.running_mean[...] = theirs.running_mean
                mine.running_var[...] = theirs.running_var

    def clone(self) -> "QNetwork":
        twin = QNetwork(
            self.n_inputs, self.n_actions, self.widths,
            dueling=self.dueling, batchnorm=self.batchnorm, noisy=self.noisy,
            seed=self._seed, dtype=self.dtype,
        )
        twin.copy_from(self)
        return twin

    def config(self) -> dict:
        return {
            "format_version": self.FORMAT_VERSION,
            "n_inputs": self.n_inputs,
            "n_actions": self.n_actions,
            "widths": list(self.widths),
            "dueling": self.dueling,
            "batchnorm": self.batchnorm,
            "noisy": self.noisy,
            "dtype": self.dtype.name,
            "seed": self._seed,
        }

    def state_arrays(self) -> dict:
        arrays = {f"param/{path}": arr for path, arr in self.parameters()}
        for i, norm in enumerate(self.norms):
            if norm is not None:
                for name, arr in norm.state().items():
                    arrays[f"state/norm{i}.{name}"] = arr
        return arrays

    def save(self, path) -> None:
        arrays = self.state_arrays()
        np.savez(path, __config__=np.frombuffer(
            json.dumps(self.config()).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "QNetwork":
        with np.load(path) as data:
            cfg = json.loads(bytes(data["__config__"]).decode())
            if cfg.pop("format_version") != cls.FORMAT_VERSION:
                raise ValueError("unsupported checkpoint format version")
            seed = cfg.pop("seed")
            net = cls(cfg.pop("n_inputs"), cfg.pop("n_actions"), cfg.pop("widths"),
                      dueling=cfg.pop("dueling"), batchnorm=cfg.pop("batchnorm"),
                      noisy=cfg.pop("noisy"), seed=seed, dtype=np.dtype(cfg.pop("dtype")))
            for path_, arr in net.parameters():
                arr[...] = data[f"param/{path_}"]
            for i, norm in enumerate(net.norms):
                if norm is not None:
                    norm.running_mean[...] = data[f"state/norm{i}.running_mean"]
                    norm.running_var[...] = data[f"state/norm{i}.running_var"]
        return net


class Adam:
    """Adam with the linearly decaying learning-rate schedule.

    lr(t) = max(1e-4, 1e-3 - 9e-4 * t / 50000) by default; ``t`` counts
    completed steps, so the first update uses lr(0). Moments live on the
    network's flat parameter buffer.
    """

    def __init__(self, net: QNetwork, base_lr: float = 1e-3, floor_lr: float = 1e-4,
                 decay_steps: int = 50_000, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.base_lr = base_lr
        self.floor_lr = floor_lr
        self.decay_steps = decay_steps
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros_like(net.param_flat)
        self.v = np.zeros_like(net.param_flat)
        self._scratch = np.empty_like(net.param_flat)

    def lr(self, t: Optional[int] = None) -> float:
        return lr_schedule(self.t if t is None else t,
                           self.base_lr, self.floor_lr, self.decay_steps)

    def step(self, net: QNetwork) -> None:
        """In-place update: param -= lr * m_hat / (sqrt(v_hat) + eps)."""
        lr = self.lr()
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        g = net.grad_flat
        s = self._scratch
        self.m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=s)
        self.m += s
        self.v *= self.beta2
        np.multiply(g, g, out=s)
        s *= 1.0 - self.beta2
        self.v += s
        np.sqrt(self.v, out=s)
        s *= 1.0 / np.sqrt(bc2)
        s += self.eps
        np.divide(self.m, s, out=s)
        s *= lr / bc1
        net.param_flat -= s

    def state_arrays(self) -> dict:
        return {"m/flat": self.m, "v/flat": self.v}

    def load_state(self, arrays: dict, t: int) -> None:
        self.t = t
        self.m[...] = arrays["m/flat"]
        self.v[...] = arrays["v/flat"]


def grad_check(net: QNetwork, h: float = 1e-5, rng: Optional[np.random.Generator] = None) -> float:
    """Exhaustive central-difference check; returns the worst relative error.

    Uses a fixed random batch and the scalar loss 0.5*sum((Q - T)^2)/B. Noise
    samples (if any) are drawn once and held, so the loss is a deterministic
    function of the parameters. The error denominator is floored at 1e-6:
    central differences carry ~1e-11 absolute noise (eps/h), so exactly-zero
    gradients (e.g. a bias feeding batch norm) would otherwise read as
    spurious relative error.
    """
    rng = rng or np.random.default_rng(12345)
    batch = 5
    x = rng.standard_normal((batch, net.n_inputs))
    target = rng.standard_normal((batch, net.n_actions))
    net.resample_noise(rng)
    use_noise = net.noisy

    def loss() -> float:
        q = net.forward(x, train=True, use_noise=use_noise)
        return float(0.5 * np.sum((q - target) ** 2) / batch)

    q = net.forward(x, train=True, use_noise=use_noise)
    net.backward((q - target) / batch)
    analytic = {path: arr.copy() for path, arr in net.gradients()}

    worst = 0.0
    for path, param in net.parameters():
        flat = param.reshape(-1)
        grad = analytic[path].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss()
            flat[i] = orig - h
            lm = loss()
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            err = abs(grad[i] - numeric) / max(abs(grad[i]) + abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
