"""ReLU feedforward networks: evaluation, size/depth, backprop and training.

A network with L affine maps computes
``x_{k} = relu(A_k x_{k-1} + b_k)`` for k < L and ``A_L x_{L-1} + b_L``.
Weights may be dense arrays or scipy sparse matrices; the latter is how the
large constructed networks of ``ns_relu`` are stored.
"""
from dataclasses import dataclass, field as dc_field
import math

import numpy as np
import scipy.sparse as sp

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def relu(x):
    return np.maximum(x, 0.0)


def _nnz(a):
    if sp.issparse(a):
        a = a.tocoo()
        return int(np.count_nonzero(a.data))
    return int(np.count_nonzero(a))


class Mlp:
    """Immutable ReLU network defined by lists of weights and biases."""

    def __init__(self, weights, biases, validate=True):
        if len(weights) != len(biases) or not weights:
            raise ValueError("need matching, nonempty weight and bias lists")
        if not validate:
            # trusted construction path: layers may be shared between networks
            self.weights = tuple(weights)
            self.biases = tuple(biases)
            return
        ws, bs = [], []
        for k, (a, b) in enumerate(zip(weights, biases)):
            if sp.issparse(a):
                a = sp.csr_matrix(a, dtype=np.float64)
                if not np.all(np.isfinite(a.data)):
                    raise ValueError(f"non-finite weights in layer {k + 1}")
            else:
                a = np.array(a, dtype=np.float64, ndmin=2)
                if not np.all(np.isfinite(a)):
                    raise ValueError(f"non-finite weights in layer {k + 1}")
                a.setflags(write=False)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if b.shape[0] != a.shape[0]:
                raise ValueError(f"bias of layer {k + 1} has length {b.shape[0]}, expected {a.shape[0]}")
            if not np.all(np.isfinite(b)):
                raise ValueError(f"non-finite bias in layer {k + 1}")
            if ws and a.shape[1] != ws[-1].shape[0]:
                raise ValueError(f"layer {k + 1} expects width {a.shape[1]}, previous layer gives {ws[-1].shape[0]}")
            b.setflags(write=False)
            ws.append(a)
            bs.append(b)
        self.weights = tuple(ws)
        self.biases = tuple(bs)

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [a.shape[0] for a in self.weights]

    @property
    def input_dim(self):
        return self.weights[0].shape[1]

    @property
    def output_dim(self):
        return self.weights[-1].shape[0]

    def depth(self):
        return len(self.weights)

    def size(self):
        return sum(_nnz(a) + _nnz(b) for a, b in zip(self.weights, self.biases))

    def __call__(self, x):
        return forward(self, x)

    def scaled(self, c):
        """Network for c * psi(x): only the last affine map changes."""
        return Mlp(list(self.weights[:-1]) + [c * self.weights[-1]],
                   list(self.biases[:-1]) + [c * self.biases[-1]])


def depth(mlp):
    return mlp.depth()


def size(mlp):
    return mlp.size()


def _affine(a, x, b):
    # x has shape (B, d_in); returns (B, d_out)
    if sp.issparse(a):
        return np.asarray((a @ x.T).T) + b
    return x @ a.T + b


def forward(mlp, x):
    """Evaluate on one input (d0,) or a batch (B, d0)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != mlp.input_dim:
        raise ValueError(f"input has dimension {h.shape[1]}, network expects {mlp.input_dim}")
    last = len(mlp.weights) - 1
    for k, (a, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = _affine(a, h, b)
        if k < last:
            h = relu(h)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("network output is not finite")
    return h[0] if single else h


def identity_net(dim):
    """Depth-2 ReLU net computing x = relu(x) - relu(-x)."""
    eye = np.eye(dim)
    return Mlp([np.vstack([eye, -eye]), np.hstack([eye, -eye])], [np.zeros(2 * dim), np.zeros(dim)])


def compose(outer, inner):
    """Network for outer(inner(x)).

    The last affine map of ``inner`` is merged with the first of ``outer``,
    so depth is depth(inner) + depth(outer) - 1.
    """
    if inner.output_dim != outer.input_dim:
        raise ValueError("dimension mismatch in composition")
    a1, b1 = inner.weights[-1], inner.biases[-1]
    a2, b2 = outer.weights[0], outer.biases[0]
    merged = a2 @ a1
    bias = np.asarray(a2 @ b1).reshape(-1) + b2
    return Mlp(list(inner.weights[:-1]) + [merged] + list(outer.weights[1:]),
               list(inner.biases[:-1]) + [bias] + list(outer.biases[1:]))


def stack(outer, inner):
    """Network for outer(inner(x)) through an explicit +-identity junction.

    The junction ``relu(y) - relu(-y)`` keeps the two blocks separate, so
    size <= size(inner) + size(outer) + (nonzeros added by the junction)
    and depth = depth(inner) + depth(outer).
    """
    if inner.output_dim != outer.input_dim:
        raise ValueError("dimension mismatch in composition")
    a1, b1 = inner.weights[-1], inner.biases[-1]
    a2, b2 = outer.weights[0], outer.biases[0]
    sparse = sp.issparse(a1) or sp.issparse(a2)
    if sparse:
        up = sp.vstack([sp.csr_matrix(a1), -sp.csr_matrix(a1)]).tocsr()
        down = sp.hstack([sp.csr_matrix(a2), -sp.csr_matrix(a2)]).tocsr()
    else:
        up = np.vstack([a1, -a1])
        down = np.hstack([a2, -a2])
    return Mlp(list(inner.weights[:-1]) + [up, down] + list(outer.weights[1:]),
               list(inner.biases[:-1]) + [np.concatenate([b1, -b1]), b2] + list(outer.biases[1:]))


def he_init(widths, seed):
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for din, dout in zip(widths[:-1], widths[1:]):
        ws.append(rng.normal(0.0, math.sqrt(2.0 / din), size=(dout, din)))
        bs.append(np.zeros(dout))
    return Mlp(ws, bs)


def zero_init(widths):
    return Mlp([np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
               [np.zeros(o) for o in widths[1:]])


def loss(mlp, x, y):
    r = forward(mlp, np.atleast_2d(x)) - np.atleast_2d(y)
    return float(np.mean(np.sum(r * r, axis=1)))


def backward_gradients(mlp, x, y):
    """Gradients of (1/N) sum_k |psi(x_k) - y_k|^2 w.r.t. every A_k, b_k.

    Returns ``(grads_w, grads_b)``.  The ReLU derivative at 0 is taken as 0.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ValueError("batch must be nonempty with matching input/target counts")
    if x.shape[1] != mlp.input_dim or y.shape[1] != mlp.output_dim:
        raise ValueError("batch dimensions do not match the network")
    acts = [x]
    pre = []
    last = mlp.depth() - 1
    h = x
    for k, (a, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = _affine(a, h, b)
        pre.append(z)
        h = relu(z) if k < last else z
        acts.append(h)
    n = x.shape[0]
    delta = 2.0 * (h - y) / n
    gw = [None] * (last + 1)
    gb = [None] * (last + 1)
    for k in range(last, -1, -1):
        gw[k] = delta.T @ acts[k]
        gb[k] = delta.sum(axis=0)
        if k > 0:
            a = mlp.weights[k]
            back = np.asarray((a.T @ delta.T).T) if sp.issparse(a) else delta @ a
            delta = back * (pre[k - 1] > 0.0)
    return gw, gb


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    init: str = "he"
    shuffle: bool = True

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("learning rate, epochs and batch size must be positive")
        if self.init not in ("he", "zero"):
            raise ValueError(f"unknown init {self.init!r}")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class LossTrace:
    losses: tuple = dc_field(default_factory=tuple)

    @property
    def final(self):
        return self.losses[-1] if self.losses else float("nan")

    @property
    def initial(self):
        return self.losses[0] if self.losses else float("nan")


def init_network(widths, config):
    return he_init(widths, config.seed) if config.init == "he" else zero_init(widths)


def train(mlp, x, y, config):
    """Minimize the empirical loss; returns the trained net and per-epoch losses.

    The recorded loss for an epoch is the full-batch loss after that epoch.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("need N >= 1 matching pairs")
    if x.shape[1] != mlp.input_dim or y.shape[1] != mlp.output_dim:
        raise ValueError("pair dimensions do not match the network")
    ws = [np.array(a.toarray() if sp.issparse(a) else a) for a in mlp.weights]
    bs = [np.array(b) for b in mlp.biases]
    params = ws + bs
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed + 1)
    n = x.shape[0]
    step = 0
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            net = Mlp(ws, bs)
            gw, gb = backward_gradients(net, x[idx], y[idx])
            grads = gw + gb
            step += 1
            for p, g, a, v in zip(params, grads, m1, m2):
                if config.optimizer == "sgd":
                    p -= config.learning_rate * g
                    continue
                a *= ADAM_BETA1
                a += (1.0 - ADAM_BETA1) * g
                v *= ADAM_BETA2
                v += (1.0 - ADAM_BETA2) * g * g
                ahat = a / (1.0 - ADAM_BETA1 ** step)
                vhat = v / (1.0 - ADAM_BETA2 ** step)
                p -= config.learning_rate * ahat / (np.sqrt(vhat) + ADAM_EPS)
        try:
            val = loss(Mlp(ws, bs), x, y)
        except (FloatingPointError, ValueError) as exc:
            raise FloatingPointError(f"training diverged at epoch {epoch}: {exc}") from exc
        if not math.isfinite(val):
            raise FloatingPointError(f"training diverged at epoch {epoch}: loss {val}")
        losses.append(val)
    return Mlp(ws, bs), LossTrace(tuple(losses))


def affine_wrap(mlp, in_shift, in_scale, out_scale, out_shift):
    """Fold x -> (x - in_shift)/in_scale before and y -> y*out_scale + out_shift after."""
    ws = list(mlp.weights)
    bs = list(mlp.biases)
    in_scale = np.asarray(in_scale, dtype=np.float64)
    out_scale = np.asarray(out_scale, dtype=np.float64)
    a0 = np.asarray(ws[0]) / in_scale[None, :]
    bs[0] = bs[0] - a0 @ np.asarray(in_shift, dtype=np.float64)
    ws[0] = a0
    ws[-1] = out_scale[:, None] * np.asarray(ws[-1])
    bs[-1] = out_scale * bs[-1] + np.asarray(out_shift, dtype=np.float64)
    return Mlp(ws, bs)
