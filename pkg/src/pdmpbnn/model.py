"""Target densities for the samplers.

A :class:`Model` binds a :class:`ModelSpec` to a :class:`Dataset` and exposes the
potential energy ``U(w) = -log p(w) - log p(D | w)`` together with its exact and
mini-batch gradients, a finite-difference estimate of the diagonal Hessian of
the negative log-likelihood, and predictions used by the diagnostics.

Parameters of every family are stored as one flat vector. Fully connected
networks are laid out layer by layer as ``W_l`` (row-major, ``n_in x n_out``)
followed by ``b_l``. Linear and logistic regression are networks without hidden
layers, so they share the same reverse-mode gradient code.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import ModelError

FAMILIES = (
    "gaussian-target",
    "linear-regression",
    "logistic-regression",
    "mlp-regression",
    "mlp-classification",
)
ACTIVATIONS = ("tanh", "relu")
PRIORS = ("gaussian", "flat")


@dataclass(frozen=True)
class Dataset:
    """Rows of inputs (``N x p``) and targets (``N x q``)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or y.ndim != 2:
            raise ModelError("inputs and targets must be 1-D or 2-D arrays")
        if x.shape[0] < 1:
            raise ModelError("dataset must contain at least one row")
        if x.shape[0] != y.shape[0]:
            raise ModelError(f"row mismatch: {x.shape[0]} inputs vs {y.shape[0]} targets")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx])


@dataclass(frozen=True)
class ModelSpec:
    """Model family and hyperparameters.

    ``dim`` is only used by ``gaussian-target``; ``widths`` lists the hidden
    layer sizes of the MLP families. ``noise_var`` is the Gaussian likelihood
    variance of the regression families.
    """

    family: str
    dim: int | None = None
    widths: tuple = (25, 10)
    activation: str = "tanh"
    noise_var: float = 0.01
    prior: str = "gaussian"
    prior_precision: float = 1.0
    num_classes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        problems = []
        if self.family not in FAMILIES:
            problems.append(f"unknown family {self.family!r}")
        if self.activation not in ACTIVATIONS:
            problems.append(f"activation must be one of {ACTIVATIONS}")
        if self.prior not in PRIORS:
            problems.append(f"prior must be one of {PRIORS}")
        if not self.noise_var > 0:
            problems.append("noise_var must be > 0")
        if not self.prior_precision > 0:
            problems.append("prior_precision must be > 0")
        if self.family.startswith("mlp") and (
            not self.widths or any(w < 1 for w in self.widths)
        ):
            problems.append("mlp widths must all be >= 1")
        if self.family == "gaussian-target":
            if self.dim is None or self.dim < 1:
                problems.append("gaussian-target needs dim >= 1")
            if self.prior == "flat":
                problems.append("gaussian-target cannot use a flat prior")
        if problems:
            raise ModelError("; ".join(problems))

    @property
    def needs_data(self):
        return self.family != "gaussian-target"


class MiniBatchPlan:
    """Epoch-wise shuffling without replacement.

    ``next_batch`` walks through a random permutation of ``range(n)`` in chunks of
    ``batch_size`` and reshuffles once the epoch is exhausted, so every index is
    visited exactly once per epoch. The final chunk of an epoch is shorter when
    ``batch_size`` does not divide ``n``.
    """

    def __init__(self, n, batch_size=None, seed=0):
        if n < 1:
            raise ModelError("mini-batch plan needs n >= 1")
        m = n if batch_size is None else int(batch_size)
        if not 1 <= m <= n:
            raise ModelError(f"batch_size must lie in [1, {n}], got {m}")
        self.n = n
        self.batch_size = m
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._perm = None
        self._pos = n

    @property
    def n_batches(self):
        return -(-self.n // self.batch_size)

    @property
    def scale(self):
        # equals N/m when m divides N; keeps the epoch average exact otherwise
        return float(self.n_batches)

    @property
    def full(self):
        return self.batch_size == self.n

    def next_batch(self):
        if self.full:
            return slice(None)
        if self._pos >= self.n:
            self._perm = self._rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx

    def epoch(self):
        """Partition of a fresh permutation into ``n_batches`` disjoint batches."""
        if self.full:
            return [slice(None)]
        perm = self._rng.permutation(self.n)
        return [perm[i:i + self.batch_size] for i in range(0, self.n, self.batch_size)]


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class _Layer:
    n_in: int
    n_out: int
    w_slice: slice
    b_slice: slice


class Model:
    """Potential energy provider for one (spec, data) pair.

    All methods are pure in the parameter vector; the model and dataset are
    shared read-only between chains.
    """

    def __init__(self, spec, data=None):
        self.spec = spec
        if spec.needs_data and data is None:
            raise ModelError(f"{spec.family} requires a dataset")
        if not spec.needs_data and data is not None:
            raise ModelError("gaussian-target takes no dataset")
        self.data = data
        self._head = None
        self.layers = []
        if spec.family == "gaussian-target":
            self.dim = int(spec.dim)
            return

        p = data.inputs.shape[1]
        q = data.targets.shape[1]
        if spec.family in ("linear-regression", "mlp-regression"):
            self._head = "gaussian"
            n_out = q
            self._y = data.targets
        else:
            if q != 1:
                raise ModelError("classification targets must be a single label column")
            labels = data.targets[:, 0]
            if np.any(labels != np.round(labels)):
                raise ModelError("classification labels must be integers")
            if spec.family == "logistic-regression":
                self._head = "bernoulli"
                n_out = 1
                self._y = (labels > 0).astype(float)[:, None]
            else:
                self._head = "categorical"
                k = spec.num_classes or int(labels.max()) + 1
                if labels.min() < 0 or labels.max() >= k:
                    raise ModelError(f"labels must lie in [0, {k})")
                n_out = max(k, 2)
                self._labels = labels.astype(int)
                self._y = np.eye(n_out)[self._labels]
        hidden = spec.widths if spec.family.startswith("mlp") else ()
        sizes = [p, *hidden, n_out]
        offset = 0
        for n_in, n_o in zip(sizes[:-1], sizes[1:]):
            w = slice(offset, offset + n_in * n_o)
            offset += n_in * n_o
            b = slice(offset, offset + n_o)
            offset += n_o
            self.layers.append(_Layer(n_in, n_o, w, b))
        self.dim = offset

    # -- parameters -----------------------------------------------------------

    @property
    def n_data(self):
        return 0 if self.data is None else self.data.n

    @property
    def task(self):
        """``'regression'``, ``'classification'`` or ``None`` for gaussian-target."""
        if self._head is None:
            return None
        return "regression" if self._head == "gaussian" else "classification"

    def class_index(self, targets):
        """Map label targets to column indices of :meth:`predict`."""
        labels = np.asarray(targets, dtype=float).reshape(-1)
        if self._head == "bernoulli":
            return (labels > 0).astype(int)
        return labels.astype(int)

    @property
    def num_outputs(self):
        return self.layers[-1].n_out if self.layers else self.dim

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.dim,):
            raise ModelError(f"parameter vector has shape {w.shape}, expected ({self.dim},)")
        return w

    def init_params(self, rng):
        """Glorot-uniform weights and zero biases; standard normal for gaussian-target."""
        if not self.layers:
            return rng.standard_normal(self.dim)
        w = np.zeros(self.dim)
        for layer in self.layers:
            limit = math.sqrt(6.0 / (layer.n_in + layer.n_out))
            w[layer.w_slice] = rng.uniform(-limit, limit, layer.n_in * layer.n_out)
        return w

    # -- forward / backward ---------------------------------------------------

    def _act(self, z):
        return np.tanh(z) if self.spec.activation == "tanh" else np.maximum(z, 0.0)

    def _forward(self, w, x):
        hs = [x]
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            W = w[layer.w_slice].reshape(layer.n_in, layer.n_out)
            z = h @ W + w[layer.b_slice]
            h = z if i == last else self._act(z)
            hs.append(h)
        return hs

    def outputs(self, w, x):
        """Raw network output: regression means or logits."""
        w = self._check(w)
        return self._forward(w, np.atleast_2d(np.asarray(x, dtype=float)))[-1]

    def predict(self, w, x):
        """Regression means (``N x q``) or class probabilities (``N x K``)."""
        out = self.outputs(w, x)
        if self._head == "gaussian":
            return out
        if self._head == "bernoulli":
            p = _sigmoid(out[:, 0])
            return np.column_stack([1.0 - p, p])
        return _softmax(out)

    def _nll_and_dout(self, out, y):
        if self._head == "gaussian":
            s2 = self.spec.noise_var
            r = out - y
            nll = 0.5 * np.sum(r * r) / s2 + 0.5 * r.size * math.log(2 * math.pi * s2)
            return nll, r / s2
        if self._head == "bernoulli":
            nll = np.sum(_softplus(out) - y * out)
            return nll, _sigmoid(out) - y
        zmax = out.max(axis=1, keepdims=True)
        lse = zmax[:, 0] + np.log(np.exp(out - zmax).sum(axis=1))
        nll = np.sum(lse - np.sum(out * y, axis=1))
        return nll, _softmax(out) - y

    def nll(self, w, idx=slice(None)):
        """Negative log-likelihood summed over the rows ``idx``."""
        w = self._check(w)
        if not self.layers:
            return 0.0
        out = self._forward(w, self.data.inputs[idx])[-1]
        return self._nll_and_dout(out, self._y[idx])[0]

    def nll_grad(self, w, idx=slice(None)):
        """Gradient of :meth:`nll` by reverse-mode accumulation."""
        w = self._check(w)
        grad = np.zeros(self.dim)
        if not self.layers:
            return grad
        hs = self._forward(w, self.data.inputs[idx])
        _, g = self._nll_and_dout(hs[-1], self._y[idx])
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_in = hs[i]
            grad[layer.w_slice] = (h_in.T @ g).ravel()
            grad[layer.b_slice] = g.sum(axis=0)
            if i > 0:
                W = w[layer.w_slice].reshape(layer.n_in, layer.n_out)
                g = g @ W.T
                if self.spec.activation == "tanh":
                    g = g * (1.0 - h_in * h_in)
                else:
                    g = g * (h_in > 0)
        return grad

    # -- energy ---------------------------------------------------------------

    def prior_potential(self, w):
        if self.spec.prior == "flat":
            return 0.0
        return 0.5 * self.spec.prior_precision * float(w @ w)

    def prior_grad(self, w):
        if self.spec.prior == "flat":
            return np.zeros_like(w)
        return self.spec.prior_precision * w

    def potential(self, w):
        """``U(w)`` over the full dataset."""
        w = self._check(w)
        with np.errstate(over="ignore", invalid="ignore"):
            prior = self.prior_potential(w)
            lik = self.nll(w)
        if not math.isfinite(prior):
            raise ModelError("non-finite potential in prior term")
        if not math.isfinite(lik):
            raise ModelError("non-finite potential in likelihood term")
        return prior + lik

    def grad(self, w):
        """Exact gradient of :meth:`potential`."""
        w = self._check(w)
        with np.errstate(over="ignore", invalid="ignore"):
            g = self.prior_grad(w) + self.nll_grad(w)
        if not np.all(np.isfinite(g)):
            raise ModelError("non-finite gradient")
        return g

    def grad_minibatch(self, w, plan):
        """Unbiased gradient estimate: prior once plus the rescaled batch likelihood."""
        w = self._check(w)
        if not self.layers or plan is None or plan.full:
            return self.grad(w)
        idx = plan.next_batch()
        if len(idx) == 0:
            raise ModelError("empty mini-batch")
        with np.errstate(over="ignore", invalid="ignore"):
            g = self.prior_grad(w) + plan.scale * self.nll_grad(w, idx)
        if not np.all(np.isfinite(g)):
            raise ModelError("non-finite mini-batch gradient")
        return g

    def diag_hessian_nll(self, w, plan=None, step=1e-4, floor=1e-6):
        """Diagonal of the likelihood Hessian, summed over the batches of one epoch.

        Central differences of the batch likelihood gradient, one coordinate at a
        time. Entries are clamped below at ``floor``.
        """
        w = self._check(w)
        if not self.layers:
            return np.full(self.dim, floor)
        batches = plan.epoch() if plan is not None else [slice(None)]
        diag = np.zeros(self.dim)
        wp = w.copy()
        for j in range(self.dim):
            acc = 0.0
            for idx in batches:
                wp[j] = w[j] + step
                gp = self.nll_grad(wp, idx)[j]
                wp[j] = w[j] - step
                gm = self.nll_grad(wp, idx)[j]
                acc += (gp - gm) / (2 * step)
            wp[j] = w[j]
            diag[j] = acc
        if not np.all(np.isfinite(diag)):
            raise ModelError("non-finite second difference in Hessian estimate")
        return np.maximum(diag, floor)


def map_fit(model, iterations=10000, step=1e-3, seed=0, init=None, return_history=False,
            beta1=0.9, beta2=0.999, eps=1e-8):
    """Full-batch Adam on the potential.

    Starts from ``init`` or from :meth:`Model.init_params` seeded with ``seed``.
    With ``return_history`` the potential before every step is returned too.
    """
    if iterations < 0:
        raise ModelError("iterations must be >= 0")
    rng = np.random.default_rng(seed)
    w = model.init_params(rng) if init is None else np.array(init, dtype=float)
    w = model._check(w).copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    history = []
    for k in range(1, iterations + 1):
        if return_history:
            history.append(model.potential(w))
        g = model.grad(w)
        with np.errstate(over="ignore", invalid="ignore"):
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            mhat = m / (1 - beta1 ** k)
            vhat = v / (1 - beta2 ** k)
            w = w - step * mhat / (np.sqrt(vhat) + eps)
        if not np.all(np.isfinite(w)):
            raise ModelError(f"MAP optimisation diverged at iteration {k}")
    if return_history:
        history.append(model.potential(w))
        return w, np.array(history)
    return w


def regression_curve(x):
    """Smooth target function used by :func:`synth_regression`."""
    x = np.asarray(x, dtype=float)
    return np.sin(2.5 * x) + 0.5 * x


def synth_regression(seed, n, noise=0.1, low=-1.0, high=1.0):
    """1-D regression data: uniform inputs on ``[low, high]``, curve plus Gaussian noise."""
    if n < 2:
        raise ModelError("synth_regression needs n >= 2")
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(low, high, n))
    y = regression_curve(x) + noise * rng.standard_normal(n)
    return Dataset(x[:, None], y[:, None])


def synth_classification(seed, n, noise=0.2):
    """Two interleaved half-moons with integer labels 0/1."""
    if n < 2:
        raise ModelError("synth_classification needs n >= 2")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, n)
    theta = rng.uniform(0, math.pi, n)
    x = np.where(labels == 0, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(labels == 0, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.column_stack([x, y]) + noise * rng.standard_normal((n, 2))
    return Dataset(pts, labels[:, None].astype(float))


def load_csv_dataset(path, header=False):
    """Read a comma-separated file; the last column is the target."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    if arr.shape[1] < 2:
        raise ModelError(f"{path}: need at least one input column and one target column")
    return Dataset(arr[:, :-1], arr[:, -1:])
