"""Mixing and predictive diagnostics for stored chains.

Mixing is summarised by the effective sample size of the chain projected on its
first (and last) principal component. Predictions average the per-sample
predictive over the chain; calibration uses equal-width confidence bins.
"""
from dataclasses import dataclass
import math

import numpy as np

from .errors import DiagnosticError

ECE_BINS = 10
ENTROPY_BINS = 20


# -- principal components and ESS ------------------------------------------------


def _centered(samples):
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2 or s.shape[0] < 2:
        raise DiagnosticError("need a 2-D sample matrix with at least two rows")
    return s - s.mean(axis=0)


def _canonical_sign(vec):
    nz = np.flatnonzero(np.abs(vec) > 1e-12)
    if nz.size and vec[nz[0]] < 0:
        return -vec
    return vec


def first_principal_component(samples, tol=1e-8, max_iter=10**4):
    """Dominant direction of the sample covariance, by power iteration.

    Returns ``(direction, scores)`` where ``scores`` are the centred samples
    projected on ``direction``. The sign is fixed so that the first nonzero
    entry of ``direction`` is positive.
    """
    x = _centered(samples)
    cov = x.T @ x / (x.shape[0] - 1)
    if not np.any(np.diag(cov) > 0):
        raise DiagnosticError("samples have zero variance")
    # deterministic start with no special alignment to the coordinate axes
    v = np.random.default_rng(0).standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise DiagnosticError("power iteration collapsed to zero")
        w /= norm
        if w @ v < 0:
            w = -w
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    v = _canonical_sign(v / np.linalg.norm(v))
    return v, x @ v


def last_principal_component(samples):
    """Direction of least sample variance (dense eigensolver) and its scores."""
    x = _centered(samples)
    cov = x.T @ x / (x.shape[0] - 1)
    _, vecs = np.linalg.eigh(cov)
    v = _canonical_sign(vecs[:, 0])
    return v, x @ v


def autocorrelation(x):
    """Sample autocorrelation at all lags (biased normalisation, FFT)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    if acov[0] <= 0:
        raise DiagnosticError("constant sequence has no autocorrelation")
    return acov / acov[0]


def ess(x):
    """Effective sample size with Geyer's initial positive sequence truncation.

    ``ess = n / (1 + 2 * sum_k rho_k)``, where the sum runs over pairs
    ``rho_{2m} + rho_{2m+1}`` while they stay positive. The result is clamped to
    ``(0, n]``.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise DiagnosticError("ESS needs at least 4 values")
    if not np.all(np.isfinite(x)):
        raise DiagnosticError("non-finite values in sequence")
    if np.ptp(x) == 0.0:
        raise DiagnosticError("constant sequence")
    rho = autocorrelation(x)
    total = 0.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        total += pair
    tau = 2.0 * total - 1.0
    if tau <= 1.0 / n:
        return float(n)
    return float(min(n / tau, n))


# -- predictive posterior ----------------------------------------------------------


@dataclass
class PredictiveSummary:
    """Monte Carlo predictive over a chain at a set of test inputs.

    For regression ``mean``/``variance`` are the average and the across-sample
    variance of the network output, and ``noise_var`` is the likelihood noise.
    For classification ``mean`` holds averaged class probabilities. ``lower`` and
    ``upper`` are the 2.5% and 97.5% quantiles across samples. ``draws`` keeps the
    per-sample predictions (``S x N x K``).
    """

    task: str
    mean: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    draws: np.ndarray
    noise_var: float = 0.0

    @property
    def total_variance(self):
        return self.variance + self.noise_var


def predictive_posterior(model, samples, inputs):
    """Average ``p(y | x, w_s)`` over the rows ``w_s`` of ``samples``."""
    if model.task is None:
        raise DiagnosticError("gaussian-target has no predictive distribution")
    s = np.atleast_2d(np.asarray(samples, dtype=float))
    if s.shape[0] < 1:
        raise DiagnosticError("empty chain")
    if s.shape[1] != model.dim:
        raise DiagnosticError(f"samples have dimension {s.shape[1]}, model expects {model.dim}")
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    draws = np.stack([model.predict(w, x) for w in s])
    lower, upper = np.quantile(draws, [0.025, 0.975], axis=0)
    noise = model.spec.noise_var if model.task == "regression" else 0.0
    return PredictiveSummary(model.task, draws.mean(axis=0), draws.var(axis=0),
                             lower, upper, draws, noise)


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.sum(np.exp(a - m), axis=axis))


def nll_rmse_acc(summary, targets):
    """Per-point averaged NLL plus RMSE (regression) or accuracy (classification).

    Regression NLL uses the mixture ``mean_s N(y; mu_s, noise_var)``. For
    classification ``targets`` are column indices into the probability rows.
    """
    if summary.task == "regression":
        y = np.asarray(targets, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.shape != summary.mean.shape:
            raise DiagnosticError(f"targets shape {y.shape} != predictions {summary.mean.shape}")
        s2 = summary.noise_var
        r = summary.draws - y[None]
        logp = (-0.5 * r * r / s2 - 0.5 * math.log(2 * math.pi * s2)).sum(axis=2)
        nll = -(_logsumexp(logp, axis=0) - math.log(summary.draws.shape[0]))
        rmse = math.sqrt(np.mean((summary.mean - y) ** 2))
        return {"nll": float(nll.mean()), "rmse": rmse, "acc": None}
    labels = np.asarray(targets).astype(int).ravel()
    probs = summary.mean
    if labels.size != probs.shape[0]:
        raise DiagnosticError(f"{labels.size} labels for {probs.shape[0]} predictions")
    p = probs[np.arange(labels.size), labels]
    nll = -np.log(np.maximum(p, 1e-300))
    acc = np.mean(np.argmax(probs, axis=1) == labels)
    return {"nll": float(nll.mean()), "rmse": None, "acc": float(acc)}


def _check_probs(probs):
    p = np.asarray(probs, dtype=float)
    if p.ndim != 2 or p.shape[0] == 0:
        raise DiagnosticError("probabilities must be a non-empty N x K array")
    if np.any(p < -1e-12) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise DiagnosticError("probability rows must be non-negative and sum to 1")
    return p


def ece(probs, labels, bins=ECE_BINS):
    """Expected calibration error over equal-width confidence bins on ``[0, 1]``."""
    p = _check_probs(probs)
    labels = np.asarray(labels).astype(int).ravel()
    if labels.size != p.shape[0]:
        raise DiagnosticError(f"{labels.size} labels for {p.shape[0]} predictions")
    conf = p.max(axis=1)
    correct = (p.argmax(axis=1) == labels).astype(float)
    which = np.minimum((conf * bins).astype(int), bins - 1)
    n = labels.size
    total = 0.0
    for b in range(bins):
        mask = which == b
        if mask.any():
            total += mask.sum() / n * abs(correct[mask].mean() - conf[mask].mean())
    return float(total)


def predictive_entropy(probs):
    """Row-wise Shannon entropy in nats, with ``0 log 0 = 0``."""
    p = _check_probs(probs)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -(p * logs).sum(axis=1)


def entropy_histogram(probs, bins=ENTROPY_BINS):
    """Counts of predictive entropies over ``bins`` equal bins on ``[0, log K]``."""
    h = predictive_entropy(probs)
    top = math.log(np.shape(probs)[1])
    counts, edges = np.histogram(np.clip(h, 0.0, top), bins=bins, range=(0.0, top))
    return {"edges": edges.tolist(), "counts": counts.tolist()}


# -- per-run metrics ---------------------------------------------------------------------


def chain_metrics(model, chain, test=None):
    """Metrics document of one run.

    Keys: ``acc, nll, rmse, ece, ess_first_pc, ess_last_pc, entropy_histogram,
    thinning_audit``. Predictive entries are ``None`` without a test set or a
    predictive model; ESS entries are ``None`` for chains that are too short.
    """
    out = {"acc": None, "nll": None, "rmse": None, "ece": None,
           "ess_first_pc": None, "ess_last_pc": None,
           "entropy_histogram": None, "thinning_audit": None}
    if len(chain) >= 4:
        try:
            out["ess_first_pc"] = ess(first_principal_component(chain.samples)[1])
            out["ess_last_pc"] = ess(last_principal_component(chain.samples)[1])
        except DiagnosticError:
            pass
    if chain.audit is not None and chain.audit.proposals:
        out["thinning_audit"] = chain.audit.to_dict()
    if test is not None and model.task is not None:
        summary = predictive_posterior(model, chain.samples, test.inputs)
        if model.task == "regression":
            out.update(nll_rmse_acc(summary, test.targets))
        else:
            labels = model.class_index(test.targets)
            out.update(nll_rmse_acc(summary, labels))
            out["ece"] = ece(summary.mean, labels)
            out["entropy_histogram"] = entropy_histogram(summary.mean)
    return out
