"""Multi-layer residual sparsifying transform (MRST) model and its learning.

A model is a stack of ``L`` unitary ``p x p`` transforms. Layer ``l`` sparsifies
the residual left over by layer ``l - 1``::

    R_1 = training patches
    R_{l+1} = W_l R_l - Z_l

and learning minimizes ``sum_l ||W_l R_l - Z_l||_F^2 + eta_l^2 ||Z_l||_0`` by
exact block coordinate descent over the codes ``Z_l`` and transforms ``W_l``.

Layer indices in the public API are 1-based to match the usual notation
(``layer=1`` is the shallowest); Python lists holding per-layer data are
0-based.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .imaging import ConfigError, PatchConfig

UNITARY_TOL = 1e-8


def unitarity_error(omega):
    """Frobenius norm of ``omega^T omega - I``."""
    return np.linalg.norm(omega.T @ omega - np.eye(omega.shape[0]))


@dataclass
class MrstModel:
    """Learned transform stack plus the per-layer learning thresholds."""

    transforms: list
    thresholds: np.ndarray

    def __post_init__(self):
        self.transforms = [np.asarray(t, dtype=np.float64) for t in self.transforms]
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)
        if not self.transforms:
            raise ConfigError("model needs at least one layer")
        p = self.transforms[0].shape[0]
        for l, t in enumerate(self.transforms, start=1):
            if t.shape != (p, p):
                raise ConfigError(f"transform {l} has shape {t.shape}, expected {(p, p)}")
            err = unitarity_error(t)
            if not err <= UNITARY_TOL:
                raise ValueError(f"transform {l} is not unitary (error {err:.3e})")
        if self.thresholds.size != len(self.transforms):
            raise ConfigError(
                f"{self.thresholds.size} thresholds given for {len(self.transforms)} layers")
        if np.any(self.thresholds < 0):
            raise ConfigError("thresholds must be nonnegative")

    @property
    def layers(self):
        return len(self.transforms)

    @property
    def p(self):
        return self.transforms[0].shape[0]


def geometric_thresholds(layers, first=30.0, ratio=0.5):
    """Default threshold ladder ``first * ratio**(l-1)``."""
    return first * ratio ** np.arange(layers)


@dataclass
class LearnConfig:
    iterations: int = 100
    thresholds: np.ndarray = field(default_factory=lambda: geometric_thresholds(2))
    patch: PatchConfig = field(default_factory=PatchConfig)
    seed: int = 0

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if np.any(self.thresholds < 0):
            raise ConfigError("thresholds must be nonnegative")

    @property
    def layers(self):
        return self.thresholds.size


def dct_matrix(n):
    """Orthonormal 1D DCT-II matrix; row ``k`` is the ``k``-th cosine atom."""
    return scipy.fft.dct(np.eye(n), norm="ortho", axis=0)


def init_model(layers, p, thresholds=None):
    """2D DCT in the first layer, identities below.

    The 2D DCT is ``kron(D, D)``, which acts on row-major vectorized patches.
    """
    side = int(round(np.sqrt(p)))
    if side * side != p:
        raise ConfigError(f"p={p} is not a perfect square")
    if layers < 1:
        raise ConfigError("layers must be >= 1")
    d = dct_matrix(side)
    transforms = [np.kron(d, d)] + [np.eye(p) for _ in range(layers - 1)]
    if thresholds is None:
        thresholds = np.zeros(layers)
    return MrstModel(transforms, thresholds)


def hard_threshold(a, threshold):
    """Zero the entries with magnitude strictly below ``threshold``."""
    return np.where(np.abs(a) < threshold, 0.0, a)


def _check_codes(transforms, codes):
    if len(codes) != len(transforms):
        raise ConfigError(f"{len(codes)} code maps for {len(transforms)} layers")


def residual_stack(r1, transforms, codes):
    """Residual maps ``[R_1, ..., R_L]`` from the layer recursion."""
    _check_codes(transforms, codes)
    res = [np.asarray(r1, dtype=np.float64)]
    for omega, z in zip(transforms[:-1], codes[:-1]):
        if z.shape != res[-1].shape:
            raise ConfigError(f"code shape {z.shape} does not match residual {res[-1].shape}")
        res.append(omega @ res[-1] - z)
    return res


def _update_residuals(res, transforms, codes, start):
    # recompute R_{start+1}..R_L (0-based list positions start..L-1)
    for i in range(max(start, 1), len(transforms)):
        res[i] = transforms[i - 1] @ res[i - 1] - codes[i - 1]


def backprop_matrix(transforms, codes, p_idx, q_idx):
    """Carry the codes of layers ``p_idx+1 .. q_idx`` back to layer ``p_idx``.

    Returns ``sum_{k=p+1}^{q} W_{p+1}^T ... W_k^T Z_k``; ``p_idx = 0`` maps all
    the way back to the patch domain.
    """
    _check_codes(transforms, codes)
    if not 0 <= p_idx < q_idx <= len(transforms):
        raise ConfigError(f"need 0 <= p < q <= L, got p={p_idx}, q={q_idx}")
    acc = codes[q_idx - 1]
    for k in range(q_idx - 1, p_idx, -1):
        acc = codes[k - 1] + transforms[k].T @ acc
    return transforms[p_idx].T @ acc


def backprop_sum(transforms, codes, layer):
    """``sum_{i=layer+1}^{L} B_layer^i``, or ``None`` when ``layer == L``.

    Each ``Z_k`` appears in ``L - k + 1`` of the terms, so the sum collapses to
    one nested product evaluated from the deepest layer up.
    """
    n = len(transforms)
    if layer >= n:
        return None
    acc = codes[n - 1]
    for k in range(n - 1, layer, -1):
        acc = (n - k + 1) * codes[k - 1] + transforms[k].T @ acc
    return transforms[layer].T @ acc


def sparse_code_target(transforms, codes, residuals, layer):
    """Unthresholded minimizer of the layer's sparse coding subproblem."""
    n = len(transforms)
    a = transforms[layer - 1] @ residuals[layer - 1]
    bsum = backprop_sum(transforms, codes, layer)
    if bsum is not None:
        a = a - bsum / (n - layer + 1)
    return a


def sparse_code(transforms, codes, residuals, layer, threshold):
    """Exact minimizer over ``Z_layer`` with every other block fixed.

    ``residuals`` must be current for ``codes``; keeping them fresh is the
    caller's job.
    """
    n = len(transforms)
    if not 1 <= layer <= n:
        raise ConfigError(f"layer must lie in [1, {n}], got {layer}")
    a = sparse_code_target(transforms, codes, residuals, layer)
    return hard_threshold(a, threshold / np.sqrt(n - layer + 1))


def sparse_code_learn(model, codes, residuals, layer):
    return sparse_code(model.transforms, codes, residuals, layer,
                       model.thresholds[layer - 1])


def transform_gram(transforms, codes, residuals, layer):
    """The matrix ``G`` whose polar factor gives the optimal transform."""
    n = len(transforms)
    target = codes[layer - 1]
    bsum = backprop_sum(transforms, codes, layer)
    if bsum is not None:
        target = target + bsum / (n - layer + 1)
    return residuals[layer - 1] @ target.T


def procrustes(g):
    """Unitary ``V U^T`` from the SVD ``g = U S V^T``; maximizes ``tr(Q g)``."""
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite entries in transform update matrix")
    u, _, vt = np.linalg.svd(g)
    return vt.T @ u.T


def transform_update(model, codes, residuals, layer):
    """Exact minimizer over ``W_layer`` subject to unitarity."""
    transforms = model.transforms if isinstance(model, MrstModel) else model
    if not 1 <= layer <= len(transforms):
        raise ConfigError(f"layer must lie in [1, {len(transforms)}], got {layer}")
    return procrustes(transform_gram(transforms, codes, residuals, layer))


def learn_objective(transforms, codes, residuals, thresholds):
    """``sum_l ||W_l R_l - Z_l||_F^2 + eta_l^2 ||Z_l||_0``."""
    total = 0.0
    for omega, z, r, eta in zip(transforms, codes, residuals, thresholds):
        total += np.sum((omega @ r - z) ** 2) + eta ** 2 * np.count_nonzero(z)
    return total


def learn(training, cfg, model=None, callback=None):
    """Learn an MRST model by exact block coordinate descent.

    Each iteration updates ``Z_1 .. Z_L`` then ``W_1 .. W_L``, refreshing the
    downstream residuals after every block so each step is an exact block
    minimization and the objective cannot increase.

    Args:
        training: ``(p, N)`` array of vectorized patches.
        cfg: :class:`LearnConfig`; its thresholds fix the number of layers.
        model: optional starting model (default: :func:`init_model`).
        callback: called as ``callback(iteration, kind, layer, transforms,
            codes, residuals)`` after every block update, ``kind`` being
            ``"code"`` or ``"transform"``.

    Returns:
        ``(model, codes, trace)`` with the objective after each iteration.
    """
    training = np.asarray(training, dtype=np.float64)
    if not np.all(np.isfinite(training)):
        raise ValueError("training data contains non-finite values")
    p = training.shape[0]
    if p != cfg.patch.p:
        raise ConfigError(f"training has {p} rows, patch config expects {cfg.patch.p}")
    n = cfg.layers
    if model is None:
        model = init_model(n, p, cfg.thresholds)
    transforms = [t.copy() for t in model.transforms]
    eta = cfg.thresholds
    codes = [np.zeros_like(training) for _ in range(n)]
    res = residual_stack(training, transforms, codes)
    trace = []
    for it in range(cfg.iterations):
        for l in range(1, n + 1):
            codes[l - 1] = sparse_code(transforms, codes, res, l, eta[l - 1])
            _update_residuals(res, transforms, codes, l)
            if callback is not None:
                callback(it, "code", l, transforms, codes, res)
        for l in range(1, n + 1):
            transforms[l - 1] = procrustes(transform_gram(transforms, codes, res, l))
            _update_residuals(res, transforms, codes, l)
            if callback is not None:
                callback(it, "transform", l, transforms, codes, res)
        trace.append(learn_objective(transforms, codes, res, eta))
    return MrstModel(transforms, eta), codes, np.array(trace)


def learn_single_layer(training, cfg, omega=None):
    """Classic single-layer transform learning, kept separate as a reference path.

    Alternates ``Z = H_eta(W X)`` and ``W = V U^T`` with ``X Z^T = U S V^T``.
    """
    x = np.asarray(training, dtype=np.float64)
    if cfg.layers != 1:
        raise ConfigError("single-layer learning takes exactly one threshold")
    eta = cfg.thresholds[0]
    if omega is None:
        omega = init_model(1, x.shape[0]).transforms[0]
    omega = omega.copy()
    z = np.zeros_like(x)
    trace = []
    for _ in range(cfg.iterations):
        z = hard_threshold(omega @ x, eta)
        omega = procrustes(x @ z.T)
        trace.append(np.sum((omega @ x - z) ** 2) + eta ** 2 * np.count_nonzero(z))
    return MrstModel([omega], [eta]), [z], np.array(trace)
