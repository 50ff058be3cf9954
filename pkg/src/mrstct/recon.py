"""PWLS reconstruction with a learned MRST regularizer.

Solves ``min_{x>=0} 1/2 ||y - A x||_W^2 + beta * R(x)`` where ``R`` is the
layered transform-domain sparsity cost of the image patches. The outer loop
alternates a relaxed OS-LALM image update (codes fixed) with the closed-form
sparse coding of every layer (image fixed).

Images are handled as flat float64 vectors inside the solver and in modified
HU; the system matrix is scaled by the attenuation of one HU so the data term
matches the post-log sinogram.
"""
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import ctsim, mrst
from .imaging import ConfigError, Image, PatchConfig, accumulate_patches, extract_patches, overlap_counts

log = logging.getLogger(__name__)


@dataclass
class ReconConfig:
    """Reconstruction parameters.

    ``gammas`` are the per-layer sparsity thresholds (their count must equal
    the model depth); ``beta`` weights the regularizer. ``rho_min`` clamps the
    decreasing relaxation schedule.
    """

    beta: float
    gammas: list
    outer_iters: int = 200
    inner_iters: int = 2
    subsets: int = 4
    alpha: float = 1.999
    rho_min: float = 1e-2
    patch: PatchConfig = field(default_factory=PatchConfig)

    def __post_init__(self):
        self.gammas = [float(g) for g in np.atleast_1d(self.gammas)]
        errors = []
        if not self.beta >= 0:
            errors.append("beta must be >= 0")
        if any(g < 0 for g in self.gammas):
            errors.append("gammas must be >= 0")
        if not 1 < self.alpha < 2:
            errors.append("alpha must lie in (1, 2)")
        if self.outer_iters < 1 or self.inner_iters < 1 or self.subsets < 1:
            errors.append("outer_iters, inner_iters and subsets must be >= 1")
        if not 0 < self.rho_min <= 1:
            errors.append("rho_min must lie in (0, 1]")
        if errors:
            raise ConfigError("; ".join(errors))


def rho_schedule(r, alpha, rho_min=1e-2):
    """Relaxation parameter for sub-iteration ``r`` (restarting each image update)."""
    if r == 0:
        return 1.0
    c = np.pi / (alpha * (r + 1))
    return float(np.clip(c * np.sqrt(1.0 - (c / 2) ** 2), rho_min, 1.0))


def bit_reversal_order(m):
    """Visit order of ``m`` subsets that spreads consecutive subsets apart."""
    bits = max(1, int(np.ceil(np.log2(m))))
    rev = [int(format(i, f"0{bits}b")[::-1], 2) for i in range(2 ** bits)]
    return [i for i in rev if i < m]


@dataclass
class PwlsProblem:
    """Everything the image update needs that stays fixed across iterations."""

    a: object
    y: np.ndarray
    weights: np.ndarray
    width: int
    height: int
    pixel_size: float
    subsets: list
    d_a: np.ndarray

    @classmethod
    def build(cls, sino, width, height, pixel_size, n_subsets=1):
        geo = sino.geometry
        if n_subsets > geo.n_angles:
            raise ConfigError(f"{n_subsets} subsets for only {geo.n_angles} angles")
        a = ctsim.system_matrix(geo, width, height, pixel_size) * ctsim.HU_SCALE
        a = a.tocsr()
        ray_angle = np.repeat(np.arange(geo.n_angles), geo.n_detectors)
        subsets = []
        for m in bit_reversal_order(n_subsets):
            rows = np.flatnonzero(ray_angle % n_subsets == m)
            subsets.append((a[rows], sino.y[rows], sino.weights[rows]))
        d_a = ctsim.majorizer_diag(a, sino.weights)
        return cls(a, sino.y, sino.weights, width, height, pixel_size, subsets, d_a)

    def data_term(self, x):
        r = self.y - self.a @ x
        return 0.5 * np.sum(self.weights * r * r)

    def subset_gradient(self, m, x):
        am, ym, wm = self.subsets[m]
        return len(self.subsets) * (am.T @ (wm * (am @ x - ym)))


@dataclass
class OsLalmState:
    x: np.ndarray
    s: np.ndarray
    g: np.ndarray
    h: np.ndarray
    zeta: np.ndarray
    rho: float = 1.0


def grad_r2(x, transforms, codes, beta, patch, width, height):
    """Gradient of ``beta * R2`` with the codes held fixed.

    Because every transform is unitary, layer ``l`` contributes
    ``||P x - B_0^l||^2`` to ``R2``, so the gradient is
    ``2 beta sum_j P_j^T (L P_j x - sum_k B_0^k)``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(height, width)
    px = extract_patches(x, patch)
    n = len(transforms)
    back = mrst.backprop_sum(transforms, codes, 0)
    return 2.0 * beta * accumulate_patches(n * px - back, patch, width, height)


def r2_value(x, transforms, codes, patch, width, height):
    """``sum_l ||W_l R_l - Z_l||_F^2`` by the explicit residual recursion."""
    r1 = extract_patches(np.asarray(x, dtype=np.float64).reshape(height, width), patch)
    res = mrst.residual_stack(r1, transforms, codes)
    return sum(np.sum((w @ r - z) ** 2) for w, r, z in zip(transforms, res, codes))


def hessian_r2_diag(beta, patch, width, height, layers):
    """Exact (diagonal) Hessian ``2 L beta sum_j P_j^T P_j`` of ``beta * R2``."""
    return 2.0 * layers * beta * overlap_counts(patch, width, height)


def sparse_code_recon(x, transforms, codes, gammas, patch, width, height, layer):
    """Closed-form update of layer ``layer``'s code map with the image fixed."""
    r1 = extract_patches(np.asarray(x, dtype=np.float64).reshape(height, width), patch)
    res = mrst.residual_stack(r1, transforms, codes)
    return mrst.sparse_code(transforms, codes, res, layer, gammas[layer - 1])


def sparse_code_all(x, transforms, codes, gammas, patch, width, height):
    """Update ``Z_1 .. Z_L`` in order, refreshing residuals after each."""
    r1 = extract_patches(np.asarray(x, dtype=np.float64).reshape(height, width), patch)
    codes = list(codes)
    res = mrst.residual_stack(r1, transforms, codes)
    for l in range(1, len(transforms) + 1):
        codes[l - 1] = mrst.sparse_code(transforms, codes, res, l, gammas[l - 1])
        mrst._update_residuals(res, transforms, codes, l)
    return codes


def pwls_objective(x, codes, problem, transforms, beta, gammas, patch):
    """Full penalized cost including the ``gamma_l^2 ||Z_l||_0`` terms."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    reg = r2_value(x, transforms, codes, patch, problem.width, problem.height)
    reg += sum(g ** 2 * np.count_nonzero(z) for g, z in zip(gammas, codes))
    return problem.data_term(x) + beta * reg


def init_state(x0, problem):
    x = np.asarray(x0, dtype=np.float64).reshape(-1).copy()
    zeta = problem.subset_gradient(len(problem.subsets) - 1, x)
    return OsLalmState(x=x, s=np.zeros_like(x), g=zeta.copy(),
                       h=problem.d_a * x - zeta, zeta=zeta, rho=1.0)


def pwls_image_update(state, problem, grad, d_r, inner_iters, alpha=1.999, rho_min=1e-2):
    """Relaxed OS-LALM sweeps for the image with the regularizer frozen.

    ``grad(x)`` returns the flat regularizer gradient and ``d_r`` its diagonal
    Hessian. Runs ``inner_iters`` passes over all subsets, updating the state
    in place and returning it.
    """
    x, g, h = state.x, state.g, state.h
    d_a = problem.d_a
    n_sub = len(problem.subsets)
    for n in range(inner_iters):
        for m in range(n_sub):
            r = n * n_sub + m
            rho = rho_schedule(r, alpha, rho_min)
            s = rho * (d_a * x - h) + (1 - rho) * g
            x = np.maximum(x - (s + grad(x)) / (rho * d_a + d_r), 0.0)
            zeta = problem.subset_gradient(m, x)
            g = rho / (rho + 1) * (alpha * zeta + (1 - alpha) * g) + g / (rho + 1)
            h = alpha * (d_a * x - zeta) + (1 - alpha) * h
            if not np.all(np.isfinite(x)):
                raise FloatingPointError(f"non-finite image at sub-iteration {r}")
            state.s, state.zeta, state.rho = s, zeta, rho
    state.x, state.g, state.h = x, g, h
    return state


@dataclass
class ReconResult:
    image: Image
    codes: list
    trace: list


def reconstruct(sino, model, cfg, init, reference=None, roi=None, log_stream=None):
    """PWLS-MRST reconstruction by outer block coordinate descent.

    Args:
        sino: measured :class:`~mrstct.ctsim.SinogramSet`.
        model: learned :class:`~mrstct.mrst.MrstModel` (or a list of transforms).
        cfg: :class:`ReconConfig`.
        init: starting :class:`Image`, usually the FBP result; fixes the grid.
        reference: optional ground truth for an RMSE trace.
        roi: optional boolean mask for that RMSE.
        log_stream: optional text stream receiving one JSON record per outer
            iteration.

    Returns:
        :class:`ReconResult` with the image, final codes and per-iteration
        records (iteration, objective, rmse, seconds).
    """
    from .metrics import rmse

    transforms = model.transforms if isinstance(model, mrst.MrstModel) else list(model)
    n_layers = len(transforms)
    if len(cfg.gammas) != n_layers:
        raise ConfigError(f"{len(cfg.gammas)} gammas for a {n_layers}-layer model")
    if transforms[0].shape[0] != cfg.patch.p:
        raise ConfigError(f"model patch size {transforms[0].shape[0]} != {cfg.patch.p}")
    width, height, ps = init.width, init.height, init.pixel_size
    problem = PwlsProblem.build(sino, width, height, ps, cfg.subsets)
    d_r = hessian_r2_diag(cfg.beta, cfg.patch, width, height, n_layers).reshape(-1)
    x = np.maximum(init.data.reshape(-1), 0.0)
    npatch = extract_patches(init.data, cfg.patch).shape[1]
    codes = [np.zeros((cfg.patch.p, npatch)) for _ in range(n_layers)]
    trace = []
    t0 = time.perf_counter()
    for t in range(cfg.outer_iters):
        frozen = codes

        def grad(v):
            return grad_r2(v, transforms, frozen, cfg.beta, cfg.patch, width, height).reshape(-1)

        state = init_state(x, problem)
        x = pwls_image_update(state, problem, grad, d_r, cfg.inner_iters,
                              cfg.alpha, cfg.rho_min).x
        codes = sparse_code_all(x, transforms, codes, cfg.gammas, cfg.patch, width, height)
        rec = {"iteration": t + 1,
               "objective": pwls_objective(x, codes, problem, transforms,
                                           cfg.beta, cfg.gammas, cfg.patch)}
        if reference is not None:
            rec["rmse"] = rmse(reference, x.reshape(height, width), roi)
        rec["seconds"] = round(time.perf_counter() - t0, 3)
        trace.append(rec)
        if log_stream is not None:
            log_stream.write(json.dumps(rec) + "\n")
        log.debug("outer %d: %s", t + 1, rec)
    return ReconResult(Image(x.reshape(height, width), ps), codes, trace)


def reconstruct_single_layer(sino, omega, cfg, init):
    """PWLS with one learned transform, written without the layer machinery.

    Serves as the reference the one-layer MRST path must reproduce exactly.
    """
    if len(cfg.gammas) != 1:
        raise ConfigError("single-layer reconstruction takes one gamma")
    omega = np.asarray(omega, dtype=np.float64)
    gamma = cfg.gammas[0]
    width, height, ps = init.width, init.height, init.pixel_size
    patch = cfg.patch
    problem = PwlsProblem.build(sino, width, height, ps, cfg.subsets)
    d_r = (2.0 * 1 * cfg.beta * overlap_counts(patch, width, height)).reshape(-1)
    x = np.maximum(init.data.reshape(-1), 0.0)
    z = np.zeros((patch.p, extract_patches(init.data, patch).shape[1]))
    for _ in range(cfg.outer_iters):
        zf = z

        def grad(v):
            px = extract_patches(v.reshape(height, width), patch)
            return 2.0 * cfg.beta * accumulate_patches(
                1 * px - omega.T @ zf, patch, width, height).reshape(-1)

        state = init_state(x, problem)
        x = pwls_image_update(state, problem, grad, d_r, cfg.inner_iters,
                              cfg.alpha, cfg.rho_min).x
        z = mrst.hard_threshold(omega @ extract_patches(x.reshape(height, width), patch),
                                gamma / np.sqrt(1))
    return Image(x.reshape(height, width), ps)
