"""Finite-difference checks of the reverse-mode gradients.

Each check reduces a (possibly vector-valued) function to a scalar by a
fixed random projection, then compares :func:`tensor.reverse_grad` with
central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import tensor as T
from .descriptors import DescriptorSet, soft_degree_histogram, transition_matrix, triangle_count
from .graphs import generate_lobster, pad_to
from .model import Batch, ModelConfig, as_leaves, init_params
from .objective import SigmaState, TrainConfig, descriptor_targets, mm_elbo_loss

FD_STEP = 1e-5
DESCRIPTOR_TOL = 1e-4
END_TO_END_TOL = 1e-3
# entries whose magnitude is below this fraction of the largest gradient
# entry are compared absolutely: their relative error is pure FD noise
ABS_FLOOR = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<24} max rel err {self.max_rel_error:.3e}  (tol {self.tolerance:g})"


def gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    return T.relative_error(analytic, numeric, floor=max(ABS_FLOOR * scale, 1e-12))


def check_function(name: str, fn: Callable[[T.Node], T.Node], x0: np.ndarray, tol: float,
                   h: float = FD_STEP) -> CheckResult:
    """Compare gradients of ``fn`` (already scalar) at ``x0``."""
    t0 = time.perf_counter()
    x = T.leaf(x0)
    analytic = T.reverse_grad(fn(x), wrt=[x])[x]
    numeric = T.finite_difference_grad(lambda v: float(fn(T.constant(v)).value), x0, h)
    return CheckResult(name, gradient_error(analytic, numeric), tol, time.perf_counter() - t0)


def _projected(fn, shape_probe: np.ndarray, rng):
    w = rng.standard_normal(np.shape(fn(T.constant(shape_probe)).value))
    return lambda a: T.sum_(fn(a) * w)


def _symmetric_soft(n: int, rng) -> np.ndarray:
    u = rng.uniform(0.05, 0.95, size=(n, n))
    a = np.triu(u, 1)
    return a + a.T


def descriptor_checks(seed: int = 0, n: int = 7) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    a0 = _symmetric_soft(n, rng)
    out = []
    # inputs are full matrices: symmetry is not imposed on the perturbation
    fn = _projected(lambda a: soft_degree_histogram(a, n + 1), a0, rng)
    out.append(check_function("soft_degree_histogram", fn, a0, DESCRIPTOR_TOL))
    for s in range(1, 6):
        fn = _projected(lambda a, s=s: transition_matrix(a, s), a0, rng)
        out.append(check_function(f"transition_matrix s={s}", fn, a0, DESCRIPTOR_TOL))
    fn = _projected(triangle_count, a0, rng)
    out.append(check_function("triangle_count", fn, a0, DESCRIPTOR_TOL))
    return out


def tiny_model_config(n_max: int = 8) -> ModelConfig:
    return ModelConfig(n_max=n_max, gcn_dims=[4, 5], readout_fc_dim=6, latent_dim=3, decoder_dims=[6, 6])


def end_to_end_check(seed: int = 0, n_max: int = 8, gamma: float = 40.0, beta: float = 1.5e3) -> CheckResult:
    """Gradient of the full micro-macro loss w.r.t. every model parameter."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    graphs = [generate_lobster(3, rng=rng, min_nodes=6, max_nodes=n_max) for _ in range(2)]
    batch = Batch.stack([pad_to(g, n_max) for g in graphs])
    cfg = TrainConfig(gamma=gamma, beta=beta)
    dset = DescriptorSet.default(n_max + 1)
    targets = descriptor_targets(dset, batch)
    params = init_params(tiny_model_config(n_max), rng)
    eps_seed = int(rng.integers(2**31))

    def loss(p, sigmas):
        return mm_elbo_loss(batch, p, dset, sigmas, cfg, np.random.default_rng(eps_seed), targets)

    # sigmas fixed at their value for the current parameters
    sigmas = loss(params, None).sigmas
    sigmas = SigmaState(dict(sigmas.values), sigmas.floor)
    leaves = as_leaves(params)
    grads = T.reverse_grad(loss(leaves, sigmas).total, wrt=leaves.values())
    analytic = np.concatenate([grads[leaves[k]].ravel() for k in params])
    flat = np.concatenate([params[k].ravel() for k in params])
    shapes = [(k, params[k].shape, params[k].size) for k in params]

    def unflatten(v):
        out, i = {}, 0
        for k, shape, size in shapes:
            out[k] = v[i:i + size].reshape(shape)
            i += size
        return out

    numeric = T.finite_difference_grad(lambda v: float(loss(unflatten(v), sigmas).total.value), flat)
    return CheckResult("mm_elbo_loss end-to-end", gradient_error(analytic, numeric), END_TO_END_TOL,
                       time.perf_counter() - t0)


def run_all(seed: int = 0) -> List[CheckResult]:
    return descriptor_checks(seed) + [end_to_end_check(seed)]
