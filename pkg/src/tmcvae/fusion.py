"""Closed-form algebra of diagonal-Gaussian posteriors.

Single-view posteriors are combined by precision-weighted products
(product of experts), uniform mixtures (mixture of experts), or a uniform
mixture over the products of every non-empty view subset. All operations
work on autodiff tensors, so gradients flow back into the posterior
parameters. Means and log-variances may be rank-1 vectors or rank-2
``(batch, dim)`` matrices; the algebra is elementwise either way.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DimensionError, MissingViewError

LOG_VAR_MIN = -20.0
LOG_VAR_MAX = 20.0

FUSION_MODES = ("mopoe", "moe", "poe")


@dataclass
class DiagonalGaussian:
    """Gaussian with diagonal covariance, parameterized by mean and log-variance.

    Log-variance is clamped to [-20, 20] on construction so that every
    downstream exp() stays finite.
    """

    mean: Tensor
    log_var: Tensor

    def __post_init__(self):
        if not isinstance(self.mean, Tensor):
            self.mean = Tensor(self.mean)
        if not isinstance(self.log_var, Tensor):
            self.log_var = Tensor(self.log_var)
        if self.mean.shape != self.log_var.shape:
            raise DimensionError(
                f"gaussian: mean shape {self.mean.shape} != log_var shape {self.log_var.shape}")
        self.log_var = self.log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX)

    @property
    def dim(self):
        return self.mean.shape[-1] if self.mean.ndim else 1

    @property
    def shape(self):
        return self.mean.shape

    def mean_values(self):
        return self.mean.data

    def variance_values(self):
        return np.exp(self.log_var.data)


@dataclass(frozen=True)
class ViewSubset:
    """Non-empty set of view indices, canonically ordered by bitmask value."""

    mask: int

    def __post_init__(self):
        if self.mask <= 0:
            raise ContractError("subset: must contain at least one view")

    def members(self):
        out = []
        m, i = self.mask, 0
        while m:
            if m & 1:
                out.append(i)
            m >>= 1
            i += 1
        return tuple(out)

    def __len__(self):
        return bin(self.mask).count("1")


@dataclass
class MixturePosterior:
    """Uniform mixture of diagonal Gaussians sharing one latent dimension."""

    components: list = field(default_factory=list)

    def __post_init__(self):
        if not self.components:
            raise ContractError("mixture: needs at least one component")
        d = self.components[0].shape
        for c in self.components:
            if c.shape != d:
                raise DimensionError("mixture: components must share shape")

    @property
    def num_components(self):
        return len(self.components)

    @property
    def dim(self):
        return self.components[0].dim

    def mean_values(self):
        """Mixture mean: the uniform average of component means (no gradient)."""
        return np.mean([c.mean.data for c in self.components], axis=0)


def enumerate_subsets(num_views, mode):
    """View subsets selected by the fusion mode.

    mopoe enumerates every non-empty subset; moe keeps only singletons;
    poe keeps only the full view set.
    """
    if num_views < 1:
        raise ContractError("enumerate_subsets: num_views must be >= 1")
    if mode == "mopoe":
        return [ViewSubset(m) for m in range(1, 2 ** num_views)]
    if mode == "moe":
        return [ViewSubset(1 << i) for i in range(num_views)]
    if mode == "poe":
        return [ViewSubset(2 ** num_views - 1)]
    raise ContractError(f"enumerate_subsets: unknown mode {mode!r}")


def product_of_experts(experts, include_prior=True):
    """Precision-weighted product of Gaussian experts, optionally with a
    standard-normal prior expert.

    Per dimension: precision_out = sum(precisions) (+1 for the prior) and
    mean_out = sum(precision_i * mean_i) / precision_out. Implemented as a
    single fused graph node with analytic gradients for all experts.
    """
    if not experts:
        raise ContractError("product_of_experts: needs at least one expert")
    shape = experts[0].shape
    for e in experts:
        if e.shape != shape:
            raise DimensionError("product_of_experts: experts must share shape")

    if len(experts) >= 3:
        # float addition is not associative; a canonical accumulation order
        # makes the product bitwise invariant to expert ordering
        experts = sorted(
            experts, key=lambda e: (e.mean.data.tobytes(), e.log_var.data.tobytes()))

    means = [e.mean for e in experts]
    log_vars = [e.log_var for e in experts]
    lams = np.exp(np.negative([lv.data for lv in log_vars]))
    lam_total = lams.sum(axis=0)
    if include_prior:
        lam_total = lam_total + 1.0
    weighted = np.einsum("k...,k...->...", lams, np.asarray([m.data for m in means]))
    mu_out = weighted / lam_total
    lv_out = -np.log(lam_total)

    children = [t for t in (*means, *log_vars) if t.requires_grad]
    needs = bool(children)
    mean_node = Tensor(mu_out, requires_grad=needs,
                       _children=tuple(children), _op="poe_mean")
    lv_node = Tensor(lv_out, requires_grad=needs,
                     _children=tuple(children), _op="poe_log_var")

    if needs:
        def _backward_mean():
            g = mean_node.grad
            for m, lv, lam in zip(means, log_vars, lams):
                w = lam / lam_total
                if m.requires_grad:
                    m._accumulate(g * w)
                if lv.requires_grad:
                    lv._accumulate(g * (-(lam * (m.data - mu_out)) / lam_total))

        def _backward_lv():
            g = lv_node.grad
            for lv, lam in zip(log_vars, lams):
                if lv.requires_grad:
                    lv._accumulate(g * (lam / lam_total))

        mean_node._backward = _backward_mean
        lv_node._backward = _backward_lv

    return DiagonalGaussian(mean_node, lv_node)


def fuse(single_view_posteriors, subsets):
    """One product-of-experts component per subset, mixed uniformly.

    The prior participates in every product, so a singleton subset yields
    the prior-tempered single-view posterior rather than the raw one.
    """
    n = len(single_view_posteriors)
    components = []
    for subset in subsets:
        members = subset.members()
        for i in members:
            if i >= n or single_view_posteriors[i] is None:
                raise MissingViewError(f"fuse: subset references missing view {i}")
        experts = [single_view_posteriors[i] for i in members]
        components.append(product_of_experts(experts, include_prior=True))
    return MixturePosterior(components)


def kl_standard_normal(g, reduction="mean"):
    """KL(g || N(0, I)) reduced over the last axis.

    Per dimension the divergence is 0.5 * (mu^2 + var - 1 - log var).
    ``reduction`` "sum" gives the exact divergence in nats; the default
    "mean" averages per dimension, matching the per-element scale
    convention of the other training losses. Returns a scalar tensor for a
    rank-1 Gaussian and a per-sample vector for a batched one;
    differentiable w.r.t. mean and log-variance.
    """
    mean, log_var = g.mean, g.log_var
    var = np.exp(log_var.data)
    per_dim = 0.5 * (mean.data ** 2 + var - 1.0 - log_var.data)
    if per_dim.ndim:
        value = per_dim.sum(axis=-1) if reduction == "sum" else per_dim.mean(axis=-1)
        scale = 1.0 if reduction == "sum" else 1.0 / per_dim.shape[-1]
    else:
        value = per_dim
        scale = 1.0

    children = tuple(t for t in (mean, log_var) if t.requires_grad)
    out = Tensor(value, requires_grad=bool(children), _children=children, _op="gauss_kl")
    if children:
        def _backward():
            g_out = out.grad if not per_dim.ndim else np.expand_dims(out.grad, -1)
            if mean.requires_grad:
                mean._accumulate(g_out * scale * mean.data)
            if log_var.requires_grad:
                log_var._accumulate(g_out * (scale * 0.5) * (var - 1.0))
        out._backward = _backward
    return out


def mixture_kl_bound(m, reduction="mean"):
    """Convex upper bound on KL(mixture || N(0, I)): the average of the
    component KLs. Exact when the mixture has a single component. With
    ``reduction="sum"`` the value is in nats and dominates the true
    mixture KL; the default per-dimension mean is the same bound on the
    training-loss scale."""
    total = None
    for c in m.components:
        kl = kl_standard_normal(c, reduction=reduction)
        total = kl if total is None else total + kl
    return total * (1.0 / m.num_components)


def sample(m, noise, subset_pick):
    """Reparameterized draw from a uniform mixture.

    ``subset_pick`` chooses the component (an int, or one int per batch
    row); ``noise`` is a standard-normal draw of the component shape. The
    gradient flows through the chosen component's mean and log-variance,
    not through the discrete choice.

    Returns ``(z, picks)``.
    """
    noise = np.asarray(noise, dtype=np.float64)
    first = m.components[0]
    if noise.shape != first.shape:
        raise DimensionError(
            f"sample: noise shape {noise.shape} != component shape {first.shape}")
    eps = Tensor(noise)

    if m.num_components == 1:
        g = m.components[0]
        z = g.mean + (g.log_var * 0.5).exp() * eps
        picks = np.zeros(noise.shape[0], dtype=np.int64) if noise.ndim == 2 else 0
        return z, picks

    if first.mean.ndim == 1:
        k = int(subset_pick)
        if not 0 <= k < m.num_components:
            raise ContractError(f"sample: pick {k} out of range")
        g = m.components[k]
        z = g.mean + (g.log_var * 0.5).exp() * eps
        return z, k

    picks = np.asarray(subset_pick, dtype=np.int64)
    batch = first.mean.shape[0]
    if picks.shape != (batch,):
        raise DimensionError(f"sample: picks shape {picks.shape} != ({batch},)")
    if picks.min() < 0 or picks.max() >= m.num_components:
        raise ContractError("sample: pick out of range")

    means = [c.mean for c in m.components]
    log_vars = [c.log_var for c in m.components]
    mu_stack = np.asarray([t.data for t in means])
    lv_stack = np.asarray([t.data for t in log_vars])
    rows = np.arange(batch)
    sigma_sel = np.exp(0.5 * lv_stack[picks, rows])
    z_data = mu_stack[picks, rows] + sigma_sel * noise

    children = tuple(t for t in (*means, *log_vars) if t.requires_grad)
    z = Tensor(z_data, requires_grad=bool(children),
               _children=children, _op="mixture_sample")
    if children:
        def _backward():
            g = z.grad
            for k in range(len(means)):
                sel = picks == k
                if not sel.any():
                    continue
                if means[k].requires_grad:
                    gm = np.zeros_like(means[k].data)
                    gm[sel] = g[sel]
                    means[k]._accumulate(gm)
                if log_vars[k].requires_grad:
                    gl = np.zeros_like(log_vars[k].data)
                    gl[sel] = g[sel] * 0.5 * sigma_sel[sel] * noise[sel]
                    log_vars[k]._accumulate(gl)
        z._backward = _backward
    return z, picks
