"""Training objectives: reconstruction likelihood, KL-regularized evidence
bound, classifier cross-entropy, and the task-related contrastive loss.

All operations accept and return autodiff tensors so they can sit on the
training graph; plain floats are lifted to constants.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, DimensionError

log = logging.getLogger(__name__)

PROB_EPS = 1e-7
NORM_EPS = 1e-24


@dataclass
class LossBreakdown:
    """Per-term loss values for one forward pass.

    ``total`` always equals ``-(recon_total - kl) + alpha*bce + beta*tmc``;
    ``node`` holds the differentiable total for the backward pass.
    """

    recon_per_view: tuple
    recon_total: float
    kl: float
    bce: float
    tmc: float
    total: float
    node: Tensor = field(default=None, repr=False, compare=False)


@dataclass
class ContrastiveBatch:
    """Paired complete/task-related representation batches plus temperature."""

    complete_reps: Tensor
    task_related_reps: Tensor
    temperature: float = 1.5

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractError("contrastive batch: temperature must be positive")
        if self.complete_reps.shape != self.task_related_reps.shape:
            raise DimensionError(
                "contrastive batch: representation shapes differ: "
                f"{self.complete_reps.shape} vs {self.task_related_reps.shape}")


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def recon_log_likelihood(reconstruction, target, batched=True):
    """Unit-variance Gaussian log-likelihood up to scale and an additive
    constant: -0.5 * squared error, averaged over batch and feature
    dimensions (per-element mean, the convention ubiquitous in deep
    learning frameworks; it keeps the loss terms on comparable scales
    regardless of view dimensionality)."""
    reconstruction = _lift(reconstruction)
    target = _lift(target)
    if reconstruction.shape != target.shape:
        raise DimensionError(
            f"recon: shapes differ: {reconstruction.shape} vs {target.shape}")
    d = reconstruction - target
    sq = d * d
    return sq.mean() * -0.5 if sq.ndim else sq * -0.5


def elbo(recon_ll_total, kl):
    """Evidence lower bound: reconstruction log-likelihood minus KL.

    KL must be non-negative; float noise below 1e-12 is tolerated.
    """
    kl = _lift(kl)
    if float(np.min(kl.data)) < -1e-12:
        raise ContractError("elbo: kl must be non-negative")
    return _lift(recon_ll_total) - kl


def bce(prediction, label):
    """Binary cross-entropy, batch-averaged; predictions are clamped to
    [1e-7, 1 - 1e-7] so the logs stay finite."""
    prediction = _lift(prediction)
    label = _lift(label)
    p = prediction.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = label
    term = y * p.log() + (1.0 - y) * (1.0 - p).log()
    loss = -term
    return loss.mean() if loss.ndim else loss


def cosine_similarity(a, b):
    """Cosine of the angle between two vectors; 0 for degenerate inputs.

    A plain numpy metric (no gradient); the contrastive loss builds its own
    differentiable similarity graph.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        log.info("cosine_similarity: zero vector, returning 0")
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _row_normalize(z):
    """Scale each row of a rank-2 tensor to unit norm (differentiable)."""
    sq = (z * z).sum(axis=1)
    inv = (sq.clamp(NORM_EPS, None).log() * -0.5).exp()
    b, d = z.shape
    scale = inv.reshape(b, 1) @ Tensor(np.ones((1, d)))
    return z * scale


def tmc_loss(batch, include_positive_in_denominator=False):
    """Contrastive alignment of complete and task-related representations.

    For anchor i, the positive score is exp(cos(z_c_i, z_t_i)/tau); the
    negative score sums, over all other samples j, the exponentiated
    complete-complete, complete-task, and task-task similarities. The loss
    is the batch mean of -log(positive/negative). The cross similarity is
    directional: the anchor contributes its complete representation.

    ``include_positive_in_denominator`` switches to the conventional
    normalized form in which the positive score joins the denominator;
    default off.
    """
    zc, zt = batch.complete_reps, batch.task_related_reps
    if zc.ndim != 2:
        raise DimensionError("tmc_loss: expects (batch, dim) representations")
    n = zc.shape[0]
    if n < 2:
        raise ContractError("tmc_loss: needs a batch of at least 2 for negatives")
    inv_tau = 1.0 / batch.temperature

    zc_n = _row_normalize(zc)
    zt_n = _row_normalize(zt)
    zc_t = zc_n.transpose()
    zt_t = zt_n.transpose()

    sim_cc = zc_n @ zc_t
    sim_ct = zc_n @ zt_t
    sim_tt = zt_n @ zt_t

    off_diag = Tensor(1.0 - np.eye(n))
    exp_sum = ((sim_cc * inv_tau).exp() + (sim_ct * inv_tau).exp()
               + (sim_tt * inv_tau).exp()) * off_diag
    negatives = exp_sum.sum(axis=1)

    eye = Tensor(np.eye(n))
    positive_sim = (sim_ct * eye).sum(axis=1)

    if include_positive_in_denominator:
        negatives = negatives + (positive_sim * inv_tau).exp()

    # -log(S_p / S_n) = log S_n - sim_ii / tau
    per_anchor = negatives.log() - positive_sim * inv_tau
    return per_anchor.mean()


def total_loss(elbo_value, bce_value, tmc_value, alpha=1.0, beta=1.0):
    """Joint objective: negative evidence bound plus weighted classifier
    and contrastive terms."""
    if alpha < 0 or beta < 0:
        raise ContractError("total_loss: alpha and beta must be non-negative")
    out = -_lift(elbo_value) + _lift(bce_value) * alpha
    if beta != 0.0:
        out = out + _lift(tmc_value) * beta
    return out
