"""Synthetic multi-view cocktail-party benchmark.

Each sample has a true latent source shared by the EEG view and the
attended speech view, while the unattended speech view is driven by an
independent distractor latent. Generation is a pure function of the
config, so fixed seeds give byte-identical datasets.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass
class SynthConfig:
    latent_dim_true: int = 8
    eeg_dim: int = 40
    speech_dim: int = 60
    noise_std: float = 0.3        # applies per view; see eeg_noise_std
    eeg_noise_std: float = None   # overrides noise_std for the EEG view
    n_samples: int = 6000
    balance: float = 0.5  # probability that speech 2 is the attended one
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim_true < 1 or self.eeg_dim < 1 or self.speech_dim < 1:
            raise ContractError("synth config: dimensions must be >= 1")
        if self.eeg_noise_std is None:
            self.eeg_noise_std = self.noise_std
        if self.noise_std < 0 or self.eeg_noise_std < 0:
            raise ContractError("synth config: noise levels must be >= 0")
        if not 0.0 <= self.balance <= 1.0:
            raise ContractError("synth config: balance must lie in [0, 1]")


@dataclass
class SynthDataset:
    """Generated samples; label 0 means speech 1 carries the shared latent."""

    eeg: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    labels: np.ndarray
    z_true: np.ndarray = None
    z_distract: np.ndarray = None
    config: SynthConfig = None

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return SynthDataset(
            eeg=self.eeg[idx], s1=self.s1[idx], s2=self.s2[idx],
            labels=self.labels[idx],
            z_true=None if self.z_true is None else self.z_true[idx],
            z_distract=None if self.z_distract is None else self.z_distract[idx],
            config=self.config)

    def arrays(self):
        out = {"eeg": self.eeg, "s1": self.s1, "s2": self.s2,
               "labels": self.labels.astype(np.float64)}
        if self.z_true is not None:
            out["z_true"] = self.z_true
        if self.z_distract is not None:
            out["z_distract"] = self.z_distract
        return out


def generate(config):
    """Draw a dataset: eeg = A z*, attended speech = B z*, unattended
    speech = B z_distract, all plus isotropic noise. A and B are fixed
    random maps derived from the seed; the attended position follows the
    configured balance."""
    rng = np.random.default_rng(config.seed)
    k = config.latent_dim_true

    a_map = rng.standard_normal((k, config.eeg_dim)) / np.sqrt(k)
    b_map = rng.standard_normal((k, config.speech_dim)) / np.sqrt(k)

    n = config.n_samples
    z_true = rng.standard_normal((n, k))
    z_distract = rng.standard_normal((n, k))
    labels = (rng.random(n) < config.balance).astype(np.int64)

    def noisy(x, std):
        return x + std * rng.standard_normal(x.shape)

    eeg = noisy(z_true @ a_map, config.eeg_noise_std)
    attended = noisy(z_true @ b_map, config.noise_std)
    unattended = noisy(z_distract @ b_map, config.noise_std)

    pos2 = labels.astype(bool)
    s1 = np.where(pos2[:, None], unattended, attended)
    s2 = np.where(pos2[:, None], attended, unattended)

    return SynthDataset(eeg=eeg, s1=s1, s2=s2, labels=labels,
                        z_true=z_true, z_distract=z_distract, config=config)


def split(dataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Label-stratified disjoint train/val/test split.

    Within each class the shuffled indices are carved by largest-remainder
    apportionment, so split sizes are exact and class balance is preserved
    to within one sample.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) \
            or abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError("split: fractions must be three non-negatives summing to 1")

    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for cls in (0, 1):
        idx = np.flatnonzero(dataset.labels == cls)
        rng.shuffle(idx)
        counts = _apportion(len(idx), fractions)
        at = 0
        for j, c in enumerate(counts):
            parts[j].append(idx[at:at + c])
            at += c
    out = []
    for j in range(3):
        merged = np.sort(np.concatenate(parts[j])) if parts[j] else np.array([], dtype=int)
        out.append(dataset.subset(merged))
    return tuple(out)


def _apportion(n, fractions):
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = np.argsort([c - r for c, r in zip(counts, raw)])
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def cross_covariance_top_singular(x, y):
    """Top singular value of the cross-covariance of two feature matrices;
    used to check which speech view shares the EEG's latent source."""
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    c = xc.T @ yc / len(x)
    return float(np.linalg.svd(c, compute_uv=False)[0])
