"""The multi-view VAE: per-view encoders, posterior fusion, decoders, and
the attention classifier.

The three views are EEG and the two speech stimuli. The speech encoders
and decoders share one parameter set (positions are statistically
exchangeable), while each view keeps private mean/log-variance heads, so
the fused representations can distinguish which position agreed with the
EEG. With ``tie_speech_heads`` the two speech heads start from identical
values and a freshly initialized model treats the positions exactly
symmetrically. The classifier's output layer starts at zero, which pins
the initial prediction to 0.5.

Vector features are processed as (batch, dim) matrices; image-like
features ([channels, h, w] per sample) run through convolution stacks one
sample at a time and are concatenated back into a batch.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ContractError, DimensionError, MissingViewError
from .fusion import (
    DiagonalGaussian,
    MixturePosterior,
    enumerate_subsets,
    fuse,
    mixture_kl_bound,
    sample,
)
from .losses import (
    ContrastiveBatch,
    LossBreakdown,
    bce,
    recon_log_likelihood,
    tmc_loss,
    total_loss,
)

VIEWS = ("eeg", "s1", "s2")


@dataclass
class MultiViewBatch:
    """One batch of aligned multi-view features plus optional labels.

    Vector views are (batch, dim) arrays; convolutional views are
    (batch, channels, h, w). Label 0 means speech 1 is the attended one.
    """

    eeg: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        n = len(self.eeg)
        if len(self.s1) != n or len(self.s2) != n:
            raise DimensionError("batch: views disagree on sample count")
        if self.labels is not None and len(self.labels) != n:
            raise DimensionError("batch: labels disagree on sample count")

    def __len__(self):
        return len(self.eeg)

    def view(self, name):
        return getattr(self, name)


@dataclass
class ModelConfig:
    """Architecture and loss weights for the multi-view VAE.

    Encoder/decoder specs are lists of layer entries:
    ``("affine", out_dim)``, ``("relu",)``,
    ``("conv2d", out_channels, (kh, kw), stride)``,
    ``("conv_transpose2d", out_channels, (kh, kw), stride)``,
    ``("reshape", (c, h, w))``.
    Decoders mirror encoders and end at the view's input shape.
    """

    latent_dim: int = 128
    fusion_mode: str = "mopoe"
    eeg_shape: tuple = (40,)
    speech_shape: tuple = (60,)
    eeg_encoder: list = None
    speech_encoder: list = None
    eeg_decoder: list = None
    speech_decoder: list = None
    classifier_hidden: tuple = (64, 32)
    common_dim: int = 64
    alpha: float = 1.0
    beta: float = 1.0
    temperature: float = 1.5
    tmc_enabled: bool = True
    infonce_denominator: bool = False
    tie_speech_heads: bool = False

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ContractError("config: latent_dim must be >= 1")
        if self.fusion_mode not in ("mopoe", "moe", "poe"):
            raise ContractError(f"config: unknown fusion mode {self.fusion_mode!r}")
        if len(self.classifier_hidden) != 2:
            raise ContractError("config: classifier takes exactly two hidden sizes "
                                "(three affine layers total)")
        if self.eeg_encoder is None:
            self.eeg_encoder = default_vector_encoder()
        if self.speech_encoder is None:
            self.speech_encoder = default_vector_encoder()
        if self.eeg_decoder is None:
            self.eeg_decoder = default_vector_decoder(self.eeg_shape)
        if self.speech_decoder is None:
            self.speech_decoder = default_vector_decoder(self.speech_shape)


def default_vector_encoder(hidden=64):
    return [("affine", hidden), ("relu",)]


def default_vector_decoder(out_shape, hidden=64):
    return [("affine", hidden), ("relu",), ("affine", int(np.prod(out_shape)))]


def paper_arch_config(window_seconds=3, latent_dim=128, **overrides):
    """Preset mirroring the published geometry: 4 convolution layers for the
    EEG encoder, 5 for the speech encoder, mirrored transposed-convolution
    decoders, and a 3-layer MLP classifier.

    Kernel sizes and channel counts are configuration, chosen here so every
    layer inverts exactly. EEG features are 5 bands x 10 channels x 384
    frames (128 Hz, 3 s); spectrograms are 257 bins x 248 frames (2 s
    windows are repeat-padded to the same geometry upstream).
    """
    eeg_shape = (5, 10, 384)
    speech_shape = (1, 257, 248)
    ch_e, ch_s = 16, 8
    eeg_encoder = [
        ("conv2d", ch_e, (4, 4), 2), ("relu",),
        ("conv2d", ch_e, (4, 5), 2), ("relu",),
        ("conv2d", ch_e, (1, 4), 2), ("relu",),
        ("conv2d", ch_e, (1, 4), 2), ("relu",),
    ]
    eeg_decoder = [
        ("affine", ch_e * 1 * 22), ("reshape", (ch_e, 1, 22)),
        ("conv_transpose2d", ch_e, (1, 4), 2), ("relu",),
        ("conv_transpose2d", ch_e, (1, 4), 2), ("relu",),
        ("conv_transpose2d", ch_e, (4, 5), 2), ("relu",),
        ("conv_transpose2d", 5, (4, 4), 2),
    ]
    speech_encoder = [
        ("conv2d", ch_s, (5, 4), 2), ("relu",),
        ("conv2d", ch_s, (5, 5), 2), ("relu",),
        ("conv2d", ch_s, (4, 4), 2), ("relu",),
        ("conv2d", ch_s, (4, 5), 2), ("relu",),
        ("conv2d", ch_s, (4, 5), 2), ("relu",),
    ]
    speech_decoder = [
        ("affine", ch_s * 6 * 5), ("reshape", (ch_s, 6, 5)),
        ("conv_transpose2d", ch_s, (4, 5), 2), ("relu",),
        ("conv_transpose2d", ch_s, (4, 5), 2), ("relu",),
        ("conv_transpose2d", ch_s, (4, 4), 2), ("relu",),
        ("conv_transpose2d", ch_s, (5, 5), 2), ("relu",),
        ("conv_transpose2d", 1, (5, 4), 2),
    ]
    cfg = dict(
        latent_dim=latent_dim,
        eeg_shape=eeg_shape,
        speech_shape=speech_shape,
        eeg_encoder=eeg_encoder,
        speech_encoder=speech_encoder,
        eeg_decoder=eeg_decoder,
        speech_decoder=speech_decoder,
    )
    cfg.update(overrides)
    return ModelConfig(**cfg)


@dataclass
class ForwardOutput:
    single_view_posteriors: tuple
    complete_posterior: MixturePosterior
    task_related_posterior: MixturePosterior
    z_c: Tensor
    z_t: Tensor
    reconstructions: tuple
    prediction: Tensor


class LayerStack:
    """A sequential network compiled from a layer-spec list."""

    def __init__(self, spec, input_shape, rng, name):
        self.spec = list(spec)
        self.name = name
        self.params = {}
        self.input_shape = tuple(input_shape)
        self._build(rng)

    def _param(self, key, array):
        t = Tensor(array, requires_grad=True)
        self.params[f"{self.name}.{key}"] = t
        return t

    def _build(self, rng):
        shape = self.input_shape
        self._compiled = []
        for idx, entry in enumerate(self.spec):
            kind = entry[0]
            if kind == "affine":
                out_dim = int(entry[1])
                in_dim = int(np.prod(shape))
                scale = np.sqrt(2.0 / in_dim)
                w = self._param(f"{idx}.w", scale * rng.standard_normal((in_dim, out_dim)))
                b = self._param(f"{idx}.b", np.zeros((1, out_dim)))
                self._compiled.append(("affine", w, b, in_dim))
                shape = (out_dim,)
            elif kind == "relu":
                self._compiled.append(("relu",))
            elif kind == "reshape":
                target = tuple(entry[1])
                if int(np.prod(shape)) != int(np.prod(target)):
                    raise DimensionError(
                        f"{self.name}: reshape {shape} -> {target} changes size")
                self._compiled.append(("reshape", target))
                shape = target
            elif kind == "conv2d":
                out_ch, (kh, kw), stride = int(entry[1]), entry[2], int(entry[3])
                c, h, w_ = shape
                scale = np.sqrt(2.0 / (c * kh * kw))
                k = self._param(f"{idx}.k", scale * rng.standard_normal((out_ch, c, kh, kw)))
                self._compiled.append(("conv2d", k, stride))
                shape = (out_ch, (h - kh) // stride + 1, (w_ - kw) // stride + 1)
            elif kind == "conv_transpose2d":
                out_ch, (kh, kw), stride = int(entry[1]), entry[2], int(entry[3])
                c, h, w_ = shape
                scale = np.sqrt(2.0 / (c * kh * kw))
                k = self._param(f"{idx}.k", scale * rng.standard_normal((c, out_ch, kh, kw)))
                self._compiled.append(("conv_transpose2d", k, stride))
                shape = (out_ch, (h - 1) * stride + kh, (w_ - 1) * stride + kw)
            else:
                raise ContractError(f"{self.name}: unknown layer kind {kind!r}")
        self.output_shape = shape

    @property
    def uses_conv(self):
        return any(e[0] in ("conv2d", "conv_transpose2d") for e in self.spec)

    def forward_rows(self, x):
        """Run a (batch, features) tensor through the stack.

        Convolutional entries process samples one at a time and the rows
        are concatenated back together.
        """
        if not self.uses_conv:
            return self._run_flat(x)
        rows = []
        batch = x.shape[0]
        for i in range(batch):
            sample_row = x._child(x.data[i:i + 1], (x,), "row")
            idx = i

            def _backward(row=sample_row, j=idx, src=x):
                if src.requires_grad:
                    g = np.zeros_like(src.data)
                    g[j:j + 1] = row.grad
                    src._accumulate(g)
            sample_row._backward = _backward
            rows.append(self._run_single(sample_row))
        return ad.concat_rows(rows)

    def _run_flat(self, x):
        out = x
        for op in self._compiled:
            if op[0] == "affine":
                _, w, b, in_dim = op
                if out.shape[-1] != in_dim:
                    raise DimensionError(
                        f"{self.name}: expected {in_dim} input features, got {out.shape}")
                ones = Tensor(np.ones((out.shape[0], 1)))
                out = out @ w + ones @ b
            elif op[0] == "relu":
                out = out.relu()
            else:
                raise ContractError(f"{self.name}: {op[0]} needs conv path")
        return out

    def _run_single(self, row):
        """One sample: row is (1, features); conv ops view it as [C,H,W]."""
        out = row
        shape = self.input_shape
        if len(shape) == 3 and out.ndim == 2:
            out = out.reshape(shape)
        for op in self._compiled:
            kind = op[0]
            if kind == "affine":
                _, w, b, in_dim = op
                out = out.reshape(1, in_dim)
                out = out @ w + b
            elif kind == "relu":
                out = out.relu()
            elif kind == "reshape":
                out = out.reshape(op[1])
            elif kind == "conv2d":
                out = ad.conv2d(out, op[1], op[2])
            elif kind == "conv_transpose2d":
                out = ad.conv_transpose2d(out, op[1], op[2])
        if out.ndim != 2:
            out = out.reshape(1, int(np.prod(out.shape)))
        return out


class Affine:
    """A single bias-carrying linear layer on (batch, features) tensors."""

    def __init__(self, in_dim, out_dim, rng, name, params, zero_init=False, scale=None):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            s = np.sqrt(1.0 / in_dim) if scale is None else scale
            w = s * rng.standard_normal((in_dim, out_dim))
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros((1, out_dim)), requires_grad=True)
        params[f"{name}.w"] = self.w
        params[f"{name}.b"] = self.b

    def __call__(self, x):
        ones = Tensor(np.ones((x.shape[0], 1)))
        return x @ self.w + ones @ self.b

    def copy_from(self, other):
        self.w.data[...] = other.w.data
        self.b.data[...] = other.b.data


class MultiViewVAE:
    """Encoders, fusion, decoders, and classifier in one trainable unit."""

    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params = {}

        c = config
        self.enc_eeg = LayerStack(c.eeg_encoder, c.eeg_shape, rng, "encoder.eeg")
        self.enc_speech = LayerStack(c.speech_encoder, c.speech_shape, rng, "encoder.speech")
        self.params.update(self.enc_eeg.params)
        self.params.update(self.enc_speech.params)

        eeg_feat = int(np.prod(self.enc_eeg.output_shape))
        sp_feat = int(np.prod(self.enc_speech.output_shape))

        # one common linear layer per trunk, then private mean/log-variance
        # heads per view; both speech heads start from identical values
        self.common_eeg = Affine(eeg_feat, c.common_dim, rng, "common.eeg", self.params)
        self.common_speech = Affine(sp_feat, c.common_dim, rng, "common.speech", self.params)

        self.heads = {}
        for view in VIEWS:
            mean_head = Affine(c.common_dim, c.latent_dim, rng, f"head.{view}.mean", self.params)
            lv_head = Affine(c.common_dim, c.latent_dim, rng, f"head.{view}.logvar", self.params)
            self.heads[view] = (mean_head, lv_head)
        if c.tie_speech_heads:
            # position-symmetric start: both speech heads share initial values,
            # so a fresh model is exactly invariant to swapping the speeches
            self.heads["s2"][0].copy_from(self.heads["s1"][0])
            self.heads["s2"][1].copy_from(self.heads["s1"][1])

        dec_in = (c.latent_dim,)
        self.dec_eeg = LayerStack(c.eeg_decoder, dec_in, rng, "decoder.eeg")
        self.dec_speech = LayerStack(c.speech_decoder, dec_in, rng, "decoder.speech")
        self.params.update(self.dec_eeg.params)
        self.params.update(self.dec_speech.params)
        if self.dec_eeg.output_shape != tuple(c.eeg_shape) and \
                int(np.prod(self.dec_eeg.output_shape)) != int(np.prod(c.eeg_shape)):
            raise DimensionError(
                f"eeg decoder ends at {self.dec_eeg.output_shape}, input is {c.eeg_shape}")
        if self.dec_speech.output_shape != tuple(c.speech_shape) and \
                int(np.prod(self.dec_speech.output_shape)) != int(np.prod(c.speech_shape)):
            raise DimensionError(
                f"speech decoder ends at {self.dec_speech.output_shape}, "
                f"input is {c.speech_shape}")

        h1, h2 = c.classifier_hidden
        self.cls1 = Affine(c.latent_dim, h1, rng, "classifier.0", self.params,
                           scale=np.sqrt(2.0 / c.latent_dim))
        self.cls2 = Affine(h1, h2, rng, "classifier.1", self.params,
                           scale=np.sqrt(2.0 / h1))
        self.cls3 = Affine(h2, 1, rng, "classifier.2", self.params, zero_init=True)

    # -- pieces ---------------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return dict(self.params)

    def encode_view(self, view, features):
        """Map one view's (batch, ...) features to its posterior."""
        if view not in VIEWS:
            raise MissingViewError(f"unknown view {view!r}")
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.ndim == 1:
            x = x.reshape(1, x.shape[0])
        if x.ndim > 2:
            x = x.reshape(x.shape[0], int(np.prod(x.shape[1:])))
        if view == "eeg":
            feats = self.enc_eeg.forward_rows(x)
            common = self.common_eeg(feats).relu()
        else:
            feats = self.enc_speech.forward_rows(x)
            common = self.common_speech(feats).relu()
        mean_head, lv_head = self.heads[view]
        return DiagonalGaussian(mean_head(common), lv_head(common))

    def fuse_complete(self, posteriors):
        if len(posteriors) != 3 or any(p is None for p in posteriors):
            raise MissingViewError("complete fusion needs all three views")
        return fuse(list(posteriors), enumerate_subsets(3, self.config.fusion_mode))

    def fuse_task_related(self, posteriors, labels):
        """Fuse EEG with the attended speech, selected per row by label."""
        if labels is None:
            raise ContractError("task-related fusion requires labels")
        q_eeg, q_s1, q_s2 = posteriors
        labels = np.asarray(labels, dtype=np.float64)
        batch, d = q_eeg.mean.shape
        m1 = Tensor(np.repeat((1.0 - labels)[:, None], d, axis=1))
        m2 = Tensor(np.repeat(labels[:, None], d, axis=1))
        attended = DiagonalGaussian(
            m1 * q_s1.mean + m2 * q_s2.mean,
            m1 * q_s1.log_var + m2 * q_s2.log_var)
        return fuse([q_eeg, attended], enumerate_subsets(2, self.config.fusion_mode))

    def _mixture_mean_tensor(self, mixture):
        """Differentiable mixture mean: uniform average of component means."""
        total = None
        for comp in mixture.components:
            total = comp.mean if total is None else total + comp.mean
        return total * (1.0 / mixture.num_components)

    def classify(self, z):
        """3-layer MLP ending in a sigmoid; returns P(speech 1 attended)."""
        if z.shape[-1] != self.config.latent_dim:
            raise DimensionError(
                f"classify: expected latent dim {self.config.latent_dim}, got {z.shape}")
        h = self.cls1(z).relu()
        h = self.cls2(h).relu()
        logit = self.cls3(h).reshape(z.shape[0])
        logit = logit.clamp(-30.0, 30.0)
        # sigmoid composed from the primitive op set
        return ((1.0 + (-logit).exp()).log() * -1.0).exp()

    # -- whole passes ------------------------------------------------------

    def forward_train(self, batch, rng, draws=None):
        """One full training pass; returns the forward artifacts and the
        loss breakdown (Gaussian reconstruction, KL bound, classifier
        cross-entropy, and the contrastive term when enabled)."""
        if batch.labels is None:
            raise ContractError("forward_train requires labels")
        c = self.config
        n = len(batch)

        posts = tuple(self.encode_view(v, batch.view(v)) for v in VIEWS)
        complete = self.fuse_complete(posts)
        task = self.fuse_task_related(posts, batch.labels)

        if draws is None:
            noise_c = rng.standard_normal((n, c.latent_dim))
            picks_c = rng.integers(0, complete.num_components, size=n)
            noise_t = rng.standard_normal((n, c.latent_dim))
            picks_t = rng.integers(0, task.num_components, size=n)
        else:
            noise_c, picks_c, noise_t, picks_t = draws
        z_c, _ = sample(complete, noise_c, picks_c)
        z_t, _ = sample(task, noise_t, picks_t)

        recon_eeg = self.dec_eeg.forward_rows(z_c)
        recon_speech = self.dec_speech.forward_rows(z_c)

        ll_eeg = recon_log_likelihood(recon_eeg, _flat_rows(batch.eeg))
        ll_s1 = recon_log_likelihood(recon_speech, _flat_rows(batch.s1))
        ll_s2 = recon_log_likelihood(recon_speech, _flat_rows(batch.s2))
        recon_total = ll_eeg + ll_s1 + ll_s2

        kl = mixture_kl_bound(complete).mean()
        elbo_t = recon_total - kl

        # the classifier reads the complete posterior at its mean, the same
        # deterministic statistic the predict path uses; a single mixture
        # sample carries no usable cross-subset signal
        z_mean = self._mixture_mean_tensor(complete)
        prediction = self.classify(z_mean)
        labels = np.asarray(batch.labels, dtype=np.float64)
        bce_t = bce(prediction, Tensor(1.0 - labels))  # prediction is P(label == 0)

        if c.tmc_enabled and c.beta != 0.0:
            tmc_t = tmc_loss(
                ContrastiveBatch(z_c, z_t, c.temperature),
                include_positive_in_denominator=c.infonce_denominator)
        else:
            tmc_t = Tensor(0.0)

        total = total_loss(elbo_t, bce_t, tmc_t, c.alpha, c.beta)

        breakdown = LossBreakdown(
            recon_per_view=(float(ll_eeg.data), float(ll_s1.data), float(ll_s2.data)),
            recon_total=float(recon_total.data),
            kl=float(kl.data),
            bce=float(bce_t.data),
            tmc=float(tmc_t.data),
            total=float(total.data),
            node=total,
        )
        out = ForwardOutput(
            single_view_posteriors=posts,
            complete_posterior=complete,
            task_related_posterior=task,
            z_c=z_c,
            z_t=z_t,
            reconstructions=(recon_eeg, recon_speech, recon_speech),
            prediction=prediction,
        )
        return out, breakdown

    def predict_proba(self, batch):
        """P(speech 1 attended) from the deterministic complete-posterior
        mean (the mixture mean is the average of component means)."""
        posts = tuple(self.encode_view(v, batch.view(v)) for v in VIEWS)
        complete = self.fuse_complete(posts)
        z = Tensor(complete.mean_values())
        return self.classify(z).data.copy()

    def predict(self, batch):
        """Attended-speech labels; ties at exactly 0.5 go to speech 1."""
        p1 = self.predict_proba(batch)
        return np.where(p1 >= 0.5, 0, 1).astype(np.int64)

    def representations(self, batch, rng=None):
        """Deterministic z_c (and z_t when labels are present) posterior
        means, or reparameterized samples when an rng is supplied."""
        posts = tuple(self.encode_view(v, batch.view(v)) for v in VIEWS)
        complete = self.fuse_complete(posts)
        n = len(batch)
        d = self.config.latent_dim
        if rng is None:
            z_c = complete.mean_values()
        else:
            z_c, _ = sample(complete, rng.standard_normal((n, d)),
                            rng.integers(0, complete.num_components, size=n))
            z_c = z_c.data
        z_t = None
        if batch.labels is not None:
            task = self.fuse_task_related(posts, batch.labels)
            if rng is None:
                z_t = task.mean_values()
            else:
                z_t, _ = sample(task, rng.standard_normal((n, d)),
                                rng.integers(0, task.num_components, size=n))
                z_t = z_t.data
        return z_c, z_t

    # -- persistence -----------------------------------------------------

    def state_arrays(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_arrays(self, arrays):
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise CheckpointError(
                f"checkpoint mismatch: missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]}")
        for name, t in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise CheckpointError(
                    f"checkpoint mismatch: {name} has shape {arr.shape}, "
                    f"model expects {t.data.shape}")
            t.data[...] = arr


def _flat_rows(arr):
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim > 2:
        a = a.reshape(a.shape[0], -1)
    return Tensor(a)
