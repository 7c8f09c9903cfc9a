"""Scikit-learn style front end for the attention decoder.

``AttentionDecoder`` wraps dataset handling, model construction, and the
training loop behind the familiar ``fit`` / ``predict`` / ``transform``
surface so the decoder drops into sklearn pipelines and model-selection
tooling. Multi-view input is a ``(eeg, speech1, speech2)`` tuple (or a
dict with those keys) of per-view arrays sharing the sample axis.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import ContractError, DimensionError
from .harness import train_model
from .model import ModelConfig, MultiViewBatch, default_vector_decoder, default_vector_encoder


def _unpack_views(X):
    if isinstance(X, dict):
        try:
            views = (X["eeg"], X["s1"], X["s2"])
        except KeyError as missing:
            raise DimensionError(f"input dict is missing view {missing}") from None
    elif isinstance(X, (tuple, list)) and len(X) == 3:
        views = tuple(X)
    else:
        raise DimensionError(
            "X must be (eeg, speech1, speech2) arrays or a dict with keys eeg/s1/s2")
    views = tuple(np.asarray(v, dtype=np.float64) for v in views)
    n = {len(v) for v in views}
    if len(n) != 1:
        raise DimensionError(f"views disagree on sample count: {sorted(len(v) for v in views)}")
    for v in views:
        if not np.all(np.isfinite(v)):
            raise ContractError("views must be finite")
    return views


class AttentionDecoder(BaseEstimator, ClassifierMixin):
    """Binary attended-speaker decoder built on the multi-view VAE.

    Parameters mirror the training configuration: the latent width,
    posterior fusion rule, contrastive settings, and optimizer knobs.
    ``fit`` trains the full model (reconstruction, KL, classifier, and the
    contrastive term when enabled); ``predict`` thresholds the
    deterministic attended-speaker probability; ``transform`` returns the
    complete-posterior mean embeddings.
    """

    def __init__(self, latent_dim=128, fusion="mopoe", use_tmc=True,
                 alpha=1.0, beta=1.0, temperature=1.5, hidden_dim=64,
                 classifier_hidden=(64, 32), epochs=30, batch_size=128,
                 learning_rate=1e-3, seed=0):
        self.latent_dim = latent_dim
        self.fusion = fusion
        self.use_tmc = use_tmc
        self.alpha = alpha
        self.beta = beta
        self.temperature = temperature
        self.hidden_dim = hidden_dim
        self.classifier_hidden = classifier_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def _model_config(self, eeg_dim, speech_dim):
        h = self.hidden_dim
        return ModelConfig(
            latent_dim=self.latent_dim,
            fusion_mode=self.fusion,
            eeg_shape=(eeg_dim,),
            speech_shape=(speech_dim,),
            eeg_encoder=default_vector_encoder(h),
            speech_encoder=default_vector_encoder(h),
            eeg_decoder=default_vector_decoder((eeg_dim,), h),
            speech_decoder=default_vector_decoder((speech_dim,), h),
            classifier_hidden=tuple(self.classifier_hidden),
            common_dim=h,
            alpha=self.alpha,
            beta=self.beta if self.use_tmc else 0.0,
            temperature=self.temperature,
            tmc_enabled=self.use_tmc,
        )

    def fit(self, X, y):
        views = _unpack_views(X)
        y = np.asarray(y)
        if len(y) != len(views[0]):
            raise DimensionError("labels disagree with views on sample count")
        classes = np.unique(y)
        if not np.all(np.isin(classes, (0, 1))):
            raise ContractError("labels must be binary {0, 1}")
        if self.batch_size < 2:
            raise ContractError("batch_size must be >= 2 (contrastive negatives)")

        eeg, s1, s2 = views
        config = self._model_config(eeg.shape[1], s1.shape[1])
        batch = MultiViewBatch(eeg=eeg, s1=s1, s2=s2, labels=y.astype(np.int64))
        self.model_, self.history_ = train_model(
            config, batch, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, seed=self.seed)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = eeg.shape[1] + 2 * s1.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractError("this AttentionDecoder instance is not fitted yet")

    def predict(self, X):
        self._check_fitted()
        eeg, s1, s2 = _unpack_views(X)
        return self.model_.predict(MultiViewBatch(eeg=eeg, s1=s1, s2=s2))

    def predict_proba(self, X):
        self._check_fitted()
        eeg, s1, s2 = _unpack_views(X)
        p_speech1 = self.model_.predict_proba(MultiViewBatch(eeg=eeg, s1=s1, s2=s2))
        return np.column_stack([p_speech1, 1.0 - p_speech1])

    def transform(self, X):
        """Complete-posterior mean embeddings, one row per sample."""
        self._check_fitted()
        eeg, s1, s2 = _unpack_views(X)
        z_c, _ = self.model_.representations(MultiViewBatch(eeg=eeg, s1=s1, s2=s2))
        return z_c

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)
