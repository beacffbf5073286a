"""scikit-learn style wrappers around the filter, the curve ordering and the generator.

Rows of ``X`` are points for the per-cloud transformers; the generator takes
a stack of clouds ``(S, N, 3)``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import curves
from .autodiff import Tensor
from .diffusion import ddpm_loss, make_schedule, sample, save_model, train
from .geometry import normalize_unit_cube
from .model import ModelConfig, eps_theta
from .spectral import build_graph, frequency_order
from .validation import check_cloud_batch, check_point_cloud

__all__ = ["FrequencySelector", "CurveSerializer", "PointCloudDiffusion"]


class FrequencySelector(TransformerMixin, BaseEstimator):
    """Keep the ``n_select`` points with the largest high-pass response.

    Parameters
    ----------
    k : int
        Neighbours in the k-NN graph (capped at ``N - 1``).
    n_select : int
        Number of points returned by :meth:`transform`.
    """

    def __init__(self, k: int = 32, n_select: int = 224):
        self.k = k
        self.n_select = n_select

    def fit(self, X, y=None):
        X = check_point_cloud(X, min_points=2)
        if not 0 <= self.n_select <= len(X):
            raise ValueError(f"n_select must lie in [0, {len(X)}], got {self.n_select}")
        graph = build_graph(X, min(self.k, len(X) - 1))
        score = frequency_order(X, graph)
        self.scores_ = score.scores
        self.order_ = score.order
        self.support_ = np.sort(score.order[:self.n_select])
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        """Selected rows of ``X``, highest score first."""
        check_is_fitted(self, "order_")
        X = check_point_cloud(X)
        if len(X) != len(self.scores_):
            raise ValueError(f"fitted on {len(self.scores_)} points, got {len(X)}")
        return X[self.order_[:self.n_select]]


class CurveSerializer(TransformerMixin, BaseEstimator):
    """Reorder points along a space-filling curve.

    Coordinates are scaled into the unit cube before quantization, so any
    cloud can be ordered.
    """

    def __init__(self, kind: str = "z", bits: int = 6):
        self.kind = kind
        self.bits = bits

    def fit(self, X, y=None):
        X = check_point_cloud(X)
        unit, _, _ = normalize_unit_cube(X)
        order = curves.serialize_points(unit, self.kind, self.bits)
        self.permutation_ = order.permutation
        self.codes_ = order.codes
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "permutation_")
        X = check_point_cloud(X)
        if len(X) != len(self.permutation_):
            raise ValueError(f"fitted on {len(self.permutation_)} points, got {len(X)}")
        return X[self.permutation_]

    def inverse_transform(self, Xt):
        check_is_fitted(self, "permutation_")
        out = np.empty_like(np.asarray(Xt, dtype=np.float64))
        out[self.permutation_] = Xt
        return out


class PointCloudDiffusion(BaseEstimator):
    """Diffusion generator for fixed-size clouds.

    ``fit`` trains on ``(S, N, 3)``; ``sample`` draws new clouds;
    ``predict`` returns the predicted noise for noisy inputs at given steps;
    ``score`` is the negative denoising loss on held-out clouds (higher is
    better).
    """

    def __init__(self, n_points: int = 2048, n_latent: int = 256, latent_dim: int = 512,
                 depth: int = 8, curves=("z", "z_trans"), resolution: int = 16, tau: int = 50,
                 zeta: float = 0.875, k: int = 32, T: int = 1000, n_state: int = 16,
                 expand: int = 2, hidden: int = 32, enc_layers: int = 3, dec_hidden: int = 0,
                 batch_size: int = 32, lr: float = 2e-4, lr_decay: float = 0.98,
                 decay_every: int = 100, weight_decay: float = 0.0, epochs: int = 10000,
                 random_state: int = 0):
        self.n_points = n_points
        self.n_latent = n_latent
        self.latent_dim = latent_dim
        self.depth = depth
        self.curves = curves
        self.resolution = resolution
        self.tau = tau
        self.zeta = zeta
        self.k = k
        self.T = T
        self.n_state = n_state
        self.expand = expand
        self.hidden = hidden
        self.enc_layers = enc_layers
        self.dec_hidden = dec_hidden
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state

    def _config(self) -> ModelConfig:
        return ModelConfig(
            n_points=self.n_points, n_latent=self.n_latent, latent_dim=self.latent_dim,
            depth=self.depth, curves=tuple(self.curves), resolution=self.resolution, tau=self.tau,
            zeta=self.zeta, k=self.k, T=self.T, n_state=self.n_state, expand=self.expand,
            hidden=self.hidden, enc_layers=self.enc_layers, dec_hidden=self.dec_hidden)

    def fit(self, X, y=None):
        config = self._config()
        X = check_cloud_batch(X, n_points=config.n_points)
        self.schedule_ = make_schedule(config.T)
        res = train(X, config, self.schedule_, epochs=self.epochs, batch=self.batch_size,
                    seed=self.random_state, lr=self.lr, lr_decay=self.lr_decay,
                    decay_every=self.decay_every, weight_decay=self.weight_decay)
        self.config_ = config
        self.params_ = res.params
        self.loss_curve_ = list(res.losses)
        self.transform_ = res.transform
        return self

    def sample(self, n_samples: int = 1, random_state: int | None = None) -> np.ndarray:
        check_is_fitted(self, "params_")
        seed = self.random_state if random_state is None else random_state
        return sample(self.params_, self.config_, self.schedule_, count=n_samples, seed=seed,
                      transform=self.transform_)

    def predict(self, X, t) -> np.ndarray:
        """Predicted noise for clouds ``X`` given in data coordinates at steps ``t``."""
        check_is_fitted(self, "params_")
        X = check_cloud_batch(X, n_points=self.config_.n_points)
        z = self.transform_.forward(X)
        return eps_theta(z, np.broadcast_to(np.asarray(t), (len(X),)), self.params_, self.config_).data

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "params_")
        X = check_cloud_batch(X, n_points=self.config_.n_points)
        rng = np.random.default_rng(self.random_state)
        z = self.transform_.forward(X)
        t = rng.integers(1, self.schedule_.T + 1, size=len(z))
        eps0 = rng.standard_normal(z.shape)
        loss = ddpm_loss(lambda x, tt: Tensor(eps_theta(x, tt, self.params_, self.config_).data),
                         z, t, eps0, self.schedule_)
        return -float(loss.data)

    def save(self, path, config_text: str | None = None) -> None:
        check_is_fitted(self, "params_")
        save_model(path, self.params_, self.transform_, config_text)
