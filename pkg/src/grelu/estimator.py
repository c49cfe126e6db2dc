"""scikit-learn style regressors wrapping the GReLU and ReLU trainers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .convert import grelu_to_relu
from .data import Dataset, normalize_rows
from .model import NetworkShape, ReluNetwork, compute_gates, forward, init_network, relu_forward
from .train import TrainConfig, train


class _BaseRegressor(RegressorMixin, BaseEstimator):
    _arch = "grelu"

    def __init__(self, width=64, depth=3, lr="theoretical", max_iter=1000, target_loss=0.0,
                 random_state=0, scale_labels=True, log_every=1):
        self.width = width
        self.depth = depth
        self.lr = lr
        self.max_iter = max_iter
        self.target_loss = target_loss
        self.random_state = random_state
        self.scale_labels = scale_labels
        self.log_every = log_every

    def _prep_X(self, X):
        # the network only sees directions; rows are projected onto the sphere
        return normalize_rows(X)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True, dtype=np.float64)
        self._y_1d = y.ndim == 1
        Y = y[:, None] if self._y_1d else y
        scale = float(np.max(np.abs(Y))) if self.scale_labels else 1.0
        scale = scale if scale > 0 else 1.0
        ds = Dataset(self._prep_X(X), Y / scale, scale)
        seed = 0 if self.random_state is None else int(self.random_state)
        net = init_network(NetworkShape(ds.d_x, ds.d_y, int(self.width), int(self.depth)), seed)
        if self._arch == "relu":
            net = ReluNetwork.from_grelu(net)
        cfg = TrainConfig(eta=self.lr, max_iters=int(self.max_iter),
                          target_loss=float(self.target_loss), arch=self._arch, seed=seed,
                          log_every=int(self.log_every))
        self.net_, self.log_ = train(net, ds, cfg)
        self.train_data_ = ds
        self.label_scale_ = scale
        self.n_features_in_ = X.shape[1]
        self.loss_curve_ = self.log_.losses
        self.n_iter_ = self.log_.rows[-1].iter
        return self

    def _raw_predict(self, X):
        raise NotImplementedError

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = self._raw_predict(self._prep_X(X)) * self.label_scale_
        return out[:, 0] if self._y_1d else out


class GReLURegressor(_BaseRegressor):
    """Gated-ReLU network trained by full-batch gradient descent.

    Gates come from a frozen random network and never change during
    training. Inputs are normalized to unit length and targets divided by
    their largest magnitude before training; predictions undo the scaling.
    """

    _arch = "grelu"

    def _raw_predict(self, X):
        out, _ = forward(self.net_, compute_gates(self.net_, X), X)
        return np.atleast_2d(out)

    def to_relu(self) -> "ReLURegressor":
        """Equivalent fitted ``ReLURegressor`` (exact on the training inputs)."""
        check_is_fitted(self, "net_")
        ds = self.train_data_
        relu = grelu_to_relu(self.net_, compute_gates(self.net_, ds.X), ds)
        est = ReLURegressor(**self.get_params())
        est.net_ = relu
        est.log_ = None
        est.train_data_ = ds
        est.label_scale_ = self.label_scale_
        est.n_features_in_ = self.n_features_in_
        est._y_1d = self._y_1d
        return est


class ReLURegressor(_BaseRegressor):
    """Plain ReLU network with the same initialization and trainer."""

    _arch = "relu"

    def _raw_predict(self, X):
        return relu_forward(self.net_, X)[0]
