"""Stacked extreme learning machine: random hidden layers, ridge output
weights and PCA carry-over between stacked layers.

Every matrix product applied to data rows goes through :func:`rowwise_matmul`,
which multiplies fixed-size zero-padded blocks.  A row's result therefore
does not depend on which other rows share the batch, so single-row and
batch predictions agree bit for bit.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .archive import read_archive, write_archive
from .errors import DegenerateTarget, DimensionMismatch, MalformedFile, SingularSystem

ACTIVATIONS = ("sigmoid", "tanh")
PCA_SOURCES = ("hidden", "output_weights")
# a multiple of the usual BLAS micro-kernel heights (4, 6, 8, 12, 16, 24), so no
# row lands in an edge tile that sums in a different order
BLOCK_ROWS = 48
MODEL_FORMAT = "selmopf-selm"
MODEL_VERSION = 1


@dataclass(frozen=True)
class SelmConfig:
    hidden_neurons: int = 1000
    reduced_neurons: int | None = None  # None -> hidden_neurons // 10
    stack_iterations: int = 10
    ridge: float = 2.0 ** -30
    activation: str = "sigmoid"
    weight_seed: int = 0
    # "hidden": principal directions of the centred hidden outputs H;
    # "output_weights": eigenvectors of Psi Psi^T, uncentred, which keeps the
    # previous layer's fit inside the carried features
    pca_source: str = "hidden"
    # z-score scale is at least std_floor * max(|mean|, 1); keeps columns that
    # barely vary (e.g. a voltage pinned at its limit) from amplifying noise
    std_floor: float = 1e-3
    # input weights are U(-s, s); s = weight_range, or sqrt(3 / d) with d the
    # number of varying input columns when weight_range is None
    weight_range: float | None = None

    def __post_init__(self):
        if self.hidden_neurons < 1:
            raise ValueError("hidden_neurons must be >= 1")
        if self.reduced_neurons is None:
            object.__setattr__(self, "reduced_neurons", max(1, self.hidden_neurons // 10))
        if not 1 <= self.reduced_neurons <= self.hidden_neurons:
            raise ValueError("need 1 <= reduced_neurons <= hidden_neurons")
        if self.stack_iterations < 1:
            raise ValueError("stack_iterations must be >= 1")
        if not self.ridge >= 0:
            raise ValueError("ridge must be >= 0")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.weight_range is not None and not self.weight_range > 0:
            raise ValueError("weight_range must be > 0 or None")
        if not self.std_floor >= 0:
            raise ValueError("std_floor must be >= 0")
        if self.pca_source not in PCA_SOURCES:
            raise ValueError(f"pca_source must be one of {PCA_SOURCES}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SELM config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SelmLayer:
    w: np.ndarray  # fresh neurons x d_in
    b: np.ndarray
    psi: np.ndarray  # output weights of this layer's full hidden matrix
    v_reduced: np.ndarray | None = None  # L x l, absent on the final layer
    h_mean: np.ndarray | None = None  # column means used to centre before projection


@dataclass
class SelmModel:
    layers: list
    x_mean: np.ndarray
    x_std: np.ndarray
    t_mean: np.ndarray
    t_std: np.ndarray
    config: SelmConfig
    train_rmse: list = field(default_factory=list)  # original units, per iteration
    train_rmse_norm: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    kind: str = "regression"

    @property
    def d_in(self):
        return self.x_mean.shape[0]

    @property
    def d_out(self):
        return self.t_mean.shape[0]


# --------------------------------------------------------------------------
# building blocks


def rowwise_matmul(a, b):
    """``a @ b`` evaluated in zero-padded blocks of ``BLOCK_ROWS`` rows."""
    a = np.asarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)  # BLAS rounding depends on memory layout
    n, k = a.shape
    out = np.empty((n, b.shape[1]))
    # every block goes through the same buffers, whatever the caller's layout
    buf = np.zeros((BLOCK_ROWS, k))
    tmp = np.empty((BLOCK_ROWS, b.shape[1]))
    for s in range(0, n, BLOCK_ROWS):
        e = min(s + BLOCK_ROWS, n)
        buf[: e - s] = a[s:e]
        if e - s < BLOCK_ROWS:
            buf[e - s:] = 0.0
        np.matmul(buf, b, out=tmp)
        out[s:e] = tmp[: e - s]
    return out


def _activate(z, activation):
    if activation == "sigmoid":
        # in place; exp overflow for z << 0 gives 1 / inf = 0, as it should
        with np.errstate(over="ignore"):
            np.negative(z, out=z)
            np.exp(z, out=z)
        z += 1.0
        return np.reciprocal(z, out=z)
    return np.tanh(z, out=z)


def _stacked_product(carried, h_new, m):
    """``[carried, h_new] @ m`` without building the stacked matrix."""
    if carried is None:
        return rowwise_matmul(h_new, m)
    k = carried.shape[1]
    out = rowwise_matmul(h_new, m[k:])
    out += rowwise_matmul(carried, m[:k])
    return out


def _carry(carried, h_new, layer):
    """Reduced neurons passed to the next layer: ``([carried, h_new] - mean) V``."""
    out = _stacked_product(carried, h_new, layer.v_reduced)
    out -= layer.h_mean @ layer.v_reduced
    return out


def hidden_layer(x, w, b, activation="sigmoid"):
    """``g(x W^T + b)`` row by row; ``w`` is ``n_neurons x d_in``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise DimensionMismatch(f"X {x.shape}, W {w.shape}, b {b.shape} are inconsistent")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    z = rowwise_matmul(x, w.T)
    z += b
    return _activate(z, activation)


def solve_output_weights(h, t, ridge):
    """Ridge solution ``(ridge I + H^T H)^-1 H^T T`` by Cholesky.

    With fewer rows than columns and ``ridge > 0`` the equivalent
    ``H^T (ridge I + H H^T)^-1 T`` is factored instead.  When a positive
    ridge still leaves the system numerically indefinite the augmented
    least-squares problem ``[H; sqrt(ridge) I] Psi = [T; 0]`` is solved.
    """
    h = np.asarray(h, dtype=float)
    t = np.asarray(t, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if h.ndim != 2 or h.shape[0] != t.shape[0]:
        raise DimensionMismatch(f"H {h.shape} and T {t.shape} are inconsistent")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    ns, nl = h.shape
    dual = ridge > 0 and ns < nl
    a = h @ h.T if dual else h.T @ h
    a[np.diag_indices_from(a)] += ridge
    try:
        c = sla.cho_factor(a, lower=False, check_finite=True)
        r = np.abs(np.diag(c[0]))
        # cond(a) ~ (max r / min r)^2; beyond 1 / (n eps) the solve is noise
        if ridge == 0 and np.min(r) <= np.sqrt(a.shape[0] * np.finfo(float).eps) * np.max(r):
            raise sla.LinAlgError("numerically singular")
        if dual:
            return h.T @ sla.cho_solve(c, t)
        return sla.cho_solve(c, h.T @ t)
    except (sla.LinAlgError, ValueError):
        if ridge == 0:
            raise SingularSystem("H^T H is singular and no ridge is set") from None
    aug = np.vstack([h, np.sqrt(ridge) * np.eye(nl)])
    rhs = np.vstack([t, np.zeros((nl, t.shape[1]))])
    return sla.lstsq(aug, rhs, lapack_driver="gelsd")[0]


def _sign_fix(v):
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def pca_basis(h, l):
    """Column means and the top-``l`` eigenvectors of the centred covariance."""
    h = np.asarray(h, dtype=float)
    ns, nl = h.shape
    if not 1 <= l <= nl:
        raise ValueError(f"need 1 <= l <= {nl}")
    mean = h.mean(axis=0)
    hc = h - mean
    cov = (hc.T @ hc) / max(ns - 1, 1)
    vals, vecs = sla.eigh(cov, subset_by_index=[nl - l, nl - 1])
    order = np.argsort(vals, kind="stable")[::-1]
    return mean, _sign_fix(vecs[:, order]), vals[order]


def output_weight_basis(psi, l):
    """Top-``l`` eigenvectors of ``Psi Psi^T`` (descending, sign-fixed)."""
    nl = psi.shape[0]
    if not 1 <= l <= nl:
        raise ValueError(f"need 1 <= l <= {nl}")
    vals, vecs = sla.eigh(psi @ psi.T, subset_by_index=[nl - l, nl - 1])
    order = np.argsort(vals, kind="stable")[::-1]
    return _sign_fix(vecs[:, order])


def pca_reduce(h, l):
    """Project centred ``H`` on its top-``l`` principal directions.

    Returns ``(H_reduced, V, mean)`` with ``H_reduced = (H - mean) V``.
    """
    mean, v, _ = pca_basis(h, l)
    return rowwise_matmul(np.asarray(h, dtype=float) - mean, v), v, mean


# --------------------------------------------------------------------------
# training and prediction


def _zscore_stats(a, floor):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    const = std == 0
    std = np.maximum(std, floor * np.maximum(np.abs(mean), 1.0))
    std[std == 0] = 1.0
    return mean, std, const


def normalize(a, mean, std):
    return (a - mean) / std


def denormalize(a, mean, std):
    return a * std + mean


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("inputs and targets must be finite")


def train_selm(x, t, cfg=None, kind="regression"):
    cfg = cfg or SelmConfig()
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
    if x.ndim != 2 or x.shape[0] != t.shape[0]:
        raise DimensionMismatch(f"X {x.shape} and T {t.shape} have different row counts")
    if x.shape[0] < 2:
        raise ValueError("need at least two training rows")
    _check_finite(x, t)

    x_mean, x_std, x_const = _zscore_stats(x, cfg.std_floor)
    t_mean, t_std, const = _zscore_stats(t, cfg.std_floor)
    notes = []
    if np.any(const):
        msg = f"{int(const.sum())} target column(s) have zero variance; fit as constants"
        warnings.warn(msg, DegenerateTarget, stacklevel=2)
        notes.append(msg)
    xn = normalize(x, x_mean, x_std)
    tn = normalize(t, t_mean, t_std)

    rng = np.random.default_rng(cfg.weight_seed)
    L, l = cfg.hidden_neurons, cfg.reduced_neurons
    if cfg.weight_range is None:
        scale = np.sqrt(3.0 / max(1, int(np.count_nonzero(~x_const))))
    else:
        scale = cfg.weight_range
    layers, rmse, rmse_n = [], [], []
    carried = None
    for i in range(cfg.stack_iterations):
        n_new = L if carried is None else L - l
        w = rng.uniform(-scale, scale, size=(n_new, x.shape[1]))
        b = rng.uniform(-1.0, 1.0, size=n_new)
        h_new = hidden_layer(xn, w, b, cfg.activation)
        h = h_new if carried is None else np.hstack([carried, h_new])
        psi = solve_output_weights(h, tn, cfg.ridge)
        psi[:, const] = 0.0
        yn = _stacked_product(carried, h_new, psi)
        rmse_n.append(float(np.sqrt(np.mean((yn - tn) ** 2))))
        y = denormalize(yn, t_mean, t_std)
        rmse.append(float(np.sqrt(np.mean((y - t) ** 2))))
        layer = SelmLayer(w, b, np.ascontiguousarray(psi))
        if i < cfg.stack_iterations - 1:
            if cfg.pca_source == "hidden":
                mean, v, _ = pca_basis(h, l)
            else:
                mean, v = np.zeros(h.shape[1]), output_weight_basis(psi, l)
            layer.v_reduced, layer.h_mean = np.ascontiguousarray(v), mean
            carried = _carry(carried, h_new, layer)
        layers.append(layer)
    return SelmModel(layers, x_mean, x_std, t_mean, t_std, cfg, rmse, rmse_n, notes, kind)


def selm_predict(model, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise DimensionMismatch(f"model expects {model.d_in} input columns, got {x.shape}")
    xn = normalize(x, model.x_mean, model.x_std)
    carried = None
    act = model.config.activation
    for layer in model.layers[:-1]:
        carried = _carry(carried, hidden_layer(xn, layer.w, layer.b, act), layer)
    last = model.layers[-1]
    yn = _stacked_product(carried, hidden_layer(xn, last.w, last.b, act), last.psi)
    return denormalize(yn, model.t_mean, model.t_std)


def train_classifier(x, labels, cfg=None, n_classes=None):
    """SELM on one-hot targets; ``n_classes`` defaults to ``max(label) + 1``."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0 or np.any(labels < 0):
        raise ValueError("labels must be a nonempty vector of non-negative integers")
    m = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    onehot = np.zeros((labels.size, m))
    onehot[np.arange(labels.size), labels.astype(np.intp)] = 1.0
    with warnings.catch_warnings():
        # constant one-hot columns are expected when a class is absent
        warnings.simplefilter("ignore", DegenerateTarget)
        return train_selm(x, onehot, cfg, kind="classification")


def classify(model, x):
    """Argmax over class scores; ties go to the lowest class index."""
    if model.kind != "classification":
        raise ValueError("model is not a classification head")
    return np.argmax(selm_predict(model, x), axis=1)


# --------------------------------------------------------------------------
# serialization


def model_parts(model, prefix=""):
    """Manifest entry and array dict describing ``model`` under ``prefix``."""
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "config": model.config.to_dict(),
        "n_layers": len(model.layers),
        "train_rmse": model.train_rmse,
        "train_rmse_norm": model.train_rmse_norm,
        "warnings": model.warnings,
    }
    arrays = {f"{prefix}x_mean": model.x_mean, f"{prefix}x_std": model.x_std,
              f"{prefix}t_mean": model.t_mean, f"{prefix}t_std": model.t_std}
    for i, layer in enumerate(model.layers):
        p = f"{prefix}layer{i}/"
        arrays[p + "w"] = layer.w
        arrays[p + "b"] = layer.b
        arrays[p + "psi"] = layer.psi
        if layer.v_reduced is not None:
            arrays[p + "v_reduced"] = layer.v_reduced
            arrays[p + "h_mean"] = layer.h_mean
    return meta, arrays


def model_from_parts(meta, arrays, prefix=""):
    if meta.get("format") != MODEL_FORMAT or meta.get("version") != MODEL_VERSION:
        raise MalformedFile("not a supported SELM model entry")
    try:
        layers = []
        for i in range(meta["n_layers"]):
            p = f"{prefix}layer{i}/"
            layers.append(SelmLayer(arrays[p + "w"], arrays[p + "b"], arrays[p + "psi"],
                                    arrays.get(p + "v_reduced"), arrays.get(p + "h_mean")))
        return SelmModel(layers, arrays[f"{prefix}x_mean"], arrays[f"{prefix}x_std"],
                         arrays[f"{prefix}t_mean"], arrays[f"{prefix}t_std"],
                         SelmConfig.from_dict(meta["config"]), list(meta["train_rmse"]),
                         list(meta["train_rmse_norm"]), list(meta["warnings"]), meta["kind"])
    except KeyError as exc:
        raise MalformedFile(f"model archive is missing {exc}") from None


def save_model(model, path):
    meta, arrays = model_parts(model)
    write_archive(path, {"model": meta}, arrays)


def load_model(path):
    manifest, arrays = read_archive(path)
    if "model" not in manifest:
        raise MalformedFile(f"{path} does not hold a SELM model")
    return model_from_parts(manifest["model"], arrays)


def with_seed(cfg, seed):
    return replace(cfg, weight_seed=int(seed))
