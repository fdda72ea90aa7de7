"""Two-branch latent factor network with a cosine-similarity head."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AreaSplit, InputBuilder, SparseRatings, unscale
from .errors import ConfigError, CorruptionError, FormatError, InputTooShortError, ShapeError
from .nn import BatchNorm, Conv1d, Dense, Dropout, ReLU, Sequential, conv_out_len

MAGIC = b"NMC1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BranchConfig:
    """Layer recipe for one embedding branch.

    ``summarization`` lists ``(filters, kernel, stride)`` convolution stages
    applied before the fully connected stack ``fc_sizes``; the last entry of
    ``fc_sizes`` is the latent dimension.
    """

    input_len: int
    fc_sizes: tuple
    summarization: tuple = ()
    dropout_p: float = 0.0
    latent_dim: int | None = None

    def __post_init__(self):
        fc = tuple(int(v) for v in self.fc_sizes)
        stages = tuple(tuple(int(v) for v in st) for st in self.summarization)
        object.__setattr__(self, "fc_sizes", fc)
        object.__setattr__(self, "summarization", stages)
        if not fc or min(fc) < 1:
            raise ConfigError("fc_sizes must be a non-empty list of positive widths")
        if self.latent_dim is None:
            object.__setattr__(self, "latent_dim", fc[-1])
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if fc[-1] != self.latent_dim:
            raise ConfigError(f"last fc size {fc[-1]} != latent_dim {self.latent_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.input_len < 1:
            raise ConfigError("input_len must be >= 1")
        for st in stages:
            if len(st) != 3 or min(st) < 1:
                raise ConfigError(f"summarization stage {st} must be (filters, kernel, stride) >= 1")
        self.feature_len()

    def feature_len(self) -> int:
        """Width of the vector entering the fully connected stack."""
        length, channels = self.input_len, 1
        for filters, kernel, stride in self.summarization:
            try:
                length = conv_out_len(length, kernel, stride)
            except InputTooShortError as exc:
                raise ConfigError(f"summarization stage {(filters, kernel, stride)}: {exc}") from None
            channels = filters
        return length * channels

    def with_input_len(self, input_len) -> "BranchConfig":
        return BranchConfig(input_len, self.fc_sizes, self.summarization, self.dropout_p,
                            self.latent_dim)


def ml1m_config(input_len, column=False, latent_dim=1024) -> BranchConfig:
    """ML-1M branch: one 32-filter summarization stage, fc 2048/1024, dropout 0.6."""
    kernel, stride = (48, 24) if column else (32, 16)
    return BranchConfig(input_len, (2048, 1024, latent_dim), ((32, kernel, stride),), 0.6)


def netflix_config(input_len, column=False, latent_dim=2048, filters=32) -> BranchConfig:
    """Netflix branch: kernel 128/stride 64 on rows, 96/48 then 64/32 on columns."""
    stages = ((filters, 96, 48), (filters, 64, 32)) if column else ((filters, 128, 64),)
    return BranchConfig(input_len, (2048, 2048, latent_dim), stages, 0.0)


def _build_branch(cfg: BranchConfig, rng, bn_momentum, bn_eps) -> Sequential:
    layers = []
    length, channels = cfg.input_len, 1
    for filters, kernel, stride in cfg.summarization:
        layers.append(Conv1d(channels, filters, kernel, stride, rng))
        length, channels = conv_out_len(length, kernel, stride), filters
        layers += [BatchNorm(filters, length, bn_momentum, bn_eps), ReLU()]
    width = length * channels
    n_fc = len(cfg.fc_sizes)
    for i, out in enumerate(cfg.fc_sizes):
        layers.append(Dense(width, out, rng))
        if i < n_fc - 1:
            layers += [BatchNorm(out, 1, bn_momentum, bn_eps), ReLU()]
        if i < n_fc - 2 and cfg.dropout_p > 0:
            layers.append(Dropout(cfg.dropout_p))
        width = out
    return Sequential(layers)


def cosine(u, v, norm_floor=1e-8):
    """Row-wise cosine similarity; 0.0 where either vector is shorter than ``norm_floor``."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    out = _cosine_forward(u, v, norm_floor)[0]
    return float(out[0]) if out.shape == (1,) else out


def _cosine_forward(u, v, norm_floor):
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    ok = (nu >= norm_floor) & (nv >= norm_floor)
    denom = np.where(ok, nu * nv, 1.0)
    c = np.where(ok, np.einsum("ij,ij->i", u, v) / denom, 0.0)
    return np.clip(c, -1.0, 1.0), (nu, nv, ok)


def _cosine_backward(u, v, c, cache, dc):
    nu, nv, ok = cache
    nu_s = np.where(ok, nu, 1.0)[:, None]
    nv_s = np.where(ok, nv, 1.0)[:, None]
    g = np.where(ok, dc, 0.0)[:, None]
    cc = c[:, None]
    du = g * (v / (nu_s * nv_s) - cc * u / nu_s**2)
    dv = g * (u / (nu_s * nv_s) - cc * v / nv_s**2)
    return du, dv


@dataclass
class NmcModel:
    row_cfg: BranchConfig
    col_cfg: BranchConfig
    alpha: float = 1.0
    beta: float = 5.0
    norm_floor: float = 1e-8
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.row_cfg.latent_dim != self.col_cfg.latent_dim:
            raise ConfigError(
                f"row latent_dim {self.row_cfg.latent_dim} != col latent_dim {self.col_cfg.latent_dim}"
            )
        rng = np.random.default_rng(self.seed)
        self.row_branch = _build_branch(self.row_cfg, rng, self.bn_momentum, self.bn_eps)
        self.col_branch = _build_branch(self.col_cfg, rng, self.bn_momentum, self.bn_eps)

    @property
    def latent_dim(self) -> int:
        return self.row_cfg.latent_dim

    @property
    def mu(self) -> float:
        return (self.alpha + self.beta) / 2.0

    # parameters ------------------------------------------------------------

    def _named(self, attr):
        out = {f"row.{k}": v for k, v in getattr(self.row_branch, attr)().items()}
        out.update({f"col.{k}": v for k, v in getattr(self.col_branch, attr)().items()})
        return out

    def params(self) -> dict:
        return self._named("params")

    def state(self) -> dict:
        return self._named("state")

    def arrays(self) -> dict:
        """Learnable parameters followed by batch-norm running statistics."""
        out = self.params()
        out.update(self.state())
        return out

    def get_weights(self) -> dict:
        return {k: v.copy() for k, v in self.arrays().items()}

    def set_weights(self, weights: dict) -> None:
        for branch_name, branch in (("row", self.row_branch), ("col", self.col_branch)):
            for i, layer in enumerate(branch.layers):
                for attr in ("params", "state"):
                    store = getattr(layer, attr)
                    for k in store:
                        src = weights[f"{branch_name}.{i}.{k}"]
                        if src.shape != store[k].shape:
                            raise ShapeError(f"shape mismatch for {branch_name}.{i}.{k}")
                        if attr == "params":
                            store[k][...] = src
                        else:
                            store[k] = np.array(src, dtype=np.float64)

    # forward / backward ----------------------------------------------------

    def embed_rows(self, x, train=False, rng=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.row_cfg.input_len:
            raise ShapeError(f"row input length {x.shape[1]} != {self.row_cfg.input_len}")
        return self.row_branch.forward(x, train=train, rng=rng)

    def embed_cols(self, y, train=False, rng=None) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if y.shape[1] != self.col_cfg.input_len:
            raise ShapeError(f"column input length {y.shape[1]} != {self.col_cfg.input_len}")
        return self.col_branch.forward(y, train=train, rng=rng)

    def predict_scaled(self, x_rows, x_cols) -> np.ndarray:
        """Cosine predictions in [-1, 1] for paired inputs, inference mode."""
        return _cosine_forward(self.embed_rows(x_rows), self.embed_cols(x_cols), self.norm_floor)[0]

    def loss_and_grads(self, x_rows, x_cols, targets, rng=None):
        """Mean squared error of the cosine head against scaled targets, train mode.

        Returns ``(loss, grads)`` with ``grads`` keyed like :meth:`params`.
        """
        targets = np.asarray(targets, dtype=np.float64).ravel()
        if len(targets) == 0:
            raise ValueError("empty batch")
        u = self.embed_rows(x_rows, train=True, rng=rng)
        v = self.embed_cols(x_cols, train=True, rng=rng)
        c, cache = _cosine_forward(u, v, self.norm_floor)
        resid = c - targets
        loss = float(np.mean(resid**2))
        du, dv = _cosine_backward(u, v, c, cache, 2.0 * resid / len(targets))
        self.row_branch.backward(du)
        self.col_branch.backward(dv)
        grads = {f"row.{k}": g for k, g in self.row_branch.grads().items()}
        grads.update({f"col.{k}": g for k, g in self.col_branch.grads().items()})
        return loss, grads

    # rating-scale prediction -----------------------------------------------

    def predict_entries(self, data: SparseRatings, split: AreaSplit, rows, cols, exclude=None,
                        builder: InputBuilder | None = None, chunk=4096) -> np.ndarray:
        """Ratings for cells ``(rows[k], cols[k])`` on the original scale, clipped.

        Inputs are truncated to the seen columns/rows of ``split`` and skip the
        entries flagged by ``exclude``; each distinct row and column is embedded
        once.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        if builder is None:
            builder = InputBuilder(data, split, exclude)
        if len(rows) == 0:
            return np.zeros(0)
        ur, rinv = np.unique(rows, return_inverse=True)
        uc, cinv = np.unique(cols, return_inverse=True)
        U = np.vstack([self.embed_rows(builder.rows(ur[i:i + chunk]))
                       for i in range(0, len(ur), chunk)])
        V = np.vstack([self.embed_cols(builder.cols(uc[i:i + chunk]))
                       for i in range(0, len(uc), chunk)])
        c = _cosine_forward(U[rinv], V[cinv], self.norm_floor)[0]
        return np.clip(unscale(c, self.alpha, self.beta), self.alpha, self.beta)

    def predict(self, data, split, row, col, exclude=None) -> float:
        return float(self.predict_entries(data, split, [row], [col], exclude)[0])

    # persistence -----------------------------------------------------------

    def config_dict(self) -> dict:
        out = {
            "alpha": repr(float(self.alpha)),
            "beta": repr(float(self.beta)),
            "norm_floor": repr(float(self.norm_floor)),
            "bn_momentum": repr(float(self.bn_momentum)),
            "bn_eps": repr(float(self.bn_eps)),
            "seed": str(int(self.seed)),
        }
        for prefix, cfg in (("row", self.row_cfg), ("col", self.col_cfg)):
            out[f"{prefix}.input_len"] = str(cfg.input_len)
            out[f"{prefix}.fc_sizes"] = ",".join(map(str, cfg.fc_sizes))
            out[f"{prefix}.summarization"] = ";".join(":".join(map(str, st)) for st in cfg.summarization)
            out[f"{prefix}.dropout_p"] = repr(float(cfg.dropout_p))
            out[f"{prefix}.latent_dim"] = str(cfg.latent_dim)
        for k, v in sorted(self.metadata.items()):
            out[f"meta.{k}"] = str(v)
        return out


def build_model(row_cfg: BranchConfig, col_cfg: BranchConfig, seed=0, **kwargs) -> NmcModel:
    return NmcModel(row_cfg, col_cfg, seed=seed, **kwargs)


def _branch_from_config(cfg: dict, prefix: str) -> BranchConfig:
    summ = cfg[f"{prefix}.summarization"]
    stages = tuple(tuple(int(t) for t in st.split(":")) for st in summ.split(";") if st)
    return BranchConfig(
        int(cfg[f"{prefix}.input_len"]),
        tuple(int(t) for t in cfg[f"{prefix}.fc_sizes"].split(",")),
        stages,
        float(cfg[f"{prefix}.dropout_p"]),
        int(cfg[f"{prefix}.latent_dim"]),
    )


def save_model(model: NmcModel, path) -> None:
    """Write a checkpoint.

    Layout: ``NMC1``, one version byte, a little-endian uint32 length followed
    by the UTF-8 ``key=value`` config block, every array of
    :meth:`NmcModel.arrays` as little-endian float64 in declared order, and an
    8-byte BLAKE2b checksum of everything before it.
    """
    config = "".join(f"{k}={v}\n" for k, v in model.config_dict().items()).encode("utf-8")
    body = bytearray(MAGIC)
    body += bytes([FORMAT_VERSION])
    body += struct.pack("<I", len(config))
    body += config
    for arr in model.arrays().values():
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.blake2b(bytes(body), digest_size=8).digest()
    Path(path).write_bytes(bytes(body))


def load_model(path) -> NmcModel:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path} is not an NMC checkpoint")
    if len(raw) < 9:
        raise CorruptionError(f"{path} is truncated")
    if raw[4] != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {raw[4]}")
    (n_cfg,) = struct.unpack("<I", raw[5:9])
    if len(raw) < 9 + n_cfg + 8:
        raise CorruptionError(f"{path} is truncated")
    if hashlib.blake2b(raw[:-8], digest_size=8).digest() != raw[-8:]:
        raise CorruptionError(f"{path} fails its checksum")
    cfg = {}
    for line in raw[9:9 + n_cfg].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        cfg[key] = value
    try:
        model = NmcModel(
            _branch_from_config(cfg, "row"),
            _branch_from_config(cfg, "col"),
            alpha=float(cfg["alpha"]),
            beta=float(cfg["beta"]),
            norm_floor=float(cfg["norm_floor"]),
            bn_momentum=float(cfg["bn_momentum"]),
            bn_eps=float(cfg["bn_eps"]),
            seed=int(cfg["seed"]),
            metadata={k[5:]: v for k, v in cfg.items() if k.startswith("meta.")},
        )
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"{path}: bad config block ({exc})") from None

    payload = raw[9 + n_cfg:-8]
    shapes = {k: v.shape for k, v in model.arrays().items()}
    need = sum(int(np.prod(s)) for s in shapes.values()) * 8
    if len(payload) != need:
        raise CorruptionError(f"{path}: expected {need} parameter bytes, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8")
    weights, pos = {}, 0
    for k, shape in shapes.items():
        n = int(np.prod(shape))
        weights[k] = flat[pos:pos + n].reshape(shape).astype(np.float64)
        pos += n
    model.set_weights(weights)
    return model
