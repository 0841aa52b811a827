"""Per-frame CNN feeding a GRU, with hand-written forward and backward passes.

Activations are NHWC. All parameters live in one flat vector; named tensors
are reshaped views into it, so optimisers and checkpoints see a single array.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class CnnGruSpec:
    """Architecture. ``conv`` holds (out_channels, kernel, stride) per layer; padding is kernel // 2."""

    conv: tuple = ((16, 3, 2), (32, 3, 2))
    pool: int = 2
    gru_hidden: int = 64
    dropout_rate: float = 0.2
    num_classes: int = 5
    frame_size: int = 64
    num_frames: int = 32

    def __post_init__(self):
        object.__setattr__(self, "conv", tuple(tuple(int(v) for v in c) for c in self.conv))
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.gru_hidden < 1 or self.num_classes < 2 or self.pool < 1:
            raise ValueError("gru_hidden >= 1, num_classes >= 2 and pool >= 1 required")
        for out, k, s in self.conv:
            if out < 1 or k < 1 or s < 1:
                raise ValueError(f"bad conv layer {(out, k, s)}")
        h, _ = self.feature_shape()
        if h < 1:
            raise ValueError("frame too small for the conv/pool stack")

    def conv_shapes(self) -> list[tuple[int, int, int]]:
        """(input size, input channels, output size) per conv layer."""
        size, ch, out = self.frame_size, 1, []
        for c_out, k, s in self.conv:
            nxt = (size + 2 * (k // 2) - k) // s + 1
            out.append((size, ch, nxt))
            size, ch = nxt, c_out
        return out

    def feature_shape(self) -> tuple[int, int]:
        """(spatial size after pooling, channels)."""
        size, ch = self.frame_size, 1
        for c_out, k, s in self.conv:
            size = (size + 2 * (k // 2) - k) // s + 1
            ch = c_out
        if size % self.pool:
            raise ValueError("pool size must divide the final conv map")
        return size // self.pool, ch

    @property
    def feature_dim(self) -> int:
        size, ch = self.feature_shape()
        return size * size * ch

    def param_shapes(self) -> dict[str, tuple]:
        shapes = {}
        ch = 1
        for i, (c_out, k, _) in enumerate(self.conv):
            shapes[f"conv{i}.w"] = (k, k, ch, c_out)
            shapes[f"conv{i}.b"] = (c_out,)
            ch = c_out
        H = self.gru_hidden
        shapes["gru.wx"] = (self.feature_dim, 3 * H)
        shapes["gru.wh"] = (H, 3 * H)
        shapes["gru.bx"] = (3 * H,)
        shapes["gru.bh"] = (3 * H,)
        shapes["out.w"] = (H, self.num_classes)
        shapes["out.b"] = (self.num_classes,)
        return shapes

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [list(c) for c in self.conv]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CnnGruSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        d = dict(d)
        if "conv" in d:
            d["conv"] = tuple(tuple(c) for c in d["conv"])
        return cls(**d)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _im2col(x, k, s):
    """NHWC input (already padded) -> (n*Ho*Wo, k*k*C) patch matrix."""
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    n, ho, wo, c = win.shape[:4]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    return cols, ho, wo


def _conv_input_grad(dz, w, shape, s, ho, wo):
    """Scatter dL/dz back onto the padded input, one kernel tap at a time."""
    k = w.shape[0]
    n = shape[0]
    dx = np.zeros(shape, dtype=dz.dtype)
    for i in range(k):
        for j in range(k):
            tap = (dz @ w[i, j].T).reshape(n, ho, wo, -1)
            dx[:, i : i + s * ho : s, j : j + s * wo : s, :] += tap
    return dx


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels) -> float:
    """Mean cross-entropy via log-sum-exp (finite for huge logits)."""
    labels = np.asarray(labels)
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


@dataclass
class Cache:
    version: int
    train_mode: bool
    batch: int
    conv: list = field(default_factory=list)
    pool_in: Optional[np.ndarray] = None
    feats: Optional[np.ndarray] = None
    gru: list = field(default_factory=list)
    h_last: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    h_drop: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    used: bool = False


class CnnGru:
    """Model state: a spec plus one flat parameter vector."""

    def __init__(self, spec: CnnGruSpec = CnnGruSpec(), params: Optional[np.ndarray] = None, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.shapes = spec.param_shapes()
        self.params = np.zeros(spec.num_params, dtype=self.dtype)
        if params is not None:
            self.set_params(params)
        self.version = 0

    def set_params(self, flat) -> None:
        flat = np.asarray(flat)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.size} parameters, got {flat.size}")
        self.params[...] = flat
        self.touch()

    def touch(self) -> None:
        """Mark parameters as changed; earlier caches become stale."""
        self.version = getattr(self, "version", 0) + 1

    def views(self, flat: Optional[np.ndarray] = None) -> dict[str, np.ndarray]:
        flat = self.params if flat is None else flat
        out, off = {}, 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape))
            out[name] = flat[off : off + n].reshape(shape)
            off += n
        return out

    def init(self, seed: int = 0) -> "CnnGru":
        """Scaled-uniform init: U(+-1/sqrt(fan_in)) for conv/affine, U(+-1/sqrt(H)) for the GRU."""
        rng = np.random.default_rng(seed)
        v = self.views()
        for i, (c_out, k, _) in enumerate(self.spec.conv):
            w = v[f"conv{i}.w"]
            bound = 1.0 / np.sqrt(k * k * w.shape[2])
            w[...] = rng.uniform(-bound, bound, w.shape)
            v[f"conv{i}.b"][...] = rng.uniform(-bound, bound, c_out)
        bound = 1.0 / np.sqrt(self.spec.gru_hidden)
        for name in ("gru.wx", "gru.wh", "gru.bx", "gru.bh"):
            v[name][...] = rng.uniform(-bound, bound, v[name].shape)
        v["out.w"][...] = rng.uniform(-bound, bound, v["out.w"].shape)
        v["out.b"][...] = rng.uniform(-bound, bound, v["out.b"].shape)
        self.touch()
        return self

    # forward ------------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        sp = self.spec
        if x.ndim != 4 or x.shape[1:] != (sp.num_frames, sp.frame_size, sp.frame_size):
            raise ValueError(
                f"expected B x {sp.num_frames} x {sp.frame_size} x {sp.frame_size} input, got {x.shape}"
            )
        if not np.all(np.isfinite(self.params)):
            raise ValueError("non-finite parameters")
        return x.astype(self.dtype, copy=False)

    def forward(self, x, train_mode: bool = False, dropout_seed: int = 0):
        """Logits (B x classes) and the activation cache needed by :meth:`backward`."""
        x = self._check_input(x)
        sp, v = self.spec, self.views()
        B, T = x.shape[:2]
        cache = Cache(self.version, train_mode, B)
        a = x.reshape(B * T, sp.frame_size, sp.frame_size, 1)
        for i, (c_out, k, s) in enumerate(sp.conv):
            p = k // 2
            ap = np.pad(a, ((0, 0), (p, p), (p, p), (0, 0)))
            cols, ho, wo = _im2col(ap, k, s)
            z = cols @ v[f"conv{i}.w"].reshape(-1, c_out) + v[f"conv{i}.b"]
            a = np.maximum(z, 0).reshape(B * T, ho, wo, c_out)
            cache.conv.append((cols, ap.shape, ho, wo, z > 0))
        q = sp.pool
        n, hh, ww, c = a.shape
        pooled = a.reshape(n, hh // q, q, ww // q, q, c).mean(axis=(2, 4))
        cache.pool_in = a.shape
        feats = pooled.reshape(B, T, -1)
        cache.feats = feats
        H = sp.gru_hidden
        xp = feats @ v["gru.wx"] + v["gru.bx"]
        h = np.zeros((B, H), dtype=self.dtype)
        wh, bh = v["gru.wh"], v["gru.bh"]
        for t in range(T):
            hp = h @ wh + bh
            zt = _sigmoid(xp[:, t, :H] + hp[:, :H])
            rt = _sigmoid(xp[:, t, H : 2 * H] + hp[:, H : 2 * H])
            nt = np.tanh(xp[:, t, 2 * H :] + rt * hp[:, 2 * H :])
            cache.gru.append((h, zt, rt, nt, hp[:, 2 * H :]))
            h = (1 - zt) * nt + zt * h
        cache.h_last = h
        if train_mode and sp.dropout_rate > 0:
            keep = 1.0 - sp.dropout_rate
            rng = np.random.default_rng(dropout_seed)
            cache.mask = ((rng.random(h.shape) < keep) / keep).astype(self.dtype)
            h = h * cache.mask
        cache.h_drop = h
        logits = h @ v["out.w"] + v["out.b"]
        cache.logits = logits
        return logits, cache

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        out = [np.argmax(self.forward(x[i : i + batch_size])[0], axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    # backward -----------------------------------------------------------

    def backward(self, cache: Cache, labels) -> np.ndarray:
        """Gradient of the mean cross-entropy w.r.t. the flat parameter vector."""
        if cache.version != self.version:
            raise ValueError("stale cache: parameters changed since the forward pass")
        if not cache.train_mode:
            raise ValueError("backward needs a cache from a train-mode forward pass")
        if cache.used:
            raise ValueError("cache already consumed by a backward pass")
        cache.used = True
        labels = np.asarray(labels)
        if labels.shape != (cache.batch,):
            raise ValueError("one label per clip required")
        sp, v = self.spec, self.views()
        grad = np.zeros_like(self.params)
        g = self.views(grad)
        B = cache.batch
        T = len(cache.gru)
        H = sp.gru_hidden

        probs = np.exp(log_softmax(cache.logits))
        dlogits = probs
        dlogits[np.arange(B), labels] -= 1
        dlogits /= B
        g["out.w"][...] = cache.h_drop.T @ dlogits
        g["out.b"][...] = dlogits.sum(axis=0)
        dh = dlogits @ v["out.w"].T
        if cache.mask is not None:
            dh = dh * cache.mask

        wh = v["gru.wh"]
        dxp = np.empty((B, T, 3 * H), dtype=self.dtype)
        dwh = np.zeros_like(wh)
        dbh = np.zeros(3 * H, dtype=self.dtype)
        for t in range(T - 1, -1, -1):
            h_prev, zt, rt, nt, hn = cache.gru[t]
            dn = dh * (1 - zt)
            dz = dh * (h_prev - nt)
            dan = dn * (1 - nt**2)
            dar = dan * hn * rt * (1 - rt)
            daz = dz * zt * (1 - zt)
            dhp = np.concatenate([daz, dar, dan * rt], axis=1)
            dxp[:, t] = np.concatenate([daz, dar, dan], axis=1)
            dwh += h_prev.T @ dhp
            dbh += dhp.sum(axis=0)
            dh = dh * zt + dhp @ wh.T
        g["gru.wh"][...] = dwh
        g["gru.bh"][...] = dbh
        g["gru.bx"][...] = dxp.sum(axis=(0, 1))
        feats = cache.feats.reshape(B * T, -1)
        dxp2 = dxp.reshape(B * T, 3 * H)
        g["gru.wx"][...] = feats.T @ dxp2
        dfeat = dxp2 @ v["gru.wx"].T

        n, hh, ww, c = cache.pool_in
        q = sp.pool
        dpooled = dfeat.reshape(n, hh // q, 1, ww // q, 1, c) / (q * q)
        da = np.broadcast_to(dpooled, (n, hh // q, q, ww // q, q, c)).reshape(n, hh, ww, c)

        for i in range(len(sp.conv) - 1, -1, -1):
            c_out, k, s = sp.conv[i]
            cols, pshape, ho, wo, active = cache.conv[i]
            dz = da.reshape(-1, c_out) * active
            g[f"conv{i}.w"][...] = (cols.T @ dz).reshape(g[f"conv{i}.w"].shape)
            g[f"conv{i}.b"][...] = dz.sum(axis=0)
            if i == 0:
                break
            dap = _conv_input_grad(dz, v[f"conv{i}.w"], pshape, s, ho, wo)
            p = k // 2
            da = dap[:, p : pshape[1] - p, p : pshape[2] - p, :]
        return grad

    def loss_and_grad(self, x, labels, dropout_seed: int = 0):
        logits, cache = self.forward(x, train_mode=True, dropout_seed=dropout_seed)
        return cross_entropy(logits, labels), self.backward(cache, labels)


def numerical_gradient(model: CnnGru, x, labels, h: float = 1e-4, dropout_seed: int = 0, indices=None) -> np.ndarray:
    """Central finite differences of the mean cross-entropy (train-mode forward,
    fixed dropout mask). Meant for float64 models; restores the parameters."""
    base = model.params.copy()
    idx = range(base.size) if indices is None else indices
    out = np.zeros(base.size, dtype=np.float64)
    p = base.copy()
    for i in idx:
        p[i] = base[i] + h
        model.set_params(p)
        plus = cross_entropy(model.forward(x, True, dropout_seed)[0], labels)
        p[i] = base[i] - h
        model.set_params(p)
        minus = cross_entropy(model.forward(x, True, dropout_seed)[0], labels)
        p[i] = base[i]
        out[i] = (plus - minus) / (2 * h)
    model.set_params(base)
    return out
