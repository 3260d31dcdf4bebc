"""Layout-aware transformer encoder with a BIESO tagging head.

Post-LN BERT-style blocks in numpy with hand-written backward passes. The
attention variant (full, linformer, cosformer) and the 2D relative bias are
configuration; one bias matrix (or expansion) is built per input and reused
by every layer and head.

Checkpoints are ``.npz`` archives: one array per named parameter plus a
``__meta__`` entry holding JSON with the format name, version, config and
caller-supplied extras (tokenizer, label list).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .bias import PATTERNS, BiasSpec, box_centers, dense_bias, expansion_for
from .kernels import (
    ProjectionPair,
    attention_backward,
    biased_full_attention,
    cosformer_attention,
    full_attention,
    linformer_attention,
)

CHECKPOINT_FORMAT = "longdoc-checkpoint"
CHECKPOINT_VERSION = 1

BOX_TABLES = ("x0", "y0", "x1", "y1", "width", "height")
ATTENTION_VARIANTS = ("full", "linformer", "cosformer")


@dataclass
class ModelConfig:
    vocab_size: int
    num_labels: int
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    max_len: int = 512
    attention: str = "full"
    k: int | None = None
    bias: str = "none"
    bias_M: float = 1000.0
    renormalize: bool = True
    cross_page_floor: float = 1.0
    coord_vocab: int = 1001
    page_vocab: int = 8
    ffn_mult: int = 4
    ln_eps: float = 1e-12
    init_std: float = 0.02
    projection_init: str = "random"
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.attention not in ATTENTION_VARIANTS:
            raise ValueError(f"attention must be one of {ATTENTION_VARIANTS}")
        if self.bias not in PATTERNS:
            raise ValueError(f"bias must be one of {PATTERNS}")
        if self.attention == "linformer":
            if self.k is None or not 1 <= self.k <= self.max_len:
                raise ValueError("linformer needs 1 <= k <= max_len")
            if self.bias != "none":
                raise ValueError("relative bias cannot be applied to projected keys")
        if self.projection_init not in ("random", "identity"):
            raise ValueError("projection_init must be 'random' or 'identity'")
        if self.projection_init == "identity" and self.k != self.max_len:
            raise ValueError("identity projection needs k == max_len")
        if min(self.vocab_size, self.num_labels, self.layers + 1, self.max_len, self.page_vocab) < 1:
            raise ValueError("sizes must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in known})


# -- small layers ---------------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def _gelu_tanh(x):
    return np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x))


def gelu(x, t=None):
    t = _gelu_tanh(x) if t is None else t
    return 0.5 * x * (1.0 + t)


def gelu_grad(x, t=None):
    t = _gelu_tanh(x) if t is None else t
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def layer_norm(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, targets):
    """Mean token cross-entropy over ``targets >= 0`` and its logit gradient."""
    mask = targets >= 0
    count = int(mask.sum())
    grad = np.zeros_like(logits)
    if count == 0:
        return 0.0, grad
    probs = softmax(logits[mask])
    picked = probs[np.arange(count), targets[mask]]
    loss = float(-np.log(np.maximum(picked, 1e-300)).mean())
    probs[np.arange(count), targets[mask]] -= 1.0
    grad[mask] = probs / count
    return loss, grad


# -- the encoder ---------------------------------------------------------------


class LayoutEncoder:
    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        if params is None:
            params = self._init_params(np.random.default_rng(seed))
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}
        # running count of cosformer rows with a vanishing denominator (output set to zero)
        self.degenerate_rows = 0

    # parameters

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        c = self.config
        d, std = c.d_model, c.init_std

        def normal(*shape):
            return rng.normal(0.0, std, size=shape)

        p = {"embed.token": normal(c.vocab_size, d), "embed.position": normal(c.max_len, d), "embed.page": normal(c.page_vocab, d)}
        for name in BOX_TABLES:
            p[f"embed.{name}"] = normal(c.coord_vocab, d)
        for layer in range(c.layers):
            pre = f"layer{layer}."
            for name in ("wq", "wk", "wv", "wo"):
                p[pre + "attn." + name] = normal(d, d)
                p[pre + "attn.b" + name[1]] = np.zeros(d)
            if c.attention == "linformer":
                for name in ("pk", "pv"):
                    if c.projection_init == "identity":
                        p[pre + "attn." + name] = np.eye(c.k, c.max_len)
                    else:
                        p[pre + "attn." + name] = rng.normal(0.0, 1.0 / math.sqrt(c.max_len), size=(c.k, c.max_len))
            p[pre + "ln1.gamma"], p[pre + "ln1.beta"] = np.ones(d), np.zeros(d)
            p[pre + "ffn.w1"], p[pre + "ffn.b1"] = normal(d, c.ffn_mult * d), np.zeros(c.ffn_mult * d)
            p[pre + "ffn.w2"], p[pre + "ffn.b2"] = normal(c.ffn_mult * d, d), np.zeros(d)
            p[pre + "ln2.gamma"], p[pre + "ln2.beta"] = np.ones(d), np.zeros(d)
        p["tag.w"], p["tag.b"] = normal(d, c.num_labels), np.zeros(c.num_labels)
        p["mlm.w"], p["mlm.b"] = normal(d, c.vocab_size), np.zeros(c.vocab_size)
        return p

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # inputs

    def _lookup_indices(self, chunk):
        c = self.config
        ids = np.asarray(chunk.ids, dtype=np.int64)
        boxes = np.asarray(chunk.boxes, dtype=np.int64).reshape(-1, 4)
        positions = np.asarray(chunk.positions, dtype=np.int64)
        pages = np.asarray(chunk.pages, dtype=np.int64)
        n = len(ids)
        if n > c.max_len:
            raise ValueError(f"sequence of {n} tokens exceeds max_len={c.max_len}; chunk it first")
        if n and (ids.min() < 0 or ids.max() >= c.vocab_size):
            raise ValueError("token id outside the vocabulary")
        if n and (boxes.min() < 0 or boxes.max() > c.coord_vocab - 1):
            raise ValueError(f"box coordinates must be normalised to [0, {c.coord_vocab - 1}]")
        if n and (positions.min() < 0 or positions.max() >= c.max_len):
            raise ValueError("1D position outside the position table")
        if n and pages.min() < 0:
            raise ValueError("negative page index")
        coords = {
            "x0": boxes[:, 0],
            "y0": boxes[:, 1],
            "x1": boxes[:, 2],
            "y1": boxes[:, 3],
            "width": np.clip(boxes[:, 2] - boxes[:, 0], 0, c.coord_vocab - 1),
            "height": np.clip(boxes[:, 3] - boxes[:, 1], 0, c.coord_vocab - 1),
        }
        lookups = {"embed.token": ids, "embed.position": positions, "embed.page": np.minimum(pages, c.page_vocab - 1)}
        lookups.update({f"embed.{k}": v for k, v in coords.items()})
        return lookups

    def embed(self, chunk, ids=None) -> np.ndarray:
        return self._embed(self._lookup_indices(chunk), ids)

    def _embed(self, lookups, ids=None):
        if ids is not None:
            lookups = dict(lookups, **{"embed.token": np.asarray(ids, dtype=np.int64)})
        x = None
        for name, idx in lookups.items():
            rows = self.params[name][idx]
            x = rows if x is None else x + rows
        return x

    def attention_context(self, chunk):
        """Bias matrix / expansion / projection shared by all layers for ``chunk``."""
        c = self.config
        ctx = {}
        if c.bias != "none":
            boxes = np.asarray(chunk.boxes).reshape(-1, 4)
            if c.bias == "cosine1d":
                positions = np.asarray(chunk.positions, dtype=np.float64)
                M = max(c.bias_M, float(np.ptp(positions)) if len(positions) else 0.0)
            else:
                positions, M = box_centers(boxes), c.bias_M
            spec = BiasSpec(c.bias, positions, M=M, pages=np.asarray(chunk.pages), cross_page_floor=c.cross_page_floor)
            if c.attention == "full":
                ctx["bias"] = dense_bias(spec).astype(self.dtype)
            else:
                exp = expansion_for(spec)
                if exp is not None:
                    ctx["expansion"] = type(exp)(exp.g.astype(self.dtype), exp.h.astype(self.dtype))
        return ctx

    # forward / backward

    def _split(self, x):
        n = x.shape[0]
        return x.reshape(n, self.config.heads, self.config.head_dim).transpose(1, 0, 2)

    def _merge(self, x):
        return x.transpose(1, 0, 2).reshape(x.shape[1], self.config.d_model)

    def _projection(self, layer, n):
        m = min(self.config.k, n)
        pre = f"layer{layer}.attn."
        return ProjectionPair(self.params[pre + "pk"][:m, :n], self.params[pre + "pv"][:m, :n])

    def _attend(self, layer, q, k, v, ctx):
        c = self.config
        if c.attention == "full":
            if "bias" in ctx:
                return biased_full_attention(q, k, v, ctx["bias"], renormalize=c.renormalize).out
            return full_attention(q, k, v).out
        if c.attention == "linformer":
            return linformer_attention(q, k, v, self._projection(layer, q.shape[-2])).out
        result = cosformer_attention(q, k, v, ctx.get("expansion"))
        self.degenerate_rows += result.degenerate_rows
        return result.out

    def _attend_backward(self, layer, q, k, v, dout, ctx, grads):
        c = self.config
        if c.attention == "full":
            if "bias" in ctx:
                return attention_backward("biased", q, k, v, dout, bias=ctx["bias"], renormalize=c.renormalize)
            return attention_backward("full", q, k, v, dout)
        if c.attention == "linformer":
            proj = self._projection(layer, q.shape[-2])
            g = attention_backward("linformer", q, k, v, dout, proj=proj)
            m, n = proj.pk.shape
            pre = f"layer{layer}.attn."
            grads[pre + "pk"][:m, :n] += g["pk"]
            grads[pre + "pv"][:m, :n] += g["pv"]
            return g
        return attention_backward("cosformer", q, k, v, dout, expansion=ctx.get("expansion"))

    def forward(self, chunk, ids=None):
        """Contextual states ``(N, d_model)`` and the cache for :meth:`backward`."""
        c = self.config
        lookups = self._lookup_indices(chunk)
        ctx = self.attention_context(chunk)
        x = self._embed(lookups, ids)
        cache = {"lookups": lookups if ids is None else dict(lookups, **{"embed.token": np.asarray(ids)}), "ctx": ctx, "layers": []}
        p = self.params
        for layer in range(c.layers):
            pre = f"layer{layer}."
            q = self._split(x @ p[pre + "attn.wq"] + p[pre + "attn.bq"])
            k = self._split(x @ p[pre + "attn.wk"] + p[pre + "attn.bk"])
            v = self._split(x @ p[pre + "attn.wv"] + p[pre + "attn.bv"])
            att = self._merge(self._attend(layer, q, k, v, ctx))
            o = att @ p[pre + "attn.wo"] + p[pre + "attn.bo"]
            h1, ln1 = layer_norm(x + o, p[pre + "ln1.gamma"], p[pre + "ln1.beta"], c.ln_eps)
            a = h1 @ p[pre + "ffn.w1"] + p[pre + "ffn.b1"]
            t = _gelu_tanh(a)
            ga = gelu(a, t)
            f = ga @ p[pre + "ffn.w2"] + p[pre + "ffn.b2"]
            h2, ln2 = layer_norm(h1 + f, p[pre + "ln2.gamma"], p[pre + "ln2.beta"], c.ln_eps)
            cache["layers"].append((x, q, k, v, att, ln1, h1, a, t, ga, ln2))
            x = h2
        return x, cache

    def backward(self, cache, dh, grads=None) -> dict[str, np.ndarray]:
        """Accumulate parameter gradients for upstream ``dh`` into ``grads``."""
        c = self.config
        p = self.params
        grads = self.zero_grads() if grads is None else grads
        for layer in reversed(range(c.layers)):
            pre = f"layer{layer}."
            x, q, k, v, att, ln1, h1, a, t, ga, ln2 = cache["layers"][layer]
            ds2, dg, db = layer_norm_backward(dh, p[pre + "ln2.gamma"], ln2)
            grads[pre + "ln2.gamma"] += dg
            grads[pre + "ln2.beta"] += db
            grads[pre + "ffn.w2"] += ga.T @ ds2
            grads[pre + "ffn.b2"] += ds2.sum(axis=0)
            da = (ds2 @ p[pre + "ffn.w2"].T) * gelu_grad(a, t)
            grads[pre + "ffn.w1"] += h1.T @ da
            grads[pre + "ffn.b1"] += da.sum(axis=0)
            dh1 = ds2 + da @ p[pre + "ffn.w1"].T
            ds1, dg, db = layer_norm_backward(dh1, p[pre + "ln1.gamma"], ln1)
            grads[pre + "ln1.gamma"] += dg
            grads[pre + "ln1.beta"] += db
            grads[pre + "attn.wo"] += att.T @ ds1
            grads[pre + "attn.bo"] += ds1.sum(axis=0)
            datt = self._split(ds1 @ p[pre + "attn.wo"].T)
            g = self._attend_backward(layer, q, k, v, datt, cache["ctx"], grads)
            dx = ds1
            for name in "qkv":
                dproj = self._merge(g[name])
                grads[pre + f"attn.w{name}"] += x.T @ dproj
                grads[pre + f"attn.b{name}"] += dproj.sum(axis=0)
                dx = dx + dproj @ p[pre + f"attn.w{name}"].T
            dh = dx
        for name, idx in cache["lookups"].items():
            np.add.at(grads[name], idx, dh)
        return grads

    def encode(self, chunk) -> np.ndarray:
        return self.forward(chunk)[0]

    def logits(self, hidden, head="tag"):
        return hidden @ self.params[f"{head}.w"] + self.params[f"{head}.b"]

    def tag(self, chunk) -> np.ndarray:
        """Per-token distribution over the tag set."""
        return softmax(self.logits(self.encode(chunk)))

    def loss_and_grads(self, chunk, targets, head="tag", ids=None, grads=None, scale=1.0):
        """Mean cross-entropy on ``targets >= 0``; gradients scaled by ``scale``."""
        hidden, cache = self.forward(chunk, ids)
        logits = self.logits(hidden, head)
        loss, dlogits = cross_entropy(logits, np.asarray(targets))
        dlogits = dlogits * scale
        grads = self.zero_grads() if grads is None else grads
        grads[f"{head}.w"] += hidden.T @ dlogits
        grads[f"{head}.b"] += dlogits.sum(axis=0)
        self.backward(cache, dlogits @ self.params[f"{head}.w"].T, grads)
        return loss, grads

    def loss(self, chunk, targets, head="tag", ids=None) -> float:
        hidden, _ = self.forward(chunk, ids)
        return cross_entropy(self.logits(hidden, head), np.asarray(targets))[0]

    # checkpoints

    def save(self, path, extra: dict | None = None) -> None:
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "extra": extra or {},
        }
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta)), **self.params)

    @classmethod
    def load(cls, path) -> tuple["LayoutEncoder", dict]:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            params = {k: archive[k] for k in archive.files if k != "__meta__"}
        model = cls(ModelConfig.from_dict(meta["config"]), params)
        expected = set(model._init_params(np.random.default_rng(0)))
        if set(params) != expected:
            raise ValueError(f"checkpoint parameters do not match config: {sorted(set(params) ^ expected)}")
        return model, meta["extra"]
