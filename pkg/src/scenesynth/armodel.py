"""Autoregressive model over token grids using locally masked convolutions.

The network is deliberately small and written directly in numpy: an
embedding table, a stack of masked 3x3 convolutions with ReLU, and a 1x1
head producing per-token logits.  Masks built from a generation order
guarantee that the logits at any position depend only on visible pixels
and strictly earlier ranks, which makes rank-by-rank sampling exact.

Gradients are computed by hand (im2col + matmuls) and are verified against
central finite differences in the test suite.  All math runs in float64;
checkpoints store parameters as float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .codebook import TokenGrid
from .ordering import GenerationOrder, LocalMaskSet, build_local_masks

_AR_MAGIC = b"PSAR"
_AR_VERSION = 1


@dataclass(frozen=True)
class ArConfig:
    """Architecture hyperparameters."""

    vocab: int
    embed_dim: int = 32
    layers: int = 4
    kernel: int = 3
    channels: int = 64

    def __post_init__(self) -> None:
        if self.vocab < 1 or self.embed_dim < 1 or self.channels < 1:
            raise ValueError("vocab, embed_dim and channels must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and >= 1")


@dataclass(frozen=True)
class ArModel:
    """Parameters: embedding, L masked conv layers, and a 1x1 logit head.

    conv_weights[l] has shape (kernel, kernel, c_in, c_out); head_weight is
    (channels, vocab).  Arrays are float64 and read-only; training returns
    new instances.
    """

    config: ArConfig
    embed: np.ndarray
    conv_weights: tuple[np.ndarray, ...]
    conv_biases: tuple[np.ndarray, ...]
    head_weight: np.ndarray
    head_bias: np.ndarray

    def __post_init__(self) -> None:
        def frozen(arr: np.ndarray) -> np.ndarray:
            arr = np.asarray(arr, np.float64)
            if not np.isfinite(arr).all():
                raise ValueError("model parameters must be finite")
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
            return arr

        object.__setattr__(self, "embed", frozen(self.embed))
        object.__setattr__(self, "conv_weights", tuple(frozen(w) for w in self.conv_weights))
        object.__setattr__(self, "conv_biases", tuple(frozen(b) for b in self.conv_biases))
        object.__setattr__(self, "head_weight", frozen(self.head_weight))
        object.__setattr__(self, "head_bias", frozen(self.head_bias))

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in declaration order."""
        out = [self.embed]
        for w, b in zip(self.conv_weights, self.conv_biases):
            out += [w, b]
        out += [self.head_weight, self.head_bias]
        return out


def create_model(config: ArConfig, seed: int = 0) -> ArModel:
    """Uniform(-1/sqrt(fan_in)) weights, zero biases, zero head weight.

    The zero head makes the initial logits exactly zero everywhere, so the
    initial loss is exactly ln(vocab).
    """
    rng = np.random.default_rng(seed)
    c = config

    def uniform(shape, fan_in):
        a = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-a, a, shape)

    embed = uniform((c.vocab, c.embed_dim), c.embed_dim)
    weights, biases = [], []
    c_in = c.embed_dim
    for _ in range(c.layers):
        weights.append(uniform((c.kernel, c.kernel, c_in, c.channels), c.kernel * c.kernel * c_in))
        biases.append(np.zeros(c.channels))
        c_in = c.channels
    head_w = np.zeros((c.channels, c.vocab))
    head_b = np.zeros(c.vocab)
    return ArModel(c, embed, tuple(weights), tuple(biases), head_w, head_b)


# ---------------------------------------------------------------------------
# mask cache


_MASK_CACHE: dict[bytes, LocalMaskSet] = {}
_MASK_CACHE_LIMIT = 4096


def _masks_for(order: GenerationOrder, config: ArConfig) -> LocalMaskSet:
    key = struct.pack("<iiii", *order.rank.shape, config.kernel, config.layers) + order.rank.tobytes()
    hit = _MASK_CACHE.get(key)
    if hit is None:
        if len(_MASK_CACHE) >= _MASK_CACHE_LIMIT:
            _MASK_CACHE.clear()
        hit = build_local_masks(order, config.kernel, config.layers)
        _MASK_CACHE[key] = hit
    return hit


# ---------------------------------------------------------------------------
# forward / backward core


def _im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """(B,h,w,C) -> (B,h,w,k,k,C) zero-padded patch gather."""
    b, h, w, c = x.shape
    half = kernel // 2
    padded = np.zeros((b, h + 2 * half, w + 2 * half, c))
    padded[:, half : half + h, half : half + w] = x
    cols = np.empty((b, h, w, kernel, kernel, c))
    for dy in range(kernel):
        for dx in range(kernel):
            cols[:, :, :, dy, dx] = padded[:, dy : dy + h, dx : dx + w]
    return cols


def _col2im(dcols: np.ndarray, kernel: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to (B,h,w,C)."""
    b, h, w, _, _, c = dcols.shape
    half = kernel // 2
    dpad = np.zeros((b, h + 2 * half, w + 2 * half, c))
    for dy in range(kernel):
        for dx in range(kernel):
            dpad[:, dy : dy + h, dx : dx + w] += dcols[:, :, :, dy, dx]
    return dpad[:, half : half + h, half : half + w]


def _stack_masks(mask_sets: list[LocalMaskSet], layer: int) -> np.ndarray:
    """(B,h,w,k,k) float mask for one layer across a batch."""
    layer_masks = [ms.masks[layer] for ms in mask_sets]
    if all(m is layer_masks[0] for m in layer_masks):
        base = layer_masks[0].astype(np.float64)
        return np.broadcast_to(base, (len(layer_masks),) + base.shape)
    return np.stack([m.astype(np.float64) for m in layer_masks])


def _forward_batch(
    model: ArModel,
    tokens_b: np.ndarray,
    mask_sets: list[LocalMaskSet],
    keep_intermediates: bool = False,
):
    """Batched forward pass.

    tokens_b: (B,h,w) int token ids; mask_sets: one LocalMaskSet per grid.
    Returns logits (B,h,w,K) and, when requested, the buffers needed for
    the backward pass.
    """
    c = model.config
    b, h, w = tokens_b.shape
    x = model.embed[tokens_b]  # (B,h,w,E)
    saved_cols, saved_pre = [], []
    for layer in range(c.layers):
        cols = _im2col(x, c.kernel)
        cols *= _stack_masks(mask_sets, layer)[..., None]
        flat = cols.reshape(b * h * w, -1)
        w_mat = model.conv_weights[layer].reshape(-1, c.channels)
        pre = flat @ w_mat + model.conv_biases[layer]
        x = np.maximum(pre, 0.0).reshape(b, h, w, c.channels)
        if keep_intermediates:
            saved_cols.append(flat)
            saved_pre.append(pre)
    feats = x.reshape(b * h * w, c.channels)
    logits = (feats @ model.head_weight + model.head_bias).reshape(b, h, w, c.vocab)
    if keep_intermediates:
        return logits, (saved_cols, saved_pre, feats)
    return logits


def _check_tokens(model: ArModel, tokens: np.ndarray) -> None:
    if tokens.min() < 0 or tokens.max() >= model.config.vocab:
        raise ValueError("token ids must lie in [0, vocab) everywhere")


def forward(model: ArModel, tokens: TokenGrid, order: GenerationOrder) -> np.ndarray:
    """Logits (h,w,K); position p sees only visible pixels and ranks < p."""
    if tokens.shape != order.rank.shape:
        raise ValueError("token grid and order shapes differ")
    _check_tokens(model, tokens.tokens)
    masks = _masks_for(order, model.config)
    return _forward_batch(model, tokens.tokens[None], [masks])[0]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainBatch:
    """Complete token grids with their generation orders."""

    grids: tuple[TokenGrid, ...]
    orders: tuple[GenerationOrder, ...]

    def __post_init__(self) -> None:
        if len(self.grids) != len(self.orders):
            raise ValueError("grids and orders must pair up")
        for g, o in zip(self.grids, self.orders):
            if g.shape != o.rank.shape:
                raise ValueError("grid and order shapes differ")


def loss_and_grads(model: ArModel, batch: TrainBatch) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy over background positions pooled across the batch,
    plus d(loss)/d(parameter) in declaration order."""
    c = model.config
    if not batch.grids:
        raise ValueError("batch must be nonempty")
    tokens_b = np.stack([g.tokens for g in batch.grids])
    _check_tokens(model, tokens_b)
    mask_sets = [_masks_for(o, c) for o in batch.orders]
    bg = np.stack([o.rank >= 0 for o in batch.orders])  # (B,h,w)
    total = int(bg.sum())
    b, h, w = tokens_b.shape

    logits, (cols, pres, feats) = _forward_batch(model, tokens_b, mask_sets, True)
    logp = _log_softmax(logits)
    if total == 0:
        loss = 0.0
    else:
        picked = np.take_along_axis(logp, tokens_b[..., None], axis=-1)[..., 0]
        loss = float(-(picked * bg).sum() / total)

    dlogits = np.zeros_like(logits)
    if total > 0:
        probs = np.exp(logp)
        onehot_sub = probs
        np.subtract.at(
            onehot_sub.reshape(-1, c.vocab),
            (np.arange(b * h * w), tokens_b.reshape(-1)),
            1.0,
        )
        dlogits = onehot_sub * bg[..., None] / total
    dflat = dlogits.reshape(-1, c.vocab)

    grads: dict[int, np.ndarray] = {}
    grads_head_w = feats.T @ dflat
    grads_head_b = dflat.sum(0)
    dx = (dflat @ model.head_weight.T).reshape(b, h, w, c.channels)

    conv_w_grads: list[np.ndarray] = [None] * c.layers  # type: ignore[list-item]
    conv_b_grads: list[np.ndarray] = [None] * c.layers  # type: ignore[list-item]
    for layer in reversed(range(c.layers)):
        dpre = dx.reshape(-1, c.channels) * (pres[layer] > 0.0)
        conv_w_grads[layer] = (cols[layer].T @ dpre).reshape(model.conv_weights[layer].shape)
        conv_b_grads[layer] = dpre.sum(0)
        w_mat = model.conv_weights[layer].reshape(-1, c.channels)
        c_in = w_mat.shape[0] // (c.kernel * c.kernel)
        dcols = (dpre @ w_mat.T).reshape(b, h, w, c.kernel, c.kernel, c_in)
        dcols *= _stack_masks(mask_sets, layer)[..., None]
        dx = _col2im(dcols, c.kernel)

    dembed = np.zeros_like(model.embed)
    np.add.at(dembed, tokens_b.reshape(-1), dx.reshape(-1, c.embed_dim))

    ordered = [dembed]
    for gw, gb in zip(conv_w_grads, conv_b_grads):
        ordered += [gw, gb]
    ordered += [grads_head_w, grads_head_b]
    return loss, ordered


def train_step(model: ArModel, batch: TrainBatch, lr: float) -> tuple[ArModel, float]:
    """One plain gradient-descent update; returns the pre-update loss."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    loss, grads = loss_and_grads(model, batch)
    params = model.parameters()
    new = [p - lr * g for p, g in zip(params, grads)]
    updated = replace(
        model,
        embed=new[0],
        conv_weights=tuple(new[1 : 1 + 2 * model.config.layers : 2]),
        conv_biases=tuple(new[2 : 2 + 2 * model.config.layers : 2]),
        head_weight=new[-2],
        head_bias=new[-1],
    )
    return updated, loss


def nll(model: ArModel, grid: TokenGrid, order: GenerationOrder) -> float:
    """Mean cross-entropy at background ranks under teacher forcing."""
    if not grid.known.all():
        raise ValueError("nll requires a fully known grid")
    if order.background_count == 0:
        return 0.0
    logits = forward(model, grid, order)
    logp = _log_softmax(logits)
    bg = order.rank >= 0
    picked = np.take_along_axis(logp, grid.tokens[..., None], axis=-1)[..., 0]
    return float(-(picked[bg]).mean())


# ---------------------------------------------------------------------------
# sampling


def sample_batch(
    model: ArModel,
    partial: TokenGrid,
    order: GenerationOrder,
    temperature: float,
    seeds: list[int],
) -> list[TokenGrid]:
    """Draw len(seeds) completions of `partial` under `order`.

    All samples share the order (one batched forward per rank); each sample
    consumes exactly one uniform draw per rank from its own seeded
    generator, so a given seed yields the same completion regardless of
    what else is in the batch.  temperature == 0 means argmax with ties
    going to the lowest index.
    """
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if partial.shape != order.rank.shape:
        raise ValueError("token grid and order shapes differ")
    if not np.array_equal(partial.known, order.rank == -1):
        raise ValueError("partial.known must match the order's visible set")
    known = order.rank == -1
    base = np.where(known, partial.tokens, 0)
    _check_tokens(model, base)
    s = len(seeds)
    if s == 0:
        return []
    positions = order.positions_by_rank()
    if len(positions) == 0:
        return [TokenGrid(partial.tokens, np.ones(partial.shape, bool))] * s

    masks = _masks_for(order, model.config)
    rngs = [np.random.default_rng(seed) for seed in seeds]
    tokens_b = np.repeat(base[None], s, axis=0)
    for r, c in positions:
        logits = _forward_batch(model, tokens_b, [masks] * s)[:, r, c]  # (S,K)
        if temperature == 0.0:
            choice = np.argmax(logits, axis=1)
        else:
            probs = softmax(logits / temperature)
            cum = np.cumsum(probs, axis=1)
            draws = np.array([rng.random() for rng in rngs])
            choice = np.minimum(
                np.array([np.searchsorted(cum[i], draws[i], side="right") for i in range(s)]),
                model.config.vocab - 1,
            )
        tokens_b[:, r, c] = choice
    full = np.ones(partial.shape, bool)
    return [TokenGrid(tokens_b[i].copy(), full) for i in range(s)]


def sample(
    model: ArModel,
    partial: TokenGrid,
    order: GenerationOrder,
    temperature: float,
    seed: int,
) -> TokenGrid:
    """Single completion; identical to a one-element sample_batch."""
    return sample_batch(model, partial, order, temperature, [seed])[0]


# ---------------------------------------------------------------------------
# checkpoint IO


def write_model(path: str | Path, model: ArModel) -> None:
    c = model.config
    header = _AR_MAGIC + struct.pack(
        "<IIIIII", _AR_VERSION, c.vocab, c.embed_dim, c.layers, c.kernel, c.channels
    )
    payload = b"".join(p.astype("<f4").tobytes() for p in model.parameters())
    Path(path).write_bytes(header + payload)


def read_model(path: str | Path) -> ArModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _AR_MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    version, vocab, embed_dim, layers, kernel, channels = struct.unpack_from("<IIIIII", raw, 4)
    if version != _AR_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    config = ArConfig(vocab, embed_dim, layers, kernel, channels)
    shapes = [(vocab, embed_dim)]
    c_in = embed_dim
    for _ in range(layers):
        shapes += [(kernel, kernel, c_in, channels), (channels,)]
        c_in = channels
    shapes += [(channels, vocab), (vocab,)]
    offset = 28
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, "<f4", count=n, offset=offset).astype(np.float64).reshape(shape)
        arrays.append(arr)
        offset += 4 * n
    if offset != len(raw):
        raise ValueError("checkpoint length does not match its hyperparameters")
    return ArModel(
        config,
        arrays[0],
        tuple(arrays[1 : 1 + 2 * layers : 2]),
        tuple(arrays[2 : 2 + 2 * layers : 2]),
        arrays[-2],
        arrays[-1],
    )
