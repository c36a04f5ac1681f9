"""Universal Transformer encoder-decoder.

Shapes: activations are ``(..., length, d)``; a leading batch axis is
optional everywhere. Step indices ``t`` are 1-based.
"""

from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import act as act_mod
from . import tensor as tn
from .errors import ConfigError, ShapeError, VocabularyError
from .tensor import Rng, Tensor

NEG_INF = -np.inf
TRANSITIONS = ("fully_connected", "separable_conv")


@dataclass
class ModelConfig:
    d: int = 128
    k: int = 4
    vocab_size: int = 14
    T_max: int = 6
    transition: str = "fully_connected"
    ff_hidden: Optional[int] = None  # None -> 4 * d
    conv_kernel: int = 3
    dropout_rate: float = 0.0
    act_enabled: bool = False
    act_threshold: float = 0.99
    act_max_steps: Optional[int] = None  # None -> T_max
    halting_bias_init: float = 1.0
    tie_weights: bool = True
    max_src_len: int = 64
    max_tgt_len: int = 64
    ln_eps: float = 1e-6
    dtype: str = "float64"

    def __post_init__(self):
        if self.ff_hidden is None:
            self.ff_hidden = 4 * self.d
        if self.act_max_steps is None:
            self.act_max_steps = self.T_max

    def problems(self) -> list:
        out = []
        if self.d < 1:
            out.append(f"d must be >= 1, got {self.d}")
        if self.d % 2:
            out.append(f"d must be even for coordinate embeddings, got {self.d}")
        if self.k < 1 or self.d % self.k:
            out.append(f"d ({self.d}) must be divisible by k ({self.k})")
        if self.vocab_size < 1:
            out.append(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.T_max < 1:
            out.append(f"T_max must be >= 1, got {self.T_max}")
        if self.transition not in TRANSITIONS:
            out.append(f"transition must be one of {TRANSITIONS}, got {self.transition!r}")
        if self.ff_hidden < 1:
            out.append(f"ff_hidden must be >= 1, got {self.ff_hidden}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            out.append(f"conv_kernel must be a positive odd integer, got {self.conv_kernel}")
        if not 0.0 <= self.dropout_rate < 1.0:
            out.append(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not 0.0 < self.act_threshold < 1.0:
            out.append(f"act_threshold must lie in (0, 1), got {self.act_threshold}")
        if self.act_max_steps < 1:
            out.append(f"act_max_steps must be >= 1, got {self.act_max_steps}")
        if not self.tie_weights and self.act_enabled and self.act_max_steps > self.T_max:
            out.append("untied weights with ACT need act_max_steps <= T_max")
        if self.dtype not in ("float64", "float32"):
            out.append(f"dtype must be float64 or float32, got {self.dtype!r}")
        return out

    def validate(self) -> "ModelConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def head_width(self) -> int:
        return self.d // self.k

    @property
    def n_copies(self) -> int:
        """Parameter copies per layer role: 1 when tied, otherwise one per step."""
        return 1 if self.tie_weights else self.T_max

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown model field {name!r}" for name in unknown])
        return cls(**data)


class Parameters(dict):
    """Ordered mapping from parameter name to leaf :class:`Tensor`."""

    def count(self) -> int:
        return sum(t.size for t in self.values())

    def zero_grad(self) -> None:
        for t in self.values():
            t.zero_grad()

    def copy(self) -> "Parameters":
        return Parameters((k, tn.parameter(v.data.copy(), name=k)) for k, v in self.items())

    def rounded_to_float32(self) -> "Parameters":
        """Copy whose values are exactly what a float32 checkpoint stores."""
        return Parameters(
            (k, tn.parameter(v.data.astype(np.float32).astype(v.dtype), name=k))
            for k, v in self.items())


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def _uniform(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


def parameter_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape for every parameter of the model described by ``cfg``."""
    d, V, K, F = cfg.d, cfg.vocab_size, cfg.conv_kernel, cfg.ff_hidden
    shapes = {"embedding": (V, d)}
    for side in ("encoder", "decoder"):
        blocks = ["self_attn", "cross_attn"] if side == "decoder" else ["self_attn"]
        for j in range(cfg.n_copies):
            pre = f"{side}.{j}."
            for block in blocks:
                for w in ("wq", "wk", "wv", "wo"):
                    shapes[pre + f"{block}.{w}"] = (d, d)
                ln = "ln_attn" if block == "self_attn" else "ln_cross"
                shapes[pre + f"{ln}.gain"] = (d,)
                shapes[pre + f"{ln}.bias"] = (d,)
            if cfg.transition == "fully_connected":
                shapes[pre + "ffn.w1"] = (d, F)
                shapes[pre + "ffn.b1"] = (F,)
                shapes[pre + "ffn.w2"] = (F, d)
                shapes[pre + "ffn.b2"] = (d,)
            else:
                shapes[pre + "sepconv.depthwise"] = (d, K)
                shapes[pre + "sepconv.dw_bias"] = (d,)
                shapes[pre + "sepconv.pointwise"] = (d, d)
                shapes[pre + "sepconv.pw_bias"] = (d,)
            shapes[pre + "ln_trans.gain"] = (d,)
            shapes[pre + "ln_trans.bias"] = (d,)
        if cfg.act_enabled:
            shapes[f"{side}.halt.w"] = (d, 1)
            shapes[f"{side}.halt.b"] = (1,)
    shapes["output.w"] = (d, V)
    shapes["output.b"] = (V,)
    return shapes


def init_params(cfg: ModelConfig, seed: int) -> Parameters:
    """Uniform(+-1/sqrt(fan_in)) weights, unit gains, zero biases.

    Each tensor draws from its own stream keyed by its position in
    :func:`parameter_shapes`, so tied and untied models built from one seed
    agree on every parameter they share by name.
    """
    cfg.validate()
    rng = Rng(seed, 0x5EED)
    dtype = cfg.np_dtype
    params = Parameters()
    for idx, (name, shape) in enumerate(parameter_shapes(cfg).items()):
        leaf = name.rsplit(".", 1)[-1]
        r = rng.child(_stable_key(name))
        if leaf == "gain":
            data = np.ones(shape, dtype)
        elif name == "embedding":
            data = _uniform(r, shape, cfg.d, dtype)
        elif leaf in ("bias", "b1", "b2", "dw_bias", "pw_bias") or name == "output.b":
            data = np.zeros(shape, dtype)
        elif leaf == "b":
            data = np.full(shape, cfg.halting_bias_init, dtype)
        elif leaf == "depthwise":
            data = _uniform(r, shape, shape[1], dtype)
        else:
            data = _uniform(r, shape, shape[0], dtype)
        params[name] = tn.parameter(data, name=name)
    return params


def _stable_key(name: str) -> int:
    # Deterministic across processes, unlike hash().
    h = 1469598103934665603
    for ch in name.encode():
        h = ((h ^ ch) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def causal_mask(n: int) -> np.ndarray:
    """Additive (n, n) mask: 0 on and below the diagonal, -inf above."""
    if n < 1:
        raise ValueError(f"causal_mask needs n >= 1, got {n}")
    return np.triu(np.full((n, n), NEG_INF), k=1)


def key_padding_mask(mask: np.ndarray) -> np.ndarray:
    """(B, n_k) 1/0 real-token mask -> (B, 1, 1, n_k) additive mask for multi-head scores."""
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, 0.0, NEG_INF)[:, None, None, :]


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None,
                         trace: Optional[list] = None, tag=None) -> Tensor:
    """softmax(q k^T / sqrt(d_h) + mask) v over the last two axes."""
    d_h = q.shape[-1]
    if k.shape[-1] != d_h or v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scores = (q @ tn.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(d_h))
    if mask is not None:
        scores = scores + np.asarray(mask, dtype=scores.dtype)
    weights = tn.softmax_rows(scores)
    if trace is not None:
        trace.append({"tag": tag, "weights": weights.data.copy()})
    return weights @ v


def _split_heads(x: Tensor, k: int) -> Tensor:
    *lead, n, d = x.shape
    return tn.swapaxes(x.reshape(*lead, n, k, d // k), -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, k, n, dh = x.shape
    return tn.swapaxes(x, -3, -2).reshape(*lead, n, k * dh)


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params, prefix: str, k: int,
                         mask=None, trace=None, tag=None, kv=None) -> Tensor:
    """Concat_i Attention(x_q Wq_i, x_kv Wk_i, x_kv Wv_i) Wo.

    ``kv`` optionally supplies already split key/value heads for ``x_kv``.
    """
    q = _split_heads(x_q @ params[prefix + ".wq"], k)
    if kv is None:
        kv = project_kv(x_kv, params, prefix, k)
    heads = scaled_dot_attention(q, kv[0], kv[1], mask, trace, tag)
    return _merge_heads(heads) @ params[prefix + ".wo"]


def project_kv(x_kv: Tensor, params, prefix: str, k: int):
    return (_split_heads(x_kv @ params[prefix + ".wk"], k),
            _split_heads(x_kv @ params[prefix + ".wv"], k))


def multi_head_self_attention(h: Tensor, params, prefix: str, k: int, mask=None,
                              trace=None, tag=None) -> Tensor:
    return multi_head_attention(h, h, params, prefix, k, mask, trace, tag)


def cross_attention(h_dec: Tensor, h_enc: Tensor, params, prefix: str, k: int,
                    mask=None, trace=None, tag=None, kv=None) -> Tensor:
    """Queries from the decoder state, keys/values from the final encoder state."""
    return multi_head_attention(h_dec, h_enc, params, prefix, k, mask, trace, tag, kv)


# ---------------------------------------------------------------------------
# coordinate embeddings
# ---------------------------------------------------------------------------

def sinusoid_table(positions, d: int) -> np.ndarray:
    """Interleaved sin/cos table: column 2j is sin(x / 10000^(2j/d)), 2j+1 the cos."""
    if d % 2:
        raise ConfigError(f"coordinate embeddings need an even width, got d={d}")
    x = np.asarray(positions, dtype=np.float64)[..., None]
    denom = 10000.0 ** (2.0 * np.arange(d // 2) / d)
    angles = x / denom
    out = np.empty(x.shape[:-1] + (d,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


@lru_cache(maxsize=32)
def _integer_table(n: int, d: int) -> np.ndarray:
    table = sinusoid_table(np.arange(n), d)
    table.flags.writeable = False
    return table


def coordinate_embeddings_at(positions, t: int, d: int) -> np.ndarray:
    """Position table for ``positions`` plus the broadcast step-``t`` vector."""
    positions = np.asarray(positions)
    if positions.dtype.kind in "iu" and positions.size and positions.min() >= 0:
        # rows of a cached table over 0..n-1, identical to evaluating them directly
        n = 1 << max(int(positions.max()), int(t)).bit_length()
        table = _integer_table(max(n, 64), d)
        return table[positions] + table[int(t)]
    return sinusoid_table(positions, d) + sinusoid_table(t, d)


def coordinate_embeddings(m: int, t: int, d: int) -> np.ndarray:
    """(m, d) coordinate embeddings for positions 1..m at step t."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    return coordinate_embeddings_at(np.arange(1, m + 1), t, d)


# ---------------------------------------------------------------------------
# transition functions
# ---------------------------------------------------------------------------

def transition_fc(a: Tensor, params, prefix: str) -> Tensor:
    hidden = tn.relu(a @ params[prefix + ".w1"] + params[prefix + ".b1"])
    return hidden @ params[prefix + ".w2"] + params[prefix + ".b2"]


def transition_sepconv(a: Tensor, params, prefix: str, causal: bool = False,
                       real=None) -> Tensor:
    """Depthwise conv along positions, ReLU, then a pointwise affine map.

    ``real`` (..., m) zeroes padding rows before the convolution so they do
    not leak into neighbouring real positions.
    """
    if real is not None:
        a = a * np.asarray(real, dtype=a.dtype)[..., None]
    h = tn.depthwise_conv1d(a, params[prefix + ".depthwise"], causal=causal)
    h = tn.relu(h + params[prefix + ".dw_bias"])
    return h @ params[prefix + ".pointwise"] + params[prefix + ".pw_bias"]


def _transition(a, params, pre, cfg, causal, real):
    if cfg.transition == "fully_connected":
        return transition_fc(a, params, pre + "ffn")
    return transition_sepconv(a, params, pre + "sepconv", causal=causal, real=real)


def _prefix(cfg: ModelConfig, side: str, t: int) -> str:
    j = 0 if cfg.tie_weights else t - 1
    if j >= cfg.n_copies:
        raise ConfigError(f"step {t} exceeds the {cfg.n_copies} untied {side} layers")
    return f"{side}.{j}."


# ---------------------------------------------------------------------------
# recurrent steps
# ---------------------------------------------------------------------------

def _positions(shape, offsets=None) -> np.ndarray:
    m = shape[-2]
    pos = np.arange(1, m + 1)
    if offsets is None:
        return pos
    return np.asarray(offsets)[:, None] + pos


def encoder_step(h_prev: Tensor, t: int, params, cfg: ModelConfig, rng: Optional[Rng] = None,
                 training: bool = False, positions=None, key_mask=None, real=None,
                 trace=None) -> Tensor:
    """One shared encoder block: attention sub-block then transition sub-block.

    X = H + P^t;  A = LN(X + Drop(MHSA(X)));  H' = LN(A + Drop(Transition(A))).
    """
    pre = _prefix(cfg, "encoder", t)
    if positions is None:
        positions = _positions(h_prev.shape)
    x = h_prev + coordinate_embeddings_at(positions, t, cfg.d).astype(h_prev.dtype)
    attn = multi_head_self_attention(x, params, pre + "self_attn", cfg.k, key_mask,
                                     trace, ("encoder", "self", t))
    a = tn.layer_norm(x + tn.dropout(attn, cfg.dropout_rate, rng, training),
                      params[pre + "ln_attn.gain"], params[pre + "ln_attn.bias"], cfg.ln_eps)
    tr = _transition(a, params, pre, cfg, causal=False, real=real)
    return tn.layer_norm(a + tn.dropout(tr, cfg.dropout_rate, rng, training),
                         params[pre + "ln_trans.gain"], params[pre + "ln_trans.bias"], cfg.ln_eps)


def decoder_step(s_prev: Tensor, h_enc: Tensor, t: int, params, cfg: ModelConfig,
                 rng: Optional[Rng] = None, training: bool = False, positions=None,
                 self_mask=None, src_key_mask=None, real=None, trace=None,
                 kv_cache: Optional[dict] = None) -> Tensor:
    """Causal self-attention, cross-attention on the encoder output, transition.

    Each of the three sub-blocks is wrapped in dropout, residual and layer norm.
    """
    pre = _prefix(cfg, "decoder", t)
    n = s_prev.shape[-2]
    if positions is None:
        positions = _positions(s_prev.shape)
    if self_mask is None:
        self_mask = causal_mask(n)
    x = s_prev + coordinate_embeddings_at(positions, t, cfg.d).astype(s_prev.dtype)
    sa = multi_head_self_attention(x, params, pre + "self_attn", cfg.k, self_mask,
                                   trace, ("decoder", "self", t))
    a1 = tn.layer_norm(x + tn.dropout(sa, cfg.dropout_rate, rng, training),
                       params[pre + "ln_attn.gain"], params[pre + "ln_attn.bias"], cfg.ln_eps)
    kv = None
    if kv_cache is not None:
        kv = kv_cache.get(pre)
        if kv is None:
            kv = kv_cache[pre] = project_kv(h_enc, params, pre + "cross_attn", cfg.k)
    ca = cross_attention(a1, h_enc, params, pre + "cross_attn", cfg.k, src_key_mask,
                         trace, ("decoder", "cross", t), kv)
    a2 = tn.layer_norm(a1 + tn.dropout(ca, cfg.dropout_rate, rng, training),
                       params[pre + "ln_cross.gain"], params[pre + "ln_cross.bias"], cfg.ln_eps)
    tr = _transition(a2, params, pre, cfg, causal=True, real=real)
    return tn.layer_norm(a2 + tn.dropout(tr, cfg.dropout_rate, rng, training),
                         params[pre + "ln_trans.gain"], params[pre + "ln_trans.bias"], cfg.ln_eps)


@dataclass
class StackOutput:
    """Final representations of an encoder or decoder stack."""
    h: Tensor
    per_step_states: list = field(default_factory=list)
    ponder: Optional[np.ndarray] = None
    remainders: Optional[Tensor] = None
    steps: int = 0


EncoderOutput = StackOutput


def embed(tokens, params, cfg: ModelConfig) -> Tensor:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        bad = int(tokens.max() if tokens.max() >= cfg.vocab_size else tokens.min())
        raise VocabularyError(f"token id {bad} outside vocabulary of size {cfg.vocab_size}")
    return tn.embedding(params["embedding"], tokens) * math.sqrt(cfg.d)


def _run_stack(h0: Tensor, step, params, cfg, side: str, real, keep_states: bool) -> StackOutput:
    if cfg.act_enabled:
        w, b = params[f"{side}.halt.w"], params[f"{side}.halt.b"]
        d = cfg.d

        def halt_fn(state, t):
            pos = step.positions
            x = state + coordinate_embeddings_at(pos, t, d).astype(state.dtype)
            return act_mod.halting_unit(x, w, b)

        halted = None if real is None else ~np.asarray(real, dtype=bool)
        res = act_mod.run_act(h0, step, halt_fn, cfg.act_threshold, cfg.act_max_steps, halted)
        return StackOutput(res.output, [], res.n_updates, res.remainders, res.steps)
    h = h0
    states = []
    for t in range(1, cfg.T_max + 1):
        h = step(h, t)
        if keep_states:
            states.append(h)
    return StackOutput(h, states, None, None, cfg.T_max)


class _Step:
    """Bound step function with fixed context, callable as ``step(state, t)``."""

    def __init__(self, fn, positions, **kwargs):
        self.fn = fn
        self.positions = positions
        self.kwargs = kwargs

    def __call__(self, state, t):
        return self.fn(state, t=t, positions=self.positions, **self.kwargs)


def encode(src, params, cfg: ModelConfig, offsets=None, src_mask=None, rng=None,
           training: bool = False, trace=None, keep_states: bool = False) -> StackOutput:
    """Embed ``src`` (…, m) and run the encoder for T_max steps or under ACT."""
    h0 = embed(src, params, cfg)
    positions = _positions(h0.shape, offsets)
    key_mask = None if src_mask is None else key_padding_mask(src_mask)

    def fn(state, t, positions):
        return encoder_step(state, t, params, cfg, rng, training, positions,
                            key_mask, src_mask, trace)

    return _run_stack(h0, _Step(fn, positions), params, cfg, "encoder", src_mask, keep_states)


def encode_fixed(tokens, offset, params, cfg: ModelConfig, keep_states: bool = True) -> StackOutput:
    """Fixed-depth encoding of a single unbatched sequence."""
    if cfg.act_enabled:
        raise ConfigError("encode_fixed requires act_enabled = False")
    offsets = None if not offset else np.array([offset])
    tokens = np.asarray(tokens)
    if offsets is not None:
        out = encode(tokens[None], params, cfg, offsets, keep_states=keep_states)
        return StackOutput(out.h.reshape(out.h.shape[1:]),
                           [s.reshape(s.shape[1:]) for s in out.per_step_states],
                           None, None, out.steps)
    return encode(tokens, params, cfg, keep_states=keep_states)


def decode(tgt_in, enc: StackOutput, params, cfg: ModelConfig, offsets=None, src_mask=None,
           tgt_mask=None, rng=None, training: bool = False, trace=None,
           keep_states: bool = False) -> StackOutput:
    """Run the decoder stack on teacher-forced (or generated) inputs ``tgt_in``."""
    s0 = embed(tgt_in, params, cfg)
    positions = _positions(s0.shape, offsets)
    n = s0.shape[-2]
    self_mask = causal_mask(n)
    src_key_mask = None if src_mask is None else key_padding_mask(src_mask)
    cache: dict = {}

    def fn(state, t, positions):
        return decoder_step(state, enc.h, t, params, cfg, rng, training, positions,
                            self_mask, src_key_mask, tgt_mask, trace, cache)

    return _run_stack(s0, _Step(fn, positions), params, cfg, "decoder", tgt_mask, keep_states)


def output_logits(s: Tensor, params) -> Tensor:
    return s @ params["output.w"] + params["output.b"]


def output_distribution(s: Tensor, o) -> Tensor:
    """softmax_rows(S O): per-position distribution over the vocabulary."""
    return tn.softmax_rows(s @ o)


@dataclass
class ForwardResult:
    logits: Tensor
    encoder: StackOutput
    decoder: StackOutput


def forward(params, cfg: ModelConfig, src, tgt_in, offsets=None, src_mask=None, tgt_mask=None,
            rng=None, training: bool = False, trace=None) -> ForwardResult:
    enc = encode(src, params, cfg, offsets, src_mask, rng, training, trace)
    dec = decode(tgt_in, enc, params, cfg, offsets, src_mask, tgt_mask, rng, training, trace)
    return ForwardResult(output_logits(dec.h, params), enc, dec)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

@dataclass
class Generation:
    tokens: list  # generated ids, EOS excluded
    terminated: bool  # EOS was produced within max_len


def generate_greedy_batch(src, params, cfg: ModelConfig, max_len: int, bos: int, eos: int,
                          src_mask=None, offsets=None) -> list:
    """Greedy decoding for a batch of sources; returns one :class:`Generation` each.

    The decoder is re-run on BOS + the prefix generated so far at every
    iteration and the argmax of the last position is appended.
    """
    src = np.asarray(src, dtype=np.int64)
    B = src.shape[0]
    if src_mask is None:
        src_mask = np.ones(src.shape, dtype=bool)
    with tn.no_grad():
        enc = encode(src, params, cfg, offsets, src_mask)
        prefix = np.full((B, 1), bos, dtype=np.int64)
        done = np.zeros(B, dtype=bool)
        terminated = np.zeros(B, dtype=bool)
        generated = [[] for _ in range(B)]
        for _ in range(max_len + 1):
            if done.all():
                break
            dec = decode(prefix, enc, params, cfg, offsets, src_mask)
            logits = output_logits(dec.h, params).data[:, -1, :]
            nxt = logits.argmax(axis=-1)
            for b in np.flatnonzero(~done):
                if nxt[b] == eos:
                    done[b] = terminated[b] = True
                elif len(generated[b]) >= max_len:
                    done[b] = True
                else:
                    generated[b].append(int(nxt[b]))
            prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return [Generation(g, bool(t)) for g, t in zip(generated, terminated)]


def generate_greedy(src_tokens, params, cfg: ModelConfig, max_len: int, bos: int = 1,
                    eos: int = 2, offset: int = 0) -> Generation:
    offsets = np.array([offset]) if offset else None
    return generate_greedy_batch(np.asarray(src_tokens)[None], params, cfg, max_len, bos, eos,
                                 offsets=offsets)[0]
