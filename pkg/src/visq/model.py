"""The neural core: patch encoder, instruction encoder, prefix-LM transformer.

The conditioning prefix is the concatenation of 64 patch embeddings of the
input image and the projected outputs of a small bidirectional instruction
encoder; output tokens are generated autoregressively on top of it. The
attention mask lets prefix positions see each other bidirectionally while
output position t sees the full prefix and outputs up to t (prefix-LM).
Logits share weights with the unified vocabulary embedding.

Two execution paths exist over the same parameters: the taped path used for
training (see autodiff), and CachedDecoder, a plain-numpy incremental
forward with per-layer KV caches used for sampling. They agree to float32
roundoff; a test pins the 1e-5 bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bpe import BpeModel, bpe_encode
from .vocab import VocabLayout

NEG_INF = -1e9


class ModelError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Architecture knobs.

    dropout is word dropout on the decoder-input token embeddings during
    training: whole tokens are blanked (positions kept) so the model cannot
    lean on copying the teacher-forced prefix and must bind outputs to the
    image and instruction. Inference never applies it.
    """

    embed_dim: int = 128
    layers: int = 4
    heads: int = 4
    ffn_mult: int = 4
    image_size: int = 32
    encoder_patch_size: int = 4
    instr_layers: int = 2
    max_instr_len: int = 40
    max_output_len: int = 72
    dropout: float = 0.0
    activation: str = "gelu"
    layout: VocabLayout = field(default_factory=VocabLayout)

    @property
    def n_image_tokens(self) -> int:
        side = self.image_size // self.encoder_patch_size
        return side * side

    @property
    def max_prefix_len(self) -> int:
        return self.n_image_tokens + self.max_instr_len

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def validate(self) -> None:
        if self.embed_dim % self.heads:
            raise ModelError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.image_size % self.encoder_patch_size:
            raise ModelError("image size not divisible by encoder patch size")
        if self.activation not in ("gelu", "relu"):
            raise ModelError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        d = {
            k: getattr(self, k)
            for k in (
                "embed_dim", "layers", "heads", "ffn_mult", "image_size",
                "encoder_patch_size", "instr_layers", "max_instr_len",
                "max_output_len", "dropout", "activation",
            )
        }
        return d

    @classmethod
    def from_dict(cls, d: dict, layout: VocabLayout) -> "ModelConfig":
        return cls(layout=layout, **d)


INSTR_PREFIX = "instr."  # parameter names covered by the instruction-encoder freeze
VISUAL_PREFIX = ("patch_proj.", "vis_pos")  # covered by the visual-encoder freeze


class Parameters:
    """Named parameter tensors plus freeze bookkeeping."""

    def __init__(self, tensors: dict[str, Tensor], config: ModelConfig):
        self.tensors = tensors
        self.config = config

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def set_frozen(self, freeze_instruction: bool, freeze_visual: bool = False) -> None:
        for name, t in self.tensors.items():
            frozen = (freeze_instruction and name.startswith(INSTR_PREFIX)) or (
                freeze_visual and name.startswith(VISUAL_PREFIX)
            )
            t.requires_grad = not frozen

    def trainable_names(self) -> list[str]:
        return [n for n in self.names() if self.tensors[n].requires_grad]

    def astype(self, dtype) -> "Parameters":
        return Parameters(
            {
                n: Tensor(t.data.astype(dtype), requires_grad=t.requires_grad)
                for n, t in self.tensors.items()
            },
            self.config,
        )

    def check_finite(self) -> None:
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise GradientError(f"non-finite values in parameter {name!r}")


def _block_names(prefix: str, d: int, ffn: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.ln1.g": (d,),
        f"{prefix}.ln1.b": (d,),
        f"{prefix}.attn.qkv.w": (d, 3 * d),
        f"{prefix}.attn.qkv.b": (3 * d,),
        f"{prefix}.attn.out.w": (d, d),
        f"{prefix}.attn.out.b": (d,),
        f"{prefix}.ln2.g": (d,),
        f"{prefix}.ln2.b": (d,),
        f"{prefix}.ffn.w1": (d, ffn),
        f"{prefix}.ffn.b1": (ffn,),
        f"{prefix}.ffn.w2": (ffn, d),
        f"{prefix}.ffn.b2": (d,),
    }


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = config.embed_dim
    ffn = d * config.ffn_mult
    patch_dim = 3 * config.encoder_patch_size**2
    shapes: dict[str, tuple[int, ...]] = {
        "patch_proj.w": (patch_dim, d),
        "patch_proj.b": (d,),
        "vis_pos": (config.n_image_tokens, d),
        "instr.tok_emb": (max(config.layout.n_text, 1), d),
        "instr.pos": (config.max_instr_len, d),
        "instr_proj.w": (d, d),
        "instr_proj.b": (d,),
        "tok_emb": (config.layout.total, d),
        "out_pos": (config.max_output_len, d),
        "ln_f.g": (d,),
        "ln_f.b": (d,),
    }
    for i in range(config.instr_layers):
        shapes.update(_block_names(f"instr.block{i}", d, ffn))
    for i in range(config.layers):
        shapes.update(_block_names(f"dec.block{i}", d, ffn))
    return shapes


def init_parameters(config: ModelConfig, seed: int = 0) -> Parameters:
    """normal(0, 0.02) weights; layer-norm gains 1, every bias 0."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([0x9A2A, seed]))
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("g",):
            data = np.ones(shape, dtype=np.float32)
        elif leaf in ("b", "b1", "b2"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            data = rng.normal(0.0, 0.02, size=shape).astype(np.float32)
        tensors[name] = Tensor(data, requires_grad=True)
    return Parameters(tensors, config)


# --- taped forward (training path) -----------------------------------------


def _activation(config: ModelConfig):
    return ad.gelu if config.activation == "gelu" else ad.relu


def _attention(x: Tensor, params: Parameters, prefix: str, mask: np.ndarray) -> Tensor:
    cfg = params.config
    b, t, d = x.shape
    h, dh = cfg.heads, cfg.head_dim
    qkv = ad.add(ad.matmul(x, params[f"{prefix}.attn.qkv.w"]), params[f"{prefix}.attn.qkv.b"])
    qkv = ad.reshape(qkv, (b, t, 3, h, dh))
    qkv = ad.transpose(qkv, (2, 0, 3, 1, 4))  # (3, B, h, T, dh)
    q, k, v = (ad.slice_(qkv, i) for i in range(3))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
    scores = ad.add_const(scores, mask)
    att = ad.softmax(scores, axis=-1)
    ctx = ad.matmul(att, v)  # (B, h, T, dh)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
    return ad.add(ad.matmul(ctx, params[f"{prefix}.attn.out.w"]), params[f"{prefix}.attn.out.b"])


def _ffn(x: Tensor, params: Parameters, prefix: str, act) -> Tensor:
    hidden = act(ad.add(ad.matmul(x, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"]))
    return ad.add(ad.matmul(hidden, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])


def _block(x: Tensor, params: Parameters, prefix: str, mask: np.ndarray, act) -> Tensor:
    ln1 = ad.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    x = ad.add(x, _attention(ln1, params, prefix, mask))
    ln2 = ad.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    return ad.add(x, _ffn(ln2, params, prefix, act))


def image_patches(image: np.ndarray, patch_size: int) -> np.ndarray:
    """(H, W, 3) uint8 -> (n_patches, 3p^2) float32 rows in [0, 1], row-major."""
    h, w = image.shape[:2]
    p = patch_size
    x = image.reshape(h // p, p, w // p, p, 3).transpose(0, 2, 1, 3, 4)
    return (x.reshape(-1, 3 * p * p) / 255.0).astype(np.float32)


def patch_embed(image: np.ndarray, params: Parameters) -> Tensor:
    """Embed one image to (n_image_tokens, embed_dim) with positions added."""
    cfg = params.config
    if image.shape[:2] != (cfg.image_size, cfg.image_size):
        raise ModelError(f"expected {cfg.image_size}x{cfg.image_size} image, got {image.shape[:2]}")
    patches = Tensor(image_patches(image, cfg.encoder_patch_size).astype(params["patch_proj.w"].dtype))
    x = ad.add(ad.matmul(patches, params["patch_proj.w"]), params["patch_proj.b"])
    return ad.add(x, params["vis_pos"])


def _batched_patch_embed(images: np.ndarray, params: Parameters) -> Tensor:
    cfg = params.config
    b = images.shape[0]
    pats = np.stack([image_patches(img, cfg.encoder_patch_size) for img in images])
    patches = Tensor(pats.astype(params["patch_proj.w"].dtype))
    x = ad.add(ad.matmul(patches, params["patch_proj.w"]), params["patch_proj.b"])
    return ad.add(x, ad.reshape(params["vis_pos"], (1, cfg.n_image_tokens, cfg.embed_dim)))


def _instr_key_mask(lengths: np.ndarray, t: int, dtype) -> np.ndarray:
    """(B, 1, 1, t) additive mask hiding padded instruction slots."""
    valid = np.arange(t)[None, :] < lengths[:, None]
    return np.where(valid, 0.0, NEG_INF).astype(dtype)[:, None, None, :]


def encode_instruction_batch(
    ids: np.ndarray, lengths: np.ndarray, params: Parameters
) -> Tensor:
    """(B, T_i) local text ids -> (B, T_i, d) in the common embedding space."""
    cfg = params.config
    t = ids.shape[1]
    if t > cfg.max_instr_len:
        raise ModelError(f"instruction length {t} exceeds budget {cfg.max_instr_len}")
    x = ad.add(
        ad.embedding(params["instr.tok_emb"], ids),
        ad.reshape(ad.slice_(params["instr.pos"], slice(0, t)), (1, t, cfg.embed_dim)),
    )
    mask = _instr_key_mask(lengths, t, x.dtype)
    act = _activation(cfg)
    for i in range(cfg.instr_layers):
        x = _block(x, params, f"instr.block{i}", mask, act)
    return ad.add(ad.matmul(x, params["instr_proj.w"]), params["instr_proj.b"])


def encode_instruction(text: str, bpe: BpeModel, params: Parameters) -> Tensor:
    """Single-instruction encoder entry point; (T_i, d)."""
    ids = np.array([bpe_encode(bpe, text)], dtype=np.int64)
    if ids.shape[1] == 0:
        raise ModelError("empty instruction")
    lengths = np.array([ids.shape[1]])
    out = encode_instruction_batch(ids, lengths, params)
    return ad.reshape(out, (out.shape[1], out.shape[2]))


def prefix_lm_mask(
    n_image: int, instr_lens: np.ndarray, t_instr: int, t_out: int, dtype
) -> np.ndarray:
    """(B, 1, T, T) additive mask: bidirectional valid prefix, causal outputs."""
    b = len(instr_lens)
    p = n_image + t_instr
    t = p + t_out
    valid_prefix = np.zeros((b, t), dtype=bool)
    valid_prefix[:, :n_image] = True
    valid_prefix[:, n_image:p] = np.arange(t_instr)[None, :] < instr_lens[:, None]
    allowed = np.repeat(valid_prefix[:, None, :], t, axis=1)  # (B, T, T), key axis last
    out_idx = np.arange(t_out)
    causal = out_idx[:, None] >= out_idx[None, :]
    allowed[:, p:, p:] = causal[None, :, :]
    allowed[:, :p, p:] = False
    return np.where(allowed, 0.0, NEG_INF).astype(dtype)[:, None, :, :]


def forward(
    params: Parameters,
    images: np.ndarray,  # (B, 32, 32, 3) uint8
    instr_ids: np.ndarray,  # (B, T_i) padded local text ids
    instr_lens: np.ndarray,  # (B,)
    out_tokens: np.ndarray,  # (B, T_out) decoder input: BOS + target[:-1]
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Teacher-forced logits (B, T_out, vocab_total); row t predicts target[t]."""
    cfg = params.config
    t_instr, t_out = instr_ids.shape[1], out_tokens.shape[1]
    if t_instr > cfg.max_instr_len:
        raise ModelError(f"instruction length {t_instr} exceeds budget {cfg.max_instr_len}")
    if t_out > cfg.max_output_len:
        raise ModelError(f"output length {t_out} exceeds budget {cfg.max_output_len}")
    d = cfg.embed_dim
    img = _batched_patch_embed(images, params)
    instr = encode_instruction_batch(instr_ids, instr_lens, params)
    tok = ad.embedding(params["tok_emb"], out_tokens)
    if cfg.dropout > 0.0 and dropout_rng is not None:
        b = out_tokens.shape[0]
        keep = (dropout_rng.random((b, t_out, 1)) >= cfg.dropout)
        scale = keep.astype(tok.data.dtype) / np.asarray(1.0 - cfg.dropout, dtype=tok.data.dtype)
        tok = ad.mul(tok, Tensor(scale))
    out_emb = ad.add(
        tok,
        ad.reshape(ad.slice_(params["out_pos"], slice(0, t_out)), (1, t_out, d)),
    )
    x = ad.concat([img, instr, out_emb], axis=1)
    mask = prefix_lm_mask(cfg.n_image_tokens, instr_lens, t_instr, t_out, x.dtype)
    act = _activation(cfg)
    for i in range(cfg.layers):
        x = _block(x, params, f"dec.block{i}", mask, act)
    x = ad.layer_norm(x, params["ln_f.g"], params["ln_f.b"])
    p = cfg.n_image_tokens + t_instr
    h_out = ad.slice_(x, (slice(None), slice(p, p + t_out)))
    return ad.matmul(h_out, ad.transpose(params["tok_emb"], (1, 0)))


def sequence_loss(logits: Tensor, targets: np.ndarray, pad_mask: np.ndarray) -> Tensor:
    """Mean token cross-entropy over positions where pad_mask is 1."""
    if logits.shape[:-1] != np.asarray(targets).shape:
        raise ModelError(f"logits {logits.shape} do not match targets {np.asarray(targets).shape}")
    return ad.cross_entropy(logits, targets, pad_mask)


def compute_gradients(loss: Tensor, params: Parameters) -> dict[str, np.ndarray]:
    """Backprop and return a gradient per parameter (zeros where frozen)."""
    for t in params.tensors.values():
        t.grad = None
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, t in params.tensors.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for {name!r}")
        grads[name] = g
    return grads


# --- plain-numpy incremental decoder (inference path) ----------------------


class CachedDecoder:
    """Token-at-a-time forward over fixed parameters with per-layer KV caches.

    build_prefix runs the image+instruction prefix once; step() feeds one
    output token and returns the next-token logits row. Matches the taped
    forward to float32 roundoff.
    """

    def __init__(self, params: Parameters, image: np.ndarray, instr_ids: list[int]):
        cfg = params.config
        cfg.validate()
        if len(instr_ids) == 0:
            raise ModelError("empty instruction")
        if len(instr_ids) > cfg.max_instr_len:
            raise ModelError(f"instruction length {len(instr_ids)} exceeds budget {cfg.max_instr_len}")
        self.cfg = cfg
        self.p = {n: t.data for n, t in params.tensors.items()}
        self.n_prefix = cfg.n_image_tokens + len(instr_ids)
        self.t_out = 0
        h, dh = cfg.heads, cfg.head_dim
        cap = self.n_prefix + cfg.max_output_len
        self.k_cache = [np.zeros((h, cap, dh), dtype=np.float32) for _ in range(cfg.layers)]
        self.v_cache = [np.zeros((h, cap, dh), dtype=np.float32) for _ in range(cfg.layers)]
        self._build_prefix(image, np.asarray(instr_ids, dtype=np.int64))

    # raw-numpy building blocks -------------------------------------------

    def _ln(self, x: np.ndarray, prefix: str) -> np.ndarray:
        g, b = self.p[f"{prefix}.g"], self.p[f"{prefix}.b"]
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        return g * (x - mu) / np.sqrt(var + np.float32(1e-5)) + b

    def _act(self, x: np.ndarray) -> np.ndarray:
        if self.cfg.activation == "relu":
            return np.maximum(x, 0)
        u = _GELU_C * (x + _GELU_A * x**3)
        return 0.5 * x * (1.0 + np.tanh(u))

    def _ffn(self, x: np.ndarray, prefix: str) -> np.ndarray:
        h = self._act(x @ self.p[f"{prefix}.ffn.w1"] + self.p[f"{prefix}.ffn.b1"])
        return h @ self.p[f"{prefix}.ffn.w2"] + self.p[f"{prefix}.ffn.b2"]

    def _qkv(self, x: np.ndarray, prefix: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = x.shape[0]
        h, dh = self.cfg.heads, self.cfg.head_dim
        qkv = (x @ self.p[f"{prefix}.attn.qkv.w"] + self.p[f"{prefix}.attn.qkv.b"])
        qkv = qkv.reshape(t, 3, h, dh).transpose(1, 2, 0, 3)  # (3, h, T, dh)
        return qkv[0], qkv[1], qkv[2]

    def _softmax(self, x: np.ndarray) -> np.ndarray:
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    # prefix + incremental step --------------------------------------------

    def _instr_encode(self, ids: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        x = self.p["instr.tok_emb"][ids] + self.p["instr.pos"][: len(ids)]
        for i in range(cfg.instr_layers):
            prefix = f"instr.block{i}"
            ln1 = self._ln(x, f"{prefix}.ln1")
            q, k, v = self._qkv(ln1, prefix)
            att = self._softmax((q @ k.swapaxes(-1, -2)) / np.sqrt(np.float32(cfg.head_dim)))
            ctx = (att @ v).transpose(1, 0, 2).reshape(len(ids), cfg.embed_dim)
            x = x + ctx @ self.p[f"{prefix}.attn.out.w"] + self.p[f"{prefix}.attn.out.b"]
            x = x + self._ffn(self._ln(x, f"{prefix}.ln2"), prefix)
        return x @ self.p["instr_proj.w"] + self.p["instr_proj.b"]

    def _build_prefix(self, image: np.ndarray, instr_ids: np.ndarray) -> None:
        cfg = self.cfg
        if image.shape[:2] != (cfg.image_size, cfg.image_size):
            raise ModelError(f"expected {cfg.image_size}x{cfg.image_size} image")
        patches = image_patches(image, cfg.encoder_patch_size)
        img = patches @ self.p["patch_proj.w"] + self.p["patch_proj.b"] + self.p["vis_pos"]
        x = np.concatenate([img, self._instr_encode(instr_ids)], axis=0).astype(np.float32)
        n = self.n_prefix
        for i in range(cfg.layers):
            prefix = f"dec.block{i}"
            ln1 = self._ln(x, f"{prefix}.ln1")
            q, k, v = self._qkv(ln1, prefix)
            self.k_cache[i][:, :n] = k
            self.v_cache[i][:, :n] = v
            att = self._softmax((q @ k.swapaxes(-1, -2)) / np.sqrt(np.float32(cfg.head_dim)))
            ctx = (att @ v).transpose(1, 0, 2).reshape(n, cfg.embed_dim)
            x = x + ctx @ self.p[f"{prefix}.attn.out.w"] + self.p[f"{prefix}.attn.out.b"]
            x = x + self._ffn(self._ln(x, f"{prefix}.ln2"), prefix)

    def step(self, token: int) -> np.ndarray:
        """Feed one decoder-input token; return logits over the vocabulary."""
        cfg = self.cfg
        if self.t_out >= cfg.max_output_len:
            raise ModelError(f"output length budget {cfg.max_output_len} exhausted")
        pos = self.t_out
        x = (self.p["tok_emb"][token] + self.p["out_pos"][pos]).reshape(1, -1)
        total = self.n_prefix + pos + 1
        for i in range(cfg.layers):
            prefix = f"dec.block{i}"
            ln1 = self._ln(x, f"{prefix}.ln1")
            q, k, v = self._qkv(ln1, prefix)  # (h, 1, dh)
            self.k_cache[i][:, total - 1 : total] = k
            self.v_cache[i][:, total - 1 : total] = v
            keys = self.k_cache[i][:, :total]
            vals = self.v_cache[i][:, :total]
            att = self._softmax((q @ keys.swapaxes(-1, -2)) / np.sqrt(np.float32(cfg.head_dim)))
            ctx = (att @ vals).transpose(1, 0, 2).reshape(1, cfg.embed_dim)
            x = x + ctx @ self.p[f"{prefix}.attn.out.w"] + self.p[f"{prefix}.attn.out.b"]
            x = x + self._ffn(self._ln(x, f"{prefix}.ln2"), prefix)
        self.t_out += 1
        h = self._ln(x, "ln_f")
        return (h @ self.p["tok_emb"].T)[0]

    def fork(self) -> "CachedDecoder":
        """Cheap copy sharing parameters but with independent caches/position."""
        clone = object.__new__(CachedDecoder)
        clone.cfg = self.cfg
        clone.p = self.p
        clone.n_prefix = self.n_prefix
        clone.t_out = self.t_out
        clone.k_cache = [k.copy() for k in self.k_cache]
        clone.v_cache = [v.copy() for v in self.v_cache]
        return clone


_GELU_C = np.float32(0.7978845608028654)
_GELU_A = np.float32(0.044715)


def clone_config_with_layout(config: ModelConfig, layout: VocabLayout) -> ModelConfig:
    return replace(config, layout=layout)
