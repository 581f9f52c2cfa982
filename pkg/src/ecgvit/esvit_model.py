"""Vision transformer with an optional squeeze-excitation global-embedding
path (ES-ViT).

The plain encoder is the standard pre-norm ViT: patch projection, class
token, positional embeddings, per-head softmax attention, MLP blocks,
both wrapped in residuals. The ES variant adds a small conv stack that
pools the whole image into one hidden-size vector, recalibrates it with
an SE gate, and injects it into every encoder layer. Injection is
token-axis by default (the vector rides along as one extra token and is
dropped after the layer); a channel-axis variant concatenates it to
every token and projects back to hidden size through a block-structured
(2h, h) matrix stored as two h-by-h halves, initialized to identity and
zero so fusion starts as a no-op.

The layer output keeps the standard residual and adds the global
vector on top: Y = MLP(A') + A' + E'. A strict mode replacing the A'
residual with E' alone is selectable; it breaks the identity path and
with it the fusion-off equivalence, so it is off by default.

With fusion_enabled=False the forward pass runs exactly the plain-ViT
op sequence, which makes the ablation bit-identical, not just close.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import tensor_autograd as ta

__all__ = [
    "ModelConfig", "EsVitModel", "VIT_PRESETS", "preset_config",
    "image_to_patches", "patch_embed", "mhsa",
    "encoder_layer_plain", "encoder_layer_fused",
    "conv_embed", "se_recalibrate", "fuse_tokens", "forward",
    "count_parameters", "count_parameters_config",
]

CONV_STAGE_CHANNELS = (32, 64)      # third stage always lands on hidden_size
NORM_PLACEMENT = "pre"

# layer geometry per named configuration: layers, hidden, mlp, heads, patch
VIT_PRESETS = {
    "B/16": (12, 768, 3072, 12, 16),
    "B/32": (12, 768, 3072, 12, 32),
    "L/16": (24, 1024, 4096, 16, 16),
    "L/32": (24, 1024, 4096, 16, 32),
}


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 12
    hidden_size: int = 768
    mlp_size: int = 3072
    num_heads: int = 12
    patch_size: int = 16
    image_hw: int = 224
    num_classes: int = 1000
    fusion_enabled: bool = True
    se_reduction: int = 4
    fusion_variant: str = "token"        # "token" | "channel"
    residual_mode: str = "standard"      # "standard" | "strict"
    conv_activation: str = "gelu"        # "gelu" | "linear" (test hook)

    def __post_init__(self):
        if self.hidden_size % self.num_heads:
            raise ValueError(f"ModelConfig: hidden_size {self.hidden_size} not "
                             f"divisible by num_heads {self.num_heads}")
        if self.image_hw % self.patch_size:
            raise ValueError(f"ModelConfig: image_hw {self.image_hw} not "
                             f"divisible by patch_size {self.patch_size}")
        if min(self.num_layers, self.mlp_size, self.num_classes,
               self.se_reduction) < 1:
            raise ValueError("ModelConfig: sizes must be positive")
        if self.fusion_variant not in ("token", "channel"):
            raise ValueError(f"ModelConfig: unknown fusion_variant "
                             f"'{self.fusion_variant}'")
        if self.residual_mode not in ("standard", "strict"):
            raise ValueError(f"ModelConfig: unknown residual_mode "
                             f"'{self.residual_mode}'")
        if self.conv_activation not in ("gelu", "linear"):
            raise ValueError(f"ModelConfig: unknown conv_activation "
                             f"'{self.conv_activation}'")

    @property
    def num_patches(self):
        return (self.image_hw // self.patch_size) ** 2

    @property
    def head_dim(self):
        return self.hidden_size // self.num_heads

    @property
    def se_bottleneck(self):
        return max(self.hidden_size // self.se_reduction, 1)


def preset_config(name: str, image_hw: int = 224, num_classes: int = 1000,
                  **overrides) -> ModelConfig:
    """ModelConfig for a named geometry ("B/16", "B/32", "L/16", "L/32")."""
    if name not in VIT_PRESETS:
        raise ValueError(f"unknown preset '{name}', have {sorted(VIT_PRESETS)}")
    layers, hidden, mlp, heads, patch = VIT_PRESETS[name]
    return ModelConfig(num_layers=layers, hidden_size=hidden, mlp_size=mlp,
                       num_heads=heads, patch_size=patch, image_hw=image_hw,
                       num_classes=num_classes, **overrides)


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------

class EsVitModel:
    """Parameter store plus config; all math lives in the ops below."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float64,
                 init: str = "normal"):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, ta.Tensor] = {}
        rng = np.random.default_rng(seed)
        self._build(rng, init)

    # -- initialization -----------------------------------------------------

    def _add(self, name, array):
        self.params[name] = ta.parameter(np.asarray(array), dtype=self.dtype)

    def _trunc_normal(self, rng, shape, std=0.02, init="normal"):
        if init == "zeros":
            return np.zeros(shape)
        x = rng.standard_normal(shape) * std
        # resample the tail beyond 2 std until none is left
        bad = np.abs(x) > 2 * std
        while np.any(bad):
            x[bad] = rng.standard_normal(int(bad.sum())) * std
            bad = np.abs(x) > 2 * std
        return x

    def _build(self, rng, init):
        cfg = self.cfg
        h, m = cfg.hidden_size, cfg.mlp_size
        tn = lambda shape: self._trunc_normal(rng, shape, init=init)

        self._add("patch_embed.weight", tn((cfg.patch_size ** 2 * 3, h)))
        self._add("patch_embed.bias", np.zeros(h))
        self._add("cls_token", tn((1, h)))
        self._add("pos_embed", tn((cfg.num_patches + 1, h)))
        for i in range(cfg.num_layers):
            p = f"layers.{i}."
            self._add(p + "ln1.gain", np.ones(h))
            self._add(p + "ln1.bias", np.zeros(h))
            for w in ("wq", "wk", "wv", "wp"):
                self._add(p + f"attn.{w}", tn((h, h)))
                self._add(p + f"attn.{w}_bias", np.zeros(h))
            self._add(p + "ln2.gain", np.ones(h))
            self._add(p + "ln2.bias", np.zeros(h))
            self._add(p + "mlp.w1", tn((h, m)))
            self._add(p + "mlp.b1", np.zeros(m))
            self._add(p + "mlp.w2", tn((m, h)))
            self._add(p + "mlp.b2", np.zeros(h))
        self._add("final_norm.gain", np.ones(h))
        self._add("final_norm.bias", np.zeros(h))
        self._add("head.weight", tn((h, cfg.num_classes)))
        self._add("head.bias", np.zeros(cfg.num_classes))

        if cfg.fusion_enabled:
            c1, c2 = CONV_STAGE_CHANNELS
            self._add("conv_embed.stage1.kernel", tn((3, 3, 3, c1)))
            self._add("conv_embed.stage1.bias", np.zeros(c1))
            self._add("conv_embed.stage2.kernel", tn((3, 3, c1, c2)))
            self._add("conv_embed.stage2.bias", np.zeros(c2))
            self._add("conv_embed.stage3.kernel", tn((3, 3, c2, h)))
            self._add("conv_embed.stage3.bias", np.zeros(h))
            b = cfg.se_bottleneck
            self._add("se.reduce.weight", tn((h, b)))
            self._add("se.reduce.bias", np.zeros(b))
            # gate path final layer starts at zero: initial gate is flat 0.5
            self._add("se.expand.weight", np.zeros((b, h)))
            self._add("se.expand.bias", np.zeros(h))
            if cfg.fusion_variant == "channel":
                # (2h, h) concat projection stored as two blocks; identity
                # over tokens and zero over the embedding make initial
                # fusion a no-op
                self._add("fuse.w_tokens", np.eye(h))
                self._add("fuse.w_embed", np.zeros((h, h)))

    # -- bookkeeping ----------------------------------------------------

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    def ablated(self):
        """View of this model with fusion switched off.

        Shares the parameter tensors, so it answers "what do the same
        weights predict without the injection path".
        """
        clone = object.__new__(EsVitModel)
        clone.cfg = replace(self.cfg, fusion_enabled=False)
        clone.dtype = self.dtype
        clone.params = self.params
        return clone

    def save(self, path):
        card = self.model_card()
        ta.save_checkpoint(self.params, path, extra=card)

    @classmethod
    def load(cls, path):
        params, extra = ta.load_checkpoint(path)
        if not extra or "config" not in extra:
            raise ValueError(f"checkpoint {path}: no model config recorded")
        cfg = ModelConfig(**extra["config"])
        model = cls(cfg, init="zeros")
        if set(params) != set(model.params):
            missing = set(model.params) ^ set(params)
            raise ValueError(f"checkpoint {path}: parameter set mismatch "
                             f"({sorted(missing)[:4]} ...)")
        for name, t in params.items():
            if t.data.shape != model.params[name].data.shape:
                raise ValueError(f"checkpoint {path}: shape mismatch for "
                                 f"'{name}'")
            model.params[name] = t
        model.dtype = next(iter(params.values())).data.dtype
        return model

    def model_card(self) -> dict:
        total, breakdown = count_parameters(self)
        return {
            "config": asdict(self.cfg),
            "norm_placement": NORM_PLACEMENT,
            "fusion": {
                "enabled": self.cfg.fusion_enabled,
                "variant": self.cfg.fusion_variant,
                "residual_mode": self.cfg.residual_mode,
            },
            "parameters": {"total": total, "breakdown": breakdown},
        }

    def write_model_card(self, path):
        with open(path, "w") as fh:
            json.dump(self.model_card(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def image_to_patches(img: ta.Tensor, patch_size: int) -> ta.Tensor:
    """(H, W, C) image to (num_patches, patch_size^2 * C) rows.

    Non-overlapping tiles in raster order, each flattened row-major.
    """
    hw = img.shape[0]
    c = img.shape[2]
    g = hw // patch_size
    x = ta.reshape(img, (g, patch_size, g, patch_size, c))
    x = ta.transpose(x, (0, 2, 1, 3, 4))
    return ta.reshape(x, (g * g, patch_size * patch_size * c))


def patch_embed(img: ta.Tensor, cfg: ModelConfig, params) -> ta.Tensor:
    """Tokens = [class; projected patches] + positional embeddings."""
    patches = image_to_patches(img, cfg.patch_size)
    projected = ta.add(ta.matmul(patches, params["patch_embed.weight"]),
                       params["patch_embed.bias"])
    tokens = ta.concat([params["cls_token"], projected], axis=0)
    return ta.add(tokens, params["pos_embed"])


def mhsa(tokens: ta.Tensor, params, prefix: str, num_heads: int,
         attention_probe: list | None = None) -> ta.Tensor:
    """Multi-head self attention: per head, Softmax(Q K^T / sqrt(d)) V.

    attention_probe, if given, collects each head's row-stochastic
    attention matrix (forward values only).
    """
    t, h = tokens.shape
    if h % num_heads:
        raise ValueError(f"mhsa: hidden size {h} not divisible by "
                         f"{num_heads} heads")
    d = h // num_heads
    q = ta.add(ta.matmul(tokens, params[prefix + "attn.wq"]),
               params[prefix + "attn.wq_bias"])
    k = ta.add(ta.matmul(tokens, params[prefix + "attn.wk"]),
               params[prefix + "attn.wk_bias"])
    v = ta.add(ta.matmul(tokens, params[prefix + "attn.wv"]),
               params[prefix + "attn.wv_bias"])
    heads = []
    for i in range(num_heads):
        qi = ta.narrow(q, 1, i * d, d)
        ki = ta.narrow(k, 1, i * d, d)
        vi = ta.narrow(v, 1, i * d, d)
        scores = ta.scale(ta.matmul(qi, ta.transpose(ki)), 1.0 / np.sqrt(d))
        attn = ta.softmax_rows(scores)
        if attention_probe is not None:
            attention_probe.append(attn.data.copy())
        heads.append(ta.matmul(attn, vi))
    return ta.concat(heads, axis=1)


def _mlp(x, params, prefix):
    hidden = ta.gelu(ta.add(ta.matmul(x, params[prefix + "mlp.w1"]),
                            params[prefix + "mlp.b1"]))
    return ta.add(ta.matmul(hidden, params[prefix + "mlp.w2"]),
                  params[prefix + "mlp.b2"])


def encoder_layer_plain(tokens: ta.Tensor, params, prefix: str,
                        num_heads: int,
                        attention_probe: list | None = None) -> ta.Tensor:
    """Pre-norm block: A' = proj(MHSA(LN(T))) + T; Y = MLP(LN(A')) + A'."""
    normed = ta.layer_norm(tokens, params[prefix + "ln1.gain"],
                           params[prefix + "ln1.bias"])
    att = mhsa(normed, params, prefix, num_heads, attention_probe)
    projected = ta.add(ta.matmul(att, params[prefix + "attn.wp"]),
                       params[prefix + "attn.wp_bias"])
    a_res = ta.add(projected, tokens)
    normed2 = ta.layer_norm(a_res, params[prefix + "ln2.gain"],
                            params[prefix + "ln2.bias"])
    return ta.add(_mlp(normed2, params, prefix), a_res)


def conv_embed(img: ta.Tensor, params, activation: str = "gelu") -> ta.Tensor:
    """Three stride-2 conv stages pooled to a (1, hidden_size) vector."""
    act = ta.gelu if activation == "gelu" else (lambda t: t)
    x = img
    for stage in ("stage1", "stage2", "stage3"):
        x = ta.conv2d(x, params[f"conv_embed.{stage}.kernel"],
                      stride=2, padding=1)
        x = act(ta.add(x, params[f"conv_embed.{stage}.bias"]))
    pooled = ta.mean_pool(x, axes=(0, 1))
    return ta.reshape(pooled, (1, pooled.shape[0]))


def se_recalibrate(e_raw: ta.Tensor, params) -> ta.Tensor:
    """Squeeze-excitation gate over the embedding channels.

    squeeze averages away the token axis; the two-projection bottleneck
    with a sigmoid produces per-channel gates multiplying e_raw.
    """
    squeezed = ta.mean_pool(e_raw, axes=(0,))
    squeezed = ta.reshape(squeezed, (1, e_raw.shape[1]))
    z = ta.relu(ta.add(ta.matmul(squeezed, params["se.reduce.weight"]),
                       params["se.reduce.bias"]))
    gate = ta.sigmoid(ta.add(ta.matmul(z, params["se.expand.weight"]),
                             params["se.expand.bias"]))
    return ta.mul(gate, e_raw)


def fuse_tokens(tokens: ta.Tensor, e_prime: ta.Tensor | None,
                cfg: ModelConfig, params=None) -> ta.Tensor:
    """Inject the recalibrated global embedding into the token stack.

    Token variant appends e_prime as one extra row (dropped again after
    the layer). Channel variant concatenates it to every token along
    the feature axis and projects back to hidden size; the projection
    is the block matrix [w_tokens; w_embed].
    """
    if not cfg.fusion_enabled or e_prime is None:
        return tokens
    if cfg.fusion_variant == "token":
        return ta.concat([tokens, e_prime], axis=0)
    mixed = ta.matmul(tokens, params["fuse.w_tokens"])
    shifted = ta.reshape(ta.matmul(e_prime, params["fuse.w_embed"]),
                         (cfg.hidden_size,))
    return ta.add(mixed, shifted)


def encoder_layer_fused(tokens: ta.Tensor, e_prime: ta.Tensor | None,
                        params, prefix: str, cfg: ModelConfig,
                        attention_probe: list | None = None) -> ta.Tensor:
    """Encoder layer with global-embedding injection.

    Fusion off falls through to the plain layer (same op sequence, so
    ablation comparisons are bit-identical). Otherwise the fused token
    stack runs the plain block and the output adds e_prime to every
    token; strict mode drops the A' residual in favor of e_prime alone.
    """
    if not cfg.fusion_enabled or e_prime is None:
        return encoder_layer_plain(tokens, params, prefix, cfg.num_heads,
                                   attention_probe)
    n_tokens = tokens.shape[0]
    t_in = fuse_tokens(tokens, e_prime, cfg, params)
    normed = ta.layer_norm(t_in, params[prefix + "ln1.gain"],
                           params[prefix + "ln1.bias"])
    att = mhsa(normed, params, prefix, cfg.num_heads, attention_probe)
    projected = ta.add(ta.matmul(att, params[prefix + "attn.wp"]),
                       params[prefix + "attn.wp_bias"])
    a_res = ta.add(projected, t_in)
    normed2 = ta.layer_norm(a_res, params[prefix + "ln2.gain"],
                            params[prefix + "ln2.bias"])
    mlp_out = _mlp(normed2, params, prefix)
    e_row = ta.reshape(e_prime, (cfg.hidden_size,))
    if cfg.residual_mode == "standard":
        out = ta.add(ta.add(mlp_out, a_res), e_row)
    else:
        out = ta.add(mlp_out, e_row)
    if cfg.fusion_variant == "token":
        out = ta.narrow(out, 0, 0, n_tokens)
    return out


def forward(img, model: EsVitModel,
            attention_probe: list | None = None) -> ta.Tensor:
    """Image to class logits, shape (num_classes,).

    img may be an (H, W, 3) array or anything with a .pixels attribute.
    The global embedding is computed once and reused by every layer.
    """
    pixels = getattr(img, "pixels", img)
    pixels = np.asarray(pixels)
    cfg = model.cfg
    if pixels.shape != (cfg.image_hw, cfg.image_hw, 3):
        raise ValueError(f"forward: image shape {pixels.shape} does not match "
                         f"config ({cfg.image_hw}, {cfg.image_hw}, 3)")
    x = ta.constant(pixels.astype(model.dtype))
    tokens = patch_embed(x, cfg, model.params)
    e_prime = None
    if cfg.fusion_enabled:
        e_raw = conv_embed(x, model.params, cfg.conv_activation)
        e_prime = se_recalibrate(e_raw, model.params)
    for i in range(cfg.num_layers):
        tokens = encoder_layer_fused(tokens, e_prime, model.params,
                                     f"layers.{i}.", cfg, attention_probe)
    tokens = ta.layer_norm(tokens, model.params["final_norm.gain"],
                           model.params["final_norm.bias"])
    cls = ta.narrow(tokens, 0, 0, 1)
    logits = ta.add(ta.matmul(cls, model.params["head.weight"]),
                    model.params["head.bias"])
    return ta.reshape(logits, (cfg.num_classes,))


# ---------------------------------------------------------------------------
# parameter accounting
# ---------------------------------------------------------------------------

def count_parameters(model: EsVitModel):
    """Total trainable scalars and a per-component breakdown, by
    enumerating what is actually registered."""
    breakdown: dict[str, int] = {}
    for name, t in model.params.items():
        component = name.split(".", 1)[0]
        breakdown[component] = breakdown.get(component, 0) + int(t.data.size)
    return sum(breakdown.values()), breakdown


def count_parameters_config(cfg: ModelConfig):
    """Closed-form accounting from the config alone (no construction)."""
    h, m = cfg.hidden_size, cfg.mlp_size
    p2c = cfg.patch_size ** 2 * 3
    breakdown = {
        "patch_embed": p2c * h + h,
        "cls_token": h,
        "pos_embed": (cfg.num_patches + 1) * h,
        "layers": cfg.num_layers * (
            2 * h                      # ln1
            + 4 * (h * h + h)          # wq, wk, wv, wp with biases
            + 2 * h                    # ln2
            + (h * m + m)              # mlp in
            + (m * h + h)              # mlp out
        ),
        "final_norm": 2 * h,
        "head": h * cfg.num_classes + cfg.num_classes,
    }
    if cfg.fusion_enabled:
        c1, c2 = CONV_STAGE_CHANNELS
        breakdown["conv_embed"] = (9 * 3 * c1 + c1) + (9 * c1 * c2 + c2) \
            + (9 * c2 * h + h)
        b = cfg.se_bottleneck
        breakdown["se"] = (h * b + b) + (b * h + h)
        if cfg.fusion_variant == "channel":
            breakdown["fuse"] = 2 * h * h
    return sum(breakdown.values()), breakdown
