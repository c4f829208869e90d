"""Forward-only toy network: patch tokens, alternating frame/global attention,
DPT-style multi-scale heads for disparity and Gaussian parameters, and a small
residual refinement model.

Weights come from a seeded generator and are never trained; the module exists
to validate shapes, normalization, and composition of the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussians import RawParamMap, raw_channel_count
from .geometry import ValidationError
from .sh import num_coeffs


@dataclass
class NetConfig:
    patch_size: int = 16
    channels: int = 64
    blocks: int = 2
    heads: int = 4
    sh_degree: int = 1
    max_cameras: int = 8
    srm_channels: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.channels % self.heads != 0:
            raise ValidationError("channels must be divisible by heads")


@dataclass
class MultiScaleFeatures:
    """Exactly 4 levels at 1/16, 1/8, 1/4, 1/2 of input resolution."""

    levels: list  # each F x h x w x c

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ValidationError("expected 4 feature levels")
        for a, b in zip(self.levels[:-1], self.levels[1:]):
            if b.shape[1] != 2 * a.shape[1] or b.shape[2] != 2 * a.shape[2]:
                raise ValidationError("levels must progress in strict 2x steps")


def softmax(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def softplus(x):
    return np.logaddexp(0.0, x)


def relu(x):
    return np.maximum(x, 0.0)


def conv1x1(x, w, b=None):
    """x: ... x Cin, w: Cin x Cout."""
    y = x @ w
    if b is not None:
        y = y + b
    return y


def conv3x3(x, w, b=None):
    """Same-padding 3x3 convolution; x: H x W x Cin, w: 3 x 3 x Cin x Cout."""
    h, wd, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    y = np.zeros((h, wd, w.shape[3]))
    for dy in range(3):
        for dx in range(3):
            y += xp[dy:dy + h, dx:dx + wd] @ w[dy, dx]
    if b is not None:
        y = y + b
    return y


def upsample2x(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def avgpool2x(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


class ToyNet:
    def __init__(self, cfg: NetConfig = None):
        self.cfg = cfg or NetConfig()
        self.weights = self._init_weights(self.cfg)

    @staticmethod
    def _init_weights(cfg: NetConfig) -> dict:
        rng = np.random.default_rng(cfg.seed)
        c = cfg.channels
        p = cfg.patch_size
        gain = 0.02

        def w(*shape):
            return rng.normal(scale=gain, size=shape)

        weights = {
            "embed_w": w(p * p * 3, c),
            "embed_b": np.zeros(c),
            "cam_tokens": w(cfg.max_cameras, c),
        }
        for i in range(cfg.blocks):
            for kind in ("global", "frame"):
                for m in ("q", "k", "v", "o"):
                    weights[f"block{i}_{kind}_{m}"] = w(c, c)
        # depth head: 4 fusion stages plus the disparity projection
        for k in range(4):
            weights[f"depth_stage{k}_w"] = w(3, 3, c, c)
            weights[f"depth_stage{k}_b"] = np.zeros(c)
        weights["depth_out_w"] = w(c, 1)
        weights["depth_out_b"] = np.zeros(1)
        # gaussian head: concatenated f_d injection + 1x1 projection per stage
        for k in range(4):
            weights[f"gs_inject{k}_w"] = w(2 * c, c)
            weights[f"gs_inject{k}_b"] = np.zeros(c)
            weights[f"gs_stage{k}_w"] = w(3, 3, c, c)
            weights[f"gs_stage{k}_b"] = np.zeros(c)
        n_raw = raw_channel_count(cfg.sh_degree)
        weights["gs_rot_w"] = w(c, 4)
        weights["gs_rot_b"] = np.zeros(4)
        weights["gs_opac_w"] = w(c, 1)
        weights["gs_opac_b"] = np.zeros(1)
        weights["gs_scale_w"] = w(c, 3)
        weights["gs_scale_b"] = np.zeros(3)
        weights["gs_sh_w"] = w(c, n_raw - 8)
        weights["gs_sh_b"] = np.zeros(n_raw - 8)
        # refinement encoder-decoder
        cs = cfg.srm_channels
        feat_ch = 8 * c + 3
        weights["srm_enc1_w"] = w(3, 3, feat_ch, cs)
        weights["srm_enc1_b"] = np.zeros(cs)
        weights["srm_enc2_w"] = w(3, 3, cs, cs)
        weights["srm_enc2_b"] = np.zeros(cs)
        weights["srm_dec_w"] = w(3, 3, 2 * cs, cs)
        weights["srm_dec_b"] = np.zeros(cs)
        weights["srm_out_w"] = w(cs, 3)
        weights["srm_out_b"] = np.zeros(3)
        return weights

    # ------------------------------------------------------------------ tokens

    def patchify(self, images: np.ndarray) -> np.ndarray:
        """F x H x W x 3 -> F x P x C tokens with one camera token prepended."""
        images = np.asarray(images, dtype=np.float64)
        f, h, w, _ = images.shape
        p = self.cfg.patch_size
        if h % p or w % p:
            raise ValidationError("patch size must divide image dimensions")
        gh, gw = h // p, w // p
        patches = images.reshape(f, gh, p, gw, p, 3).transpose(0, 1, 3, 2, 4, 5)
        flat = patches.reshape(f, gh * gw, p * p * 3)
        tokens = flat @ self.weights["embed_w"] + self.weights["embed_b"]
        cam = self.weights["cam_tokens"][np.arange(f) % self.cfg.max_cameras]
        return np.concatenate([cam[:, None, :], tokens], axis=1)

    def _attention(self, x, prefix, return_weights=False):
        """Scaled-dot-product self-attention with residual; x: T x C."""
        c = self.cfg.channels
        hd = c // self.cfg.heads
        q = (x @ self.weights[prefix + "_q"]).reshape(-1, self.cfg.heads, hd)
        k = (x @ self.weights[prefix + "_k"]).reshape(-1, self.cfg.heads, hd)
        v = (x @ self.weights[prefix + "_v"]).reshape(-1, self.cfg.heads, hd)
        logits = np.einsum("thd,shd->hts", q, k) / np.sqrt(hd)
        attn = softmax(logits, axis=-1)
        out = np.einsum("hts,shd->thd", attn, v).reshape(-1, c)
        y = x + out @ self.weights[prefix + "_o"]
        if return_weights:
            return y, attn
        return y

    def frame_attention(self, tokens, block=0, return_weights=False):
        """Attend within each frame's tokens independently."""
        outs, wts = [], []
        for fr in range(tokens.shape[0]):
            res = self._attention(tokens[fr], f"block{block}_frame", return_weights)
            if return_weights:
                outs.append(res[0])
                wts.append(res[1])
            else:
                outs.append(res)
        out = np.stack(outs)
        return (out, wts) if return_weights else out

    def global_attention(self, tokens, block=0, return_weights=False):
        """Attend over all frames' tokens jointly."""
        f, p, c = tokens.shape
        res = self._attention(tokens.reshape(f * p, c), f"block{block}_global",
                              return_weights)
        if return_weights:
            return res[0].reshape(f, p, c), res[1]
        return res.reshape(f, p, c)

    def encode(self, images) -> np.ndarray:
        """N repetitions of global-then-frame attention over patch tokens."""
        t = self.patchify(images)
        for i in range(self.cfg.blocks):
            t = self.global_attention(t, block=i)
            t = self.frame_attention(t, block=i)
        return t

    # ------------------------------------------------------------------- heads

    def _token_grid(self, tokens, image_hw):
        h, w = image_hw
        p = self.cfg.patch_size
        gh, gw = h // p, w // p
        return tokens[:, 1:, :].reshape(tokens.shape[0], gh, gw, self.cfg.channels)

    def dpt_depth_head(self, tokens, image_hw):
        """Tokens -> (disparity F x H x W, 4-level MultiScaleFeatures)."""
        h, w = image_hw
        x = self._token_grid(tokens, image_hw)
        levels = []
        frames_disp = []
        for fr in range(x.shape[0]):
            y = x[fr]
            feats = []
            for k in range(4):
                y = relu(conv3x3(y, self.weights[f"depth_stage{k}_w"],
                                 self.weights[f"depth_stage{k}_b"]))
                feats.append(y)
                y = upsample2x(y)
            disp = softplus(
                conv1x1(y, self.weights["depth_out_w"], self.weights["depth_out_b"])
            )[..., 0]
            frames_disp.append(disp)
            levels.append(feats)
        f_d = MultiScaleFeatures(
            [np.stack([levels[fr][k] for fr in range(x.shape[0])]) for k in range(4)]
        )
        return np.stack(frames_disp), f_d

    def dpt_gs_head(self, f_d: MultiScaleFeatures, tokens, image_hw):
        """Mirrors the depth head with per-stage geometric feature injection."""
        x = self._token_grid(tokens, image_hw)
        if f_d.levels[0].shape[:3] != x.shape[:3]:
            raise ValidationError("feature levels do not match the token grid")
        raws, levels = [], []
        for fr in range(x.shape[0]):
            y = x[fr]
            feats = []
            for k in range(4):
                y = np.concatenate([y, f_d.levels[k][fr]], axis=-1)
                y = conv1x1(y, self.weights[f"gs_inject{k}_w"],
                            self.weights[f"gs_inject{k}_b"])
                y = relu(conv3x3(y, self.weights[f"gs_stage{k}_w"],
                                 self.weights[f"gs_stage{k}_b"]))
                feats.append(y)
                y = upsample2x(y)
            raw = np.concatenate(
                [
                    conv1x1(y, self.weights["gs_rot_w"], self.weights["gs_rot_b"]),
                    conv1x1(y, self.weights["gs_opac_w"], self.weights["gs_opac_b"]),
                    conv1x1(y, self.weights["gs_scale_w"], self.weights["gs_scale_b"]),
                    conv1x1(y, self.weights["gs_sh_w"], self.weights["gs_sh_b"]),
                ],
                axis=-1,
            )
            raws.append(RawParamMap(raw, self.cfg.sh_degree))
            levels.append(feats)
        f_gs = MultiScaleFeatures(
            [np.stack([levels[fr][k] for fr in range(x.shape[0])]) for k in range(4)]
        )
        return raws, f_gs

    def srm_refine(self, rendered, f_d: MultiScaleFeatures, f_gs: MultiScaleFeatures,
                   frame: int = 0) -> np.ndarray:
        """Residual refinement: clamp(rendered + E(rendered, f_d (+) f_gs))."""
        rendered = np.asarray(rendered, dtype=np.float64)
        h, w, _ = rendered.shape
        feats = [rendered]
        for ms in (f_d, f_gs):
            for lvl in ms.levels:
                y = lvl[frame]
                while y.shape[0] < h:
                    y = upsample2x(y)
                feats.append(y)
        x = np.concatenate(feats, axis=-1)
        e1 = relu(conv3x3(x, self.weights["srm_enc1_w"], self.weights["srm_enc1_b"]))
        e2 = relu(conv3x3(avgpool2x(e1), self.weights["srm_enc2_w"],
                          self.weights["srm_enc2_b"]))
        d = relu(conv3x3(np.concatenate([upsample2x(e2), e1], axis=-1),
                         self.weights["srm_dec_w"], self.weights["srm_dec_b"]))
        residual = conv1x1(d, self.weights["srm_out_w"], self.weights["srm_out_b"])
        return np.clip(rendered + residual, 0.0, 1.0)

    # --------------------------------------------------------------------- io

    def save_checkpoint(self, path):
        np.savez(path, **self.weights)

    def load_checkpoint(self, path):
        data = np.load(path)
        for name, arr in self.weights.items():
            if name not in data.files:
                raise ValidationError(f"checkpoint missing array {name!r}")
            if data[name].shape != arr.shape:
                raise ValidationError(f"checkpoint shape mismatch for {name!r}")
        self.weights = {name: data[name] for name in self.weights}
