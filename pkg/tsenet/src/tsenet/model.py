"""Encoder-bottleneck-decoder extraction network.

A mixture encoder turns the multichannel RI spectrogram into a frame
sequence of embeddings, one enrollment branch per variant produces a
single speaker vector, the bottleneck multiplies that vector into every
frame, and the decoder reconstructs the RI spectrogram of the desired
speaker at the reference microphone. The mixture encoder and decoder are
identical across variants; only the enrollment branch differs.
"""

from dataclasses import dataclass, asdict, field

import torch
from torch import nn

from .signal import N_BINS

VARIANTS = ("rtf", "doa", "spectral")


@dataclass(frozen=True)
class NetConfig:
    n_mics: int = 4
    n_bins: int = N_BINS
    conv_channels: tuple = (16, 32, 32, 64)
    kernel: int = 3
    embed_dim: int = 64
    attention_heads: int = 4
    decoder_attention_layers: int = 6
    doa_rows: int = 181
    mask_output: bool = False
    reference_skip: bool = True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


class SelfAttention(nn.Module):
    """One pre-norm residual multi-head self-attention layer.

    The residual path stays unnormalized so stacks of these preserve
    absolute feature scale; normalizing the output instead would pin
    every frame vector to unit variance and erase the frame-to-frame
    energy contour the decoder must reproduce."""

    def __init__(self, dim, heads):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        y = self.norm(x)
        att, _ = self.attn(y, y, y, need_weights=False)
        return x + att


def _conv_stack(in_channels, widths, kernel):
    pad = kernel // 2
    layers = []
    prev = in_channels
    for w in widths:
        layers.append(nn.Sequential(
            nn.Conv2d(prev, w, kernel, padding=pad),
            nn.BatchNorm2d(w),
            nn.ReLU(),
        ))
        prev = w
    return nn.ModuleList(layers)


class FrameEncoder(nn.Module):
    """Conv stack over [B, C_in, K, T], then channel-frequency merge, a
    linear reduction to the embedding dimension, and one self-attention
    over frames. Returns ([B, T, C], per-conv activations for skips)."""

    def __init__(self, in_channels, cfg):
        super().__init__()
        self.convs = _conv_stack(in_channels, cfg.conv_channels, cfg.kernel)
        merged = cfg.conv_channels[-1] * cfg.n_bins
        self.reduce = nn.Linear(merged, cfg.embed_dim)
        self.attention = SelfAttention(cfg.embed_dim, cfg.attention_heads)

    def forward(self, x):
        acts = []
        for conv in self.convs:
            x = conv(x)
            acts.append(x)
        b, c, k, t = x.shape
        frames = x.permute(0, 3, 1, 2).reshape(b, t, c * k)
        return self.attention(self.reduce(frames)), acts


class AveragedEncoder(nn.Module):
    """Frame encoder whose output is averaged across frames into one
    speaker vector (the RTF and spectral enrollment branches)."""

    def __init__(self, in_channels, cfg):
        super().__init__()
        self.encoder = FrameEncoder(in_channels, cfg)

    def forward(self, x):
        emb, _ = self.encoder(x)
        return emb.mean(dim=1)


class DoaEncoder(nn.Module):
    """Learned direction table: one row per integer degree, refined by a
    self-attention layer."""

    def __init__(self, cfg):
        super().__init__()
        self.table = nn.Embedding(cfg.doa_rows, cfg.embed_dim)
        self.attention = SelfAttention(cfg.embed_dim, cfg.attention_heads)

    def forward(self, doa_deg):
        rows = self.table(doa_deg.long().clamp(0, self.table.num_embeddings - 1))
        return self.attention(rows[:, None, :])[:, 0]


class Decoder(nn.Module):
    """Attention stack, dimension restore, transpose convolutions
    mirroring the encoder with additive skips, and a final attention over
    the flattened RI output."""

    def __init__(self, cfg):
        super().__init__()
        self.attention = nn.ModuleList(
            SelfAttention(cfg.embed_dim, cfg.attention_heads)
            for _ in range(cfg.decoder_attention_layers)
        )
        widths = cfg.conv_channels
        merged = widths[-1] * cfg.n_bins
        self.restore = nn.Linear(cfg.embed_dim, merged)
        pad = cfg.kernel // 2
        ups = []
        prev = widths[-1]
        for w in reversed(widths[:-1]):
            ups.append(nn.Sequential(
                nn.ConvTranspose2d(prev, w, cfg.kernel, padding=pad),
                nn.BatchNorm2d(w),
                nn.ReLU(),
            ))
            prev = w
        self.ups = nn.ModuleList(ups)
        self.out = nn.ConvTranspose2d(prev, 2, cfg.kernel, padding=pad)
        heads = 2 if (2 * cfg.n_bins) % cfg.attention_heads else cfg.attention_heads
        self.final_attention = SelfAttention(2 * cfg.n_bins, heads)
        self.n_bins = cfg.n_bins
        # The RI head starts at exactly zero so a reference skip begins as a
        # clean passthrough and the network learns a correction from there.
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)
        nn.init.zeros_(self.final_attention.attn.out_proj.weight)
        nn.init.zeros_(self.final_attention.attn.out_proj.bias)

    def forward(self, fused, skips):
        x = fused
        for layer in self.attention:
            x = layer(x)
        b, t, _ = x.shape
        x = self.restore(x).reshape(b, t, -1, self.n_bins).permute(0, 2, 3, 1)
        for up, skip in zip(self.ups, reversed(skips[:-1])):
            x = up(x) + skip
        x = self.out(x)
        flat = x.permute(0, 3, 1, 2).reshape(b, t, 2 * self.n_bins)
        flat = self.final_attention(flat)
        return flat.reshape(b, t, 2, self.n_bins).permute(0, 2, 3, 1)


class TseNet(nn.Module):
    """forward(mixture_ri [B, 2J, K, T], enrollment) -> [B, K, T, 2].

    The enrollment argument is variant-specific: RI RTF tensor
    [B, 2J, K, T'] for rtf, integer degrees [B] for doa, single-channel
    RI spectrogram [B, 2, K, T'] for spectral. With ``mask_output`` the
    decoder output acts as a complex mask on the reference-mic mixture
    instead of direct RI synthesis.
    """

    def __init__(self, variant, cfg=None):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}, pick from {VARIANTS}")
        cfg = cfg or NetConfig()
        self.variant = variant
        self.cfg = cfg
        in_channels = 2 * cfg.n_mics
        self.mixture_encoder = FrameEncoder(in_channels, cfg)
        if variant == "rtf":
            self.enrollment_encoder = AveragedEncoder(in_channels, cfg)
        elif variant == "spectral":
            self.enrollment_encoder = AveragedEncoder(2, cfg)
        else:
            self.enrollment_encoder = DoaEncoder(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, mixture_ri, enrollment):
        if mixture_ri.shape[1] != 2 * self.cfg.n_mics:
            raise ValueError(
                f"expected {2 * self.cfg.n_mics} RI channels, got {mixture_ri.shape[1]}"
            )
        emb, skips = self.mixture_encoder(mixture_ri)
        speaker = self.enrollment_encoder(enrollment)
        out = self.decoder(emb * speaker[:, None, :], skips)
        if self.cfg.mask_output:
            mix_re, mix_im = mixture_ri[:, 0], mixture_ri[:, 1]
            m_re, m_im = out[:, 0], out[:, 1]
            if self.cfg.reference_skip:
                # identity-mask offset: the zero-initialized head then starts
                # as a passthrough, mirroring the direct-synthesis residual
                m_re = m_re + 1.0
            out = torch.stack(
                (m_re * mix_re - m_im * mix_im, m_re * mix_im + m_im * mix_re), dim=1
            )
        elif self.cfg.reference_skip:
            # Direct synthesis starts from the reference-channel mixture and
            # learns the correction toward the desired speaker.
            out = out + mixture_ri[:, :2]
        return out.permute(0, 2, 3, 1)
