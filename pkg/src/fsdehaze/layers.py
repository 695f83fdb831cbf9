"""Shared building blocks for the generator and discriminator."""

import hashlib

import torch
import torch.nn as nn


class SpatialNorm(nn.Module):
    """Per-sample, per-channel normalization over spatial positions.

    Equivalent to affine-free instance normalization, but degrades to the
    identity on 1 x 1 maps, where normalizing a single element would zero
    it (torch's InstanceNorm2d refuses that case outright).
    """

    def __init__(self, eps=1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        if x.shape[-1] * x.shape[-2] == 1:
            return x
        mean = x.mean(dim=(-2, -1), keepdim=True)
        var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
        return (x - mean) / torch.sqrt(var + self.eps)

    def extra_repr(self):
        return f"eps={self.eps}"


def init_conv_parameters(module, seed, std=0.02):
    """Seeded N(0, std) init for every conv weight; biases to zero."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                noise = torch.randn(m.weight.shape, generator=g, dtype=torch.float32)
                m.weight.copy_(noise.to(m.weight.dtype) * std)
                if m.bias is not None:
                    m.bias.zero_()


def architecture_fingerprint(kind, rows):
    """Stable hash of a layer table: (name, in, out, kernel, stride, pad) rows."""
    text = kind + "".join(f"|{r[0]}:{r[1]}:{r[2]}:{r[3]}:{r[4]}:{r[5]}" for r in rows)
    return hashlib.sha256(text.encode()).hexdigest()
