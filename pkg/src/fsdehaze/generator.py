"""Encoder-decoder generator.

Encoder: 7x7 stem, two stride-2 4x4 convs, then eight 3x3 convs grouped as
four 2-conv residual blocks. Decoder mirrors it: four residual blocks,
then 5x5 convs at 128 and 64 channels with nearest-neighbor 2x upsampling
before each, and a 7x7 head to 3 channels with a sigmoid output.

Skip connections: the stem and the first downsampling output are
channel-concatenated to the symmetric decoder positions once upsampling
has matched their size; a 1x1 projection restores the channel count the
following conv expects. Hidden convs are normalized, so they carry no
bias (it would be cancelled exactly); only the output head keeps one.

encode() additionally returns every encoder layer output keyed enc1..enc11
(layers 4-11 being the residual-section convs, with block outputs at the
odd indices), which the feature-regularization loss taps.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import SpatialNorm, architecture_fingerprint, init_conv_parameters

# (name, in_ch, out_ch, kernel, stride, pad)
ENCODER_TABLE = [
    ("enc1", 3, 64, 7, 1, 3),
    ("enc2", 64, 128, 4, 2, 1),
    ("enc3", 128, 256, 4, 2, 1),
] + [(f"enc{i}", 256, 256, 3, 1, 1) for i in range(4, 12)]

DECODER_TABLE = [(f"dec{i}", 256, 256, 3, 1, 1) for i in range(1, 9)] + [
    ("dec9", 256, 128, 5, 1, 2),
    ("dec10", 128, 64, 5, 1, 2),
    ("dec11", 64, 3, 7, 1, 3),
]

# 1x1 skip-fusion projections (not part of the layer table above)
SKIP_PROJECTIONS = [
    ("skip9", 256 + 128, 256, 1, 1, 0),
    ("skip10", 128 + 64, 128, 1, 1, 0),
]

FEATURE_CHANNELS = 256
DEFAULT_SEED = 0


def _conv(in_ch, out_ch, kernel, stride, pad, bias):
    return nn.Conv2d(in_ch, out_ch, kernel, stride, pad, bias=bias)


class DehazeGenerator(nn.Module):
    def __init__(self, seed=DEFAULT_SEED):
        super().__init__()
        self.enc1 = _conv(3, 64, 7, 1, 3, bias=False)
        self.enc2 = _conv(64, 128, 4, 2, 1, bias=False)
        self.enc3 = _conv(128, 256, 4, 2, 1, bias=False)
        self.enc_res = nn.ModuleList(
            [_conv(256, 256, 3, 1, 1, bias=False) for _ in range(8)]
        )
        self.dec_res = nn.ModuleList(
            [_conv(256, 256, 3, 1, 1, bias=False) for _ in range(8)]
        )
        self.skip9 = _conv(256 + 128, 256, 1, 1, 0, bias=False)
        self.dec9 = _conv(256, 128, 5, 1, 2, bias=False)
        self.skip10 = _conv(128 + 64, 128, 1, 1, 0, bias=False)
        self.dec10 = _conv(128, 64, 5, 1, 2, bias=False)
        self.dec11 = _conv(64, 3, 7, 1, 3, bias=True)
        self.norm = SpatialNorm()
        init_conv_parameters(self, seed)

    # -- architecture metadata -------------------------------------------

    def layer_table(self):
        """Conv layout as (name, in, out, kernel, stride, pad) rows."""
        named = {name: self._layer(name) for name, *_ in ENCODER_TABLE + DECODER_TABLE}
        rows = []
        for name, *_ in ENCODER_TABLE + DECODER_TABLE:
            c = named[name]
            rows.append((name, c.in_channels, c.out_channels,
                         c.kernel_size[0], c.stride[0], c.padding[0]))
        return rows

    def _layer(self, name):
        if name.startswith("enc") and name not in ("enc1", "enc2", "enc3"):
            return self.enc_res[int(name[3:]) - 4]
        if name.startswith("dec") and int(name[3:]) <= 8:
            return self.dec_res[int(name[3:]) - 1]
        return getattr(self, name)

    def fingerprint(self):
        aux = [(n, i, o, k, s, p) for n, i, o, k, s, p in SKIP_PROJECTIONS]
        return architecture_fingerprint("generator/v1", self.layer_table() + aux)

    # -- forward passes ----------------------------------------------------

    def _check_input(self, x):
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {tuple(x.shape)}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ValueError(f"H and W must be divisible by 4, got {tuple(x.shape[2:])}")

    def _res_section(self, convs, x, taps=None, names=None):
        for b in range(4):
            y = F.relu(self.norm(convs[2 * b](x)))
            if taps is not None:
                taps[names[2 * b]] = y
            y = self.norm(convs[2 * b + 1](y))
            x = x + y
            if taps is not None:
                taps[names[2 * b + 1]] = x
        return x

    def encode(self, image):
        """Returns (final 256-channel feature map at 1/4 resolution, taps dict)."""
        self._check_input(image)
        taps = {}
        x = F.relu(self.norm(self.enc1(image)))
        taps["enc1"] = x
        x = F.relu(self.norm(self.enc2(x)))
        taps["enc2"] = x
        x = F.relu(self.norm(self.enc3(x)))
        taps["enc3"] = x
        names = [f"enc{i}" for i in range(4, 12)]
        x = self._res_section(self.enc_res, x, taps, names)
        return x, taps

    def decode(self, features, skips):
        """Reconstructs an image from encoder features plus enc1/enc2 skips."""
        if features.dim() != 4 or features.shape[1] != FEATURE_CHANNELS:
            raise ValueError(
                f"expected N x {FEATURE_CHANNELS} x h x w features, got {tuple(features.shape)}"
            )
        if "enc1" not in skips or "enc2" not in skips:
            raise ValueError("skips must provide the enc1 and enc2 encoder outputs")
        e1, e2 = skips["enc1"], skips["enc2"]
        n, _, h, w = features.shape
        if e2.shape != (n, 128, 2 * h, 2 * w) or e1.shape != (n, 64, 4 * h, 4 * w):
            raise ValueError(
                f"skip shapes {tuple(e1.shape)}, {tuple(e2.shape)} do not match "
                f"features {tuple(features.shape)}"
            )
        x = self._res_section(self.dec_res, features)
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.skip9(torch.cat([x, e2], dim=1))
        x = F.relu(self.norm(self.dec9(x)))
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.skip10(torch.cat([x, e1], dim=1))
        x = F.relu(self.norm(self.dec10(x)))
        return torch.sigmoid(self.dec11(x))

    def forward(self, hazy):
        """Full dehazing pass: decode(encode(hazy))."""
        features, taps = self.encode(hazy)
        return self.decode(features, taps)

    dehaze = forward
