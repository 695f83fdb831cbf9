"""Three-scale conditional discriminator.

Three structurally identical patch discriminators score the (hazy,
candidate) pair at full, half, and quarter resolution; the smaller scales
come from 2x average pooling. Each sub-network is four stride-2 4x4 convs
(64/128/256/512 channels) followed by a 1x1 conv and a sigmoid, producing
a score map in [0, 1] rather than a single scalar.

The hidden convs carry no normalization: instance-style statistics couple
all spatial positions, which would break the patch locality of the score
maps (one input patch influencing every score). LeakyReLU(0.2) throughout.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layers import architecture_fingerprint, init_conv_parameters

# (name, in_ch, out_ch, kernel, stride, pad)
DISCRIMINATOR_TABLE = [
    ("d1", 6, 64, 4, 2, 1),
    ("d2", 64, 128, 4, 2, 1),
    ("d3", 128, 256, 4, 2, 1),
    ("d4", 256, 512, 4, 2, 1),
    ("d5", 512, 1, 1, 1, 0),
]

NUM_SCALES = 3
DEFAULT_SEED = 1


def pyramid(image):
    """[full, half, quarter] resolution copies via 2x average pooling."""
    if image.dim() != 4:
        raise ValueError(f"expected N x C x H x W input, got {tuple(image.shape)}")
    if image.shape[2] % 4 or image.shape[3] % 4:
        raise ValueError(f"H and W must be divisible by 4, got {tuple(image.shape[2:])}")
    half = F.avg_pool2d(image, 2)
    return [image, half, F.avg_pool2d(half, 2)]


class PatchDiscriminator(nn.Module):
    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleList()
        for _, in_ch, out_ch, k, s, p in DISCRIMINATOR_TABLE:
            first_or_last = in_ch == 6 or out_ch == 1
            self.convs.append(nn.Conv2d(in_ch, out_ch, k, s, p, bias=first_or_last))

    def forward(self, x):
        for conv in self.convs[:-1]:
            x = F.leaky_relu(conv(x), 0.2)
        return torch.sigmoid(self.convs[-1](x))


class MultiScaleDiscriminator(nn.Module):
    def __init__(self, seed=DEFAULT_SEED):
        super().__init__()
        self.scales = nn.ModuleList([PatchDiscriminator() for _ in range(NUM_SCALES)])
        init_conv_parameters(self, seed)

    def layer_table(self, scale=0):
        rows = []
        for (name, *_), conv in zip(DISCRIMINATOR_TABLE, self.scales[scale].convs):
            rows.append((name, conv.in_channels, conv.out_channels,
                         conv.kernel_size[0], conv.stride[0], conv.padding[0]))
        return rows

    def fingerprint(self):
        rows = []
        for m in range(NUM_SCALES):
            rows += [(f"s{m}_{name}",) + tuple(rest) for name, *rest in self.layer_table(m)]
        return architecture_fingerprint("discriminator/v1", rows)

    def score(self, hazy, candidate):
        """Score maps for the (hazy, candidate) pair at the three scales."""
        if hazy.shape != candidate.shape:
            raise ValueError(
                f"shape mismatch: hazy {tuple(hazy.shape)} vs candidate {tuple(candidate.shape)}"
            )
        pyr_h = pyramid(hazy)
        pyr_c = pyramid(candidate)
        return [
            net(torch.cat([h, c], dim=1))
            for net, h, c in zip(self.scales, pyr_h, pyr_c)
        ]

    forward = score
