"""Fixed feature extractors for the perceptual and style losses.

Two interchangeable implementations:

* RandomFeatureExtractor - a seeded, frozen CNN. Hermetic: tests and toy
  runs never download third-party weights.
* Vgg16Extractor - the VGG16 conv trunk; weights are loaded from a
  user-supplied file (a torchvision-style state dict).

Both expose named taps and an `extract(images)` method returning the
feature map at the selected tap. Parameters are frozen; gradients flow
only through the input.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def _freeze(module):
    for p in module.parameters():
        p.requires_grad_(False)
    return module


class RandomFeatureExtractor(nn.Module):
    """Frozen random-weight CNN with average-pooling downsampling.

    Taps: stage1 (full res), stage2 (1/2), stage3 (1/4), stage4 (1/8).
    The default tap sits after the third downsampling. Weights use a
    super-He gain so feature magnitudes grow with depth, mimicking the
    activation scale of the pretrained trunk this stands in for; the loss
    weights were tuned against that scale.
    """

    taps = ("stage1", "stage2", "stage3", "stage4")
    default_tap = "stage4"
    gain = 2.0

    def __init__(self, seed=77, tap=None):
        super().__init__()
        self.tap = tap or self.default_tap
        if self.tap not in self.taps:
            raise ValueError(f"unknown tap {self.tap!r}; available: {self.taps}")
        self.conv1a = nn.Conv2d(3, 32, 3, 1, 1)
        self.conv1b = nn.Conv2d(32, 32, 3, 1, 1)
        self.conv2 = nn.Conv2d(32, 64, 3, 1, 1)
        self.conv3 = nn.Conv2d(64, 96, 3, 1, 1)
        self.conv4 = nn.Conv2d(96, 128, 3, 1, 1)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in (self.conv1a, self.conv1b, self.conv2, self.conv3, self.conv4):
                fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
                std = self.gain * (2.0 / fan_in) ** 0.5
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) * std)
                conv.bias.zero_()
        _freeze(self)

    def forward(self, x):
        out = {}
        x = F.relu(self.conv1a(x))
        x = F.relu(self.conv1b(x))
        out["stage1"] = x
        x = F.relu(self.conv2(F.avg_pool2d(x, 2)))
        out["stage2"] = x
        x = F.relu(self.conv3(F.avg_pool2d(x, 2)))
        out["stage3"] = x
        x = F.relu(self.conv4(F.avg_pool2d(x, 2)))
        out["stage4"] = x
        return out

    def extract(self, images):
        return self.forward(images)[self.tap]


# (name, out_channels) per conv of the VGG16 trunk; "P" marks a max pool.
_VGG16_PLAN = [
    ("conv1_1", 64), ("conv1_2", 64), "P",
    ("conv2_1", 128), ("conv2_2", 128), "P",
    ("conv3_1", 256), ("conv3_2", 256), ("conv3_3", 256), "P",
    ("conv4_1", 512), ("conv4_2", 512), ("conv4_3", 512), "P",
    ("conv5_1", 512), ("conv5_2", 512), ("conv5_3", 512),
]

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class Vgg16Extractor(nn.Module):
    """VGG16 conv trunk with relu taps; expects weights from a file.

    Inputs in [0, 1] are normalized with ImageNet statistics before the
    first conv, matching how the trunk was trained.
    """

    taps = tuple("relu" + name[4:] for name, *_ in
                 (x for x in _VGG16_PLAN if isinstance(x, tuple)))
    default_tap = "relu4_3"

    def __init__(self, tap=None):
        super().__init__()
        self.tap = tap or self.default_tap
        if self.tap not in self.taps:
            raise ValueError(f"unknown tap {self.tap!r}; available: {self.taps}")
        self.convs = nn.ModuleDict()
        in_ch = 3
        for item in _VGG16_PLAN:
            if item == "P":
                continue
            name, out_ch = item
            self.convs[name] = nn.Conv2d(in_ch, out_ch, 3, 1, 1)
            in_ch = out_ch
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        self.register_buffer("mean", mean, persistent=False)
        self.register_buffer("std", std, persistent=False)
        _freeze(self)

    @classmethod
    def from_weights(cls, path, tap=None):
        net = cls(tap=tap)
        state = torch.load(path, map_location="cpu", weights_only=True)
        if hasattr(state, "state_dict"):
            state = state.state_dict()
        net.load_state_dict(cls._remap(state))
        _freeze(net)
        return net

    @staticmethod
    def _remap(state):
        """Accept either our own names or torchvision's features.N.* keys."""
        if any(k.startswith("convs.") for k in state):
            return {k: v for k, v in state.items() if k.startswith("convs.")}
        # torchvision vgg16: conv indices within the `features` Sequential
        indices = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28]
        names = [item[0] for item in _VGG16_PLAN if isinstance(item, tuple)]
        out = {}
        for idx, name in zip(indices, names):
            for suffix in ("weight", "bias"):
                key = f"features.{idx}.{suffix}"
                if key not in state:
                    raise KeyError(f"missing {key} in VGG16 weights file")
                out[f"convs.{name}.{suffix}"] = state[key]
        return out

    def forward(self, x):
        x = (x - self.mean) / self.std
        out = {}
        for item in _VGG16_PLAN:
            if item == "P":
                x = F.max_pool2d(x, 2)
                continue
            name, _ = item
            x = F.relu(self.convs[name](x))
            out["relu" + name[4:]] = x
        return out

    def extract(self, images):
        wanted = self.tap
        x = (images - self.mean) / self.std
        for item in _VGG16_PLAN:
            if item == "P":
                x = F.max_pool2d(x, 2)
                continue
            name, _ = item
            x = F.relu(self.convs[name](x))
            if "relu" + name[4:] == wanted:
                return x
        raise AssertionError(f"tap {wanted!r} not reached")


def build_extractor(kind="random", tap=None, seed=77, weights=None):
    """Factory used by the trainer config."""
    if kind == "random":
        return RandomFeatureExtractor(seed=seed, tap=tap)
    if kind == "vgg16":
        if weights is None:
            raise ValueError("vgg16 extractor requires a weights file")
        return Vgg16Extractor.from_weights(weights, tap=tap)
    raise ValueError(f"unknown extractor kind {kind!r}")
