"""Checkpoint-driven inference on numpy images, with padding and tiling.

The generator needs H and W divisible by 4; odd sizes are reflection
padded and the output cropped back. Large images can be processed in
overlapping tiles blended with a linear feather to hide seams.
"""

import numpy as np
import torch

from . import imgio
from .checkpoint import load_generator
from .errors import ConfigError
from .generator import DehazeGenerator

DEFAULT_OVERLAP = 32


def generator_from_checkpoint(path, device="cpu"):
    try:
        dev = torch.device(device)
    except RuntimeError as exc:
        raise ConfigError(f"bad device {device!r}: {exc}") from exc
    net = DehazeGenerator()
    load_generator(path, net)
    net.to(dev)
    net.eval()
    return net


def _pad_to_multiple(img, multiple=4):
    h, w = img.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img, (h, w)
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
    return padded, (h, w)


def dehaze_array(net, img):
    """Run the generator on one H x W x 3 image in [0, 1]."""
    padded, (h, w) = _pad_to_multiple(np.asarray(img, dtype=np.float32))
    with torch.no_grad():
        out = net(imgio.to_tensor(padded).to(next(net.parameters()).device))
    return imgio.from_tensor(out)[:h, :w]


def _feather(size, lo_ramp, hi_ramp, overlap):
    w = np.ones(size)
    ramp = (np.arange(overlap) + 1.0) / (overlap + 1.0)
    if lo_ramp:
        w[:overlap] = np.minimum(w[:overlap], ramp)
    if hi_ramp:
        w[-overlap:] = np.minimum(w[-overlap:], ramp[::-1])
    return w


def _tile_starts(length, tile, overlap):
    if tile >= length:
        return [0]
    starts = list(range(0, length - tile, tile - overlap))
    starts.append(length - tile)
    return starts


def dehaze_tiled(net, img, tile, overlap=DEFAULT_OVERLAP):
    """Process a large image as overlapping tiles with feathered blending."""
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    if tile <= overlap:
        raise ConfigError(f"tile ({tile}) must exceed the overlap ({overlap})")
    acc = np.zeros((h, w, 3), dtype=np.float64)
    weight = np.zeros((h, w, 1), dtype=np.float64)
    ys = _tile_starts(h, tile, overlap)
    xs = _tile_starts(w, tile, overlap)
    for y in ys:
        for x in xs:
            y2 = min(y + tile, h)
            x2 = min(x + tile, w)
            out = dehaze_array(net, img[y:y2, x:x2])
            wy = _feather(y2 - y, y > 0, y2 < h, min(overlap, y2 - y))
            wx = _feather(x2 - x, x > 0, x2 < w, min(overlap, x2 - x))
            tile_w = (wy[:, None] * wx[None, :])[..., None]
            acc[y:y2, x:x2] += out * tile_w
            weight[y:y2, x:x2] += tile_w
    return (acc / weight).astype(np.float32)
