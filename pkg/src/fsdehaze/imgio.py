"""Image and depth file IO; conversion between numpy images and tensors.

Disk format is 8-bit PNG; in memory images are H x W x 3 float32 arrays in
[0, 1]. Depth maps may be .npy files or any readable image (converted to a
single channel); their absolute scale is irrelevant because synthesis
normalizes each map by its own maximum.
"""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def list_images(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(path, img):
    img = np.asarray(img)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    Image.fromarray(data).save(path)


def load_depth(path):
    path = Path(path)
    if path.suffix.lower() == ".npy":
        depth = np.load(path).astype(np.float64)
        if depth.ndim == 3:
            depth = depth.mean(axis=2)
        return depth
    with Image.open(path) as im:
        arr = np.asarray(im.convert("F"), dtype=np.float64)
    return arr


def to_tensor(img):
    """H x W x C float image -> 1 x C x H x W float32 tensor."""
    arr = np.ascontiguousarray(np.asarray(img, dtype=np.float32).transpose(2, 0, 1))
    return torch.from_numpy(arr).unsqueeze(0)


def stack_batch(images):
    """List of H x W x C float images -> N x C x H x W float32 tensor."""
    arr = np.stack([np.asarray(im, dtype=np.float32).transpose(2, 0, 1) for im in images])
    return torch.from_numpy(np.ascontiguousarray(arr))


def from_tensor(tensor):
    """1 x C x H x W or C x H x W tensor -> H x W x C float32 array in [0, 1]."""
    t = tensor.detach()
    if t.dim() == 4:
        if t.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {t.shape[0]}")
        t = t[0]
    arr = t.cpu().numpy().transpose(1, 2, 0)
    return np.clip(arr, 0.0, 1.0)
