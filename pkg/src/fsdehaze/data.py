"""Paired hazy/clean dataset synthesis and loading.

Synthesis applies the scattering model to user-supplied clean images:
depth-based mode samples a scattering coefficient and derives the
transmission from a depth map (normalized by its own max); constant-t mode
samples a single transmission value per image, the flat-scene shortcut
used for overhead imagery. Atmospheric light components are sampled
independently. Everything is keyed off (seed, filename), so regeneration
and parallel generation give identical outputs.

Layout on disk: out/hazy/*.png, out/clean/*.png and out/manifest.tsv with
columns name, m1, m2, m3, mode, beta_or_t.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .errors import ConfigError, DataError
from .haze import synthesize_haze, transmission_from_depth

log = logging.getLogger(__name__)

MODES = ("depth-based", "constant-t")
MANIFEST_NAME = "manifest.tsv"
MANIFEST_COLUMNS = ("name", "m1", "m2", "m3", "mode", "beta_or_t")

# sampling ranges from the synthesis recipes: indoor beta, flat-scene t,
# atmospheric light components
DEFAULT_BETA_RANGE = (0.6, 1.8)
DEFAULT_T_RANGE = (0.2, 0.6)
DEFAULT_LIGHT_RANGE = (0.7, 1.0)


def _check_range(name, lo, hi, upper=None, lower=0.0):
    if not (lower < lo <= hi):
        raise ValueError(f"{name} must satisfy {lower} < lo <= hi, got ({lo}, {hi})")
    if upper is not None and hi > upper:
        raise ValueError(f"{name} must stay within (..., {upper}], got ({lo}, {hi})")


@dataclass
class SynthesisRecipe:
    mode: str = "constant-t"
    beta_range: tuple = DEFAULT_BETA_RANGE
    t_range: tuple = DEFAULT_T_RANGE
    light_range: tuple = DEFAULT_LIGHT_RANGE
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        _check_range("beta_range", *self.beta_range)
        _check_range("t_range", *self.t_range, upper=1.0)
        _check_range("light_range", *self.light_range, upper=1.0)


def _name_key(name):
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")


def _rng(*keys):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def sample_parameters(recipe, name):
    """Per-image haze parameters, derived only from (recipe.seed, name)."""
    rng = _rng(recipe.seed, _name_key(name))
    light = rng.uniform(*recipe.light_range, size=3)
    if recipe.mode == "constant-t":
        return light, float(rng.uniform(*recipe.t_range))
    return light, float(rng.uniform(*recipe.beta_range))


def _depth_for(depth_dir, stem):
    for suffix in (".npy",) + imgio.IMAGE_SUFFIXES:
        candidate = depth_dir / (stem + suffix)
        if candidate.exists():
            return candidate
    return None


def normalized_depth(depth):
    peak = depth.max()
    return depth / peak if peak > 0 else np.zeros_like(depth)


def synthesize_pair(clean, recipe, name, depth=None):
    """Returns (hazy, light, beta_or_t) for one clean image."""
    light, value = sample_parameters(recipe, name)
    if recipe.mode == "constant-t":
        t = np.full(clean.shape[:2], value)
    else:
        t = transmission_from_depth(normalized_depth(depth), value)
    return synthesize_haze(clean, t, light), light, value


def generate_pairs(clean_source, depth_source, recipe, out, count):
    """Write `count` hazy/clean pairs plus a manifest; returns the manifest path."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    clean_dir = Path(clean_source)
    if not clean_dir.is_dir():
        raise ConfigError(f"clean image directory not found: {clean_dir}")
    depth_dir = None
    if recipe.mode == "depth-based":
        if depth_source is None:
            raise ConfigError("depth-based mode requires a depth directory")
        depth_dir = Path(depth_source)
        if not depth_dir.is_dir():
            raise ConfigError(f"depth directory not found: {depth_dir}")

    files = imgio.list_images(clean_dir)
    if not files:
        raise ConfigError(f"no images found under {clean_dir}")

    out = Path(out)
    (out / "hazy").mkdir(parents=True, exist_ok=True)
    (out / "clean").mkdir(parents=True, exist_ok=True)

    rows = []
    for path in files:
        if len(rows) == count:
            break
        name = path.stem + ".png"
        try:
            clean = imgio.load_image(path)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        depth = None
        if recipe.mode == "depth-based":
            depth_path = _depth_for(depth_dir, path.stem)
            if depth_path is None:
                log.warning("skipping %s: no depth map with matching stem", path)
                continue
            try:
                depth = imgio.load_depth(depth_path)
            except Exception as exc:
                log.warning("skipping unreadable depth %s: %s", depth_path, exc)
                continue
            if depth.shape != clean.shape[:2]:
                log.warning("skipping %s: depth shape %s != image %s",
                            path, depth.shape, clean.shape[:2])
                continue
        hazy, light, value = synthesize_pair(clean, recipe, name, depth)
        imgio.save_image(out / "hazy" / name, hazy)
        imgio.save_image(out / "clean" / name, clean)
        rows.append((name, light[0], light[1], light[2], recipe.mode, value))

    if len(rows) < count:
        raise DataError(
            f"only {len(rows)} valid clean images under {clean_dir}, need {count}"
        )

    manifest = out / MANIFEST_NAME
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for name, m1, m2, m3, mode, value in rows:
            fh.write(f"{name}\t{m1:.17g}\t{m2:.17g}\t{m3:.17g}\t{mode}\t{value:.17g}\n")
    return manifest


def read_manifest(path):
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != MANIFEST_COLUMNS:
            raise DataError(f"unexpected manifest header {header} in {path}")
        for line in fh:
            if not line.strip():
                continue
            name, m1, m2, m3, mode, value = line.rstrip("\n").split("\t")
            entries.append({
                "name": name,
                "light": np.array([float(m1), float(m2), float(m3)]),
                "mode": mode,
                "beta_or_t": float(value),
            })
    return entries


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    hazy: object  # N x 3 x patch x patch float32 tensor
    clean: object
    names: list = field(default_factory=list)


class PairDataset:
    """Aligned random-crop batches over a hazy/clean pair directory.

    Batch composition is a pure function of (seed, iteration): epoch e uses
    the permutation drawn from (seed, e), and the crop window of the j-th
    sample of the epoch comes from (seed, e, j). That makes any iteration
    reproducible in isolation, which the trainer relies on for bit-exact
    resume.
    """

    def __init__(self, root, patch, batch, seed):
        root = Path(root)
        hazy_dir, clean_dir = root / "hazy", root / "clean"
        if not hazy_dir.is_dir() or not clean_dir.is_dir():
            raise DataError(f"{root} must contain hazy/ and clean/ directories")
        hazy_names = {p.name for p in imgio.list_images(hazy_dir)}
        clean_names = {p.name for p in imgio.list_images(clean_dir)}
        if hazy_names != clean_names:
            only_h = sorted(hazy_names - clean_names)
            only_c = sorted(clean_names - hazy_names)
            raise DataError(
                f"hazy/clean filename sets differ: only in hazy {only_h}, only in clean {only_c}"
            )
        if not hazy_names:
            raise DataError(f"no image pairs under {root}")
        if batch < 1 or batch > len(hazy_names):
            raise ValueError(f"batch must be in [1, {len(hazy_names)}], got {batch}")
        if patch < 4:
            raise ValueError(f"patch must be >= 4, got {patch}")
        self.root = root
        self.names = sorted(hazy_names)
        self.patch = patch
        self.batch = batch
        self.seed = seed
        self._cache = {}

    @property
    def batches_per_epoch(self):
        return len(self.names) // self.batch

    def _load(self, name):
        if name not in self._cache:
            hazy = imgio.load_image(self.root / "hazy" / name)
            clean = imgio.load_image(self.root / "clean" / name)
            if hazy.shape != clean.shape:
                raise DataError(f"pair {name} has mismatched shapes "
                                f"{hazy.shape} vs {clean.shape}")
            if hazy.shape[0] < self.patch or hazy.shape[1] < self.patch:
                raise ValueError(
                    f"image {name} ({hazy.shape[0]}x{hazy.shape[1]}) is smaller "
                    f"than the {self.patch} patch"
                )
            self._cache[name] = (hazy, clean)
        return self._cache[name]

    def batch_at(self, iteration):
        epoch, slot = divmod(iteration, self.batches_per_epoch)
        perm = _rng(self.seed, epoch).permutation(len(self.names))
        chosen = perm[slot * self.batch:(slot + 1) * self.batch]
        hazy_crops, clean_crops, names = [], [], []
        for j, idx in enumerate(chosen):
            name = self.names[idx]
            hazy, clean = self._load(name)
            rng = _rng(self.seed, epoch, slot * self.batch + j)
            top = int(rng.integers(0, hazy.shape[0] - self.patch + 1))
            left = int(rng.integers(0, hazy.shape[1] - self.patch + 1))
            window = (slice(top, top + self.patch), slice(left, left + self.patch))
            hazy_crops.append(hazy[window])
            clean_crops.append(clean[window])
            names.append(name)
        return Batch(
            hazy=imgio.stack_batch(hazy_crops),
            clean=imgio.stack_batch(clean_crops),
            names=names,
        )

    def __iter__(self):
        iteration = 0
        while True:
            yield self.batch_at(iteration)
            iteration += 1


def load_pairs(root, patch, batch, seed, epochs=None):
    """Stream of batches; finite when `epochs` is given, endless otherwise."""
    ds = PairDataset(root, patch, batch, seed)
    total = None if epochs is None else epochs * ds.batches_per_epoch
    iteration = 0
    while total is None or iteration < total:
        yield ds.batch_at(iteration)
        iteration += 1
