"""Image quality metrics (PSNR, SSIM) and detection metrics (AP, mAP).

PSNR and SSIM take H x W or H x W x C arrays in [0, peak]. SSIM follows the
three-term luminance/contrast/structure product; the default configuration
uses whole-image statistics, an 11 x 11 uniform-window mode is available.
Detection metrics consume flat prediction / ground-truth records and use
greedy IoU matching with all-point (precision-envelope) interpolation.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def _check_same_shape(reference, test):
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: reference {reference.shape} vs test {test.shape}")
    return reference, test


def psnr(reference, test, peak=1.0):
    """10 * log10(peak^2 / MSE); +inf when the images are identical.

    MSE is averaged over all pixels and channels.
    """
    reference, test = _check_same_shape(reference, test)
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = np.mean((reference - test) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


@dataclass
class SsimConfig:
    """Constants and mode for SSIM.

    Defaults assume dynamic range 1.0: C1 = (0.01 P)^2, C2 = (0.03 P)^2,
    C3 = C2 / 2, whole-image statistics. Statistics use the population
    convention (divide by n). 3-channel inputs are converted to luma unless
    per_channel is set, in which case per-channel SSIMs are averaged.
    """

    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    c3: float = field(default=0.03 ** 2 / 2)
    mode: str = "global"
    window: int = 11
    per_channel: bool = False

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0 or self.c3 <= 0:
            raise ValueError("SSIM constants must be positive")
        if self.mode not in ("global", "windowed"):
            raise ValueError(f"mode must be 'global' or 'windowed', got {self.mode!r}")
        if self.mode == "windowed" and self.window < 2:
            raise ValueError("window must be >= 2")

    @classmethod
    def for_peak(cls, peak, **kwargs):
        c2 = (0.03 * peak) ** 2
        return cls(c1=(0.01 * peak) ** 2, c2=c2, c3=c2 / 2, **kwargs)


def _to_luma(img):
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.asarray(LUMA_WEIGHTS)
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0]
    return img


def _ssim_terms(mu_r, mu_t, var_r, var_t, cov, cfg):
    sd_r = np.sqrt(var_r)
    sd_t = np.sqrt(var_t)
    lum = (2 * mu_r * mu_t + cfg.c1) / (mu_r ** 2 + mu_t ** 2 + cfg.c1)
    con = (2 * sd_r * sd_t + cfg.c2) / (var_r + var_t + cfg.c2)
    struct = (cov + cfg.c3) / (sd_r * sd_t + cfg.c3)
    return lum * con * struct


def _ssim_single(reference, test, cfg):
    if cfg.mode == "global":
        mu_r = reference.mean()
        mu_t = test.mean()
        var_r = reference.var()
        var_t = test.var()
        cov = ((reference - mu_r) * (test - mu_t)).mean()
        return float(_ssim_terms(mu_r, mu_t, var_r, var_t, cov, cfg))
    size = cfg.window
    mu_r = uniform_filter(reference, size, mode="reflect")
    mu_t = uniform_filter(test, size, mode="reflect")
    var_r = uniform_filter(reference ** 2, size, mode="reflect") - mu_r ** 2
    var_t = uniform_filter(test ** 2, size, mode="reflect") - mu_t ** 2
    cov = uniform_filter(reference * test, size, mode="reflect") - mu_r * mu_t
    # filtered squares can go slightly negative from rounding
    var_r = np.maximum(var_r, 0.0)
    var_t = np.maximum(var_t, 0.0)
    return float(_ssim_terms(mu_r, mu_t, var_r, var_t, cov, cfg).mean())


def ssim(reference, test, config=None):
    """Structural similarity: product of luminance, contrast, structure terms."""
    reference, test = _check_same_shape(reference, test)
    cfg = config if config is not None else SsimConfig()
    if cfg.per_channel and reference.ndim == 3:
        values = [
            _ssim_single(reference[..., c], test[..., c], cfg)
            for c in range(reference.shape[2])
        ]
        return float(np.mean(values))
    return _ssim_single(_to_luma(reference), _to_luma(test), cfg)


# ---------------------------------------------------------------------------
# Detection metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DetectionRecord:
    """One predicted or ground-truth box. score is None for ground truth."""

    image_id: str
    category: str
    score: float | None
    box: tuple[float, float, float, float]  # x1, y1, x2, y2

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"box must satisfy x1 < x2 and y1 < y2, got {self.box}")
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


def iou(box_a, box_b):
    ax1, ay1, ax2, ay2 = box_a
    bx1, by1, bx2, by2 = box_b
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def match_predictions(predictions, truths, iou_threshold):
    """Greedy matching in descending score order.

    Each prediction matches the highest-IoU unmatched truth of the same
    image with IoU >= threshold. Returns the sorted predictions and a
    parallel list of True (TP) / False (FP).
    """
    order = sorted(range(len(predictions)), key=lambda i: -predictions[i].score)
    ranked = [predictions[i] for i in order]
    by_image = {}
    for idx, t in enumerate(truths):
        by_image.setdefault(t.image_id, []).append(idx)
    matched = [False] * len(truths)
    hits = []
    for pred in ranked:
        best_iou = 0.0
        best_idx = -1
        for idx in by_image.get(pred.image_id, ()):
            if matched[idx]:
                continue
            overlap = iou(pred.box, truths[idx].box)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_idx = idx
        if best_idx >= 0:
            matched[best_idx] = True
            hits.append(True)
        else:
            hits.append(False)
    return ranked, hits


def _interpolated_ap(recall, precision):
    """Area under the precision envelope (all-point interpolation)."""
    r = np.concatenate(([0.0], recall))
    p = np.concatenate(([0.0], precision))
    # envelope: precision at recall r is the max precision at any recall >= r
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    ap = 0.0
    for i in range(1, len(r)):
        ap += (r[i] - r[i - 1]) * p[i]
    return ap


def average_precision(predictions, truths, iou_threshold=0.5):
    """AP for a single category at the given IoU threshold."""
    categories = {r.category for r in predictions} | {r.category for r in truths}
    if len(categories) > 1:
        raise ValueError(f"records span multiple categories: {sorted(categories)}")
    if any(p.score is None for p in predictions):
        raise ValueError("all predictions must carry a score")
    if not truths:
        if predictions:
            return 0.0
        raise ValueError("AP is undefined with no predictions and no ground truth")
    if not predictions:
        return 0.0
    _, hits = match_predictions(predictions, truths, iou_threshold)
    tp = np.cumsum(np.asarray(hits, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(hits, dtype=np.float64))
    recall = tp / len(truths)
    precision = tp / (tp + fp)
    return _interpolated_ap(recall, precision)


def mean_average_precision(predictions, truths, categories, iou_threshold=0.5):
    """Mean AP over categories with ground truth; returns (mAP, per-category AP)."""
    if not categories:
        raise ValueError("categories must be nonempty")
    table = {}
    for cat in categories:
        cat_preds = [p for p in predictions if p.category == cat]
        cat_truths = [t for t in truths if t.category == cat]
        if not cat_truths:
            warnings.warn(f"category {cat!r} has no ground truth; excluded from mAP")
            continue
        table[cat] = average_precision(cat_preds, cat_truths, iou_threshold)
    if not table:
        raise ValueError("no category has any ground truth")
    return float(np.mean(list(table.values()))), table


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def read_detection_file(path):
    """Parse a detection TSV: image_id, category, score or '-', x1, y1, x2, y2."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 tab-separated fields, got {len(parts)}")
            image_id, category, score_s, *box_s = parts
            try:
                score = None if score_s == "-" else float(score_s)
                box = tuple(float(v) for v in box_s)
                records.append(DetectionRecord(image_id, category, score, box))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def write_detection_file(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            score = "-" if r.score is None else f"{r.score:.17g}"
            fh.write("\t".join([r.image_id, r.category, score] + [f"{v:.17g}" for v in r.box]) + "\n")


def _fmt(value):
    if math.isinf(value):
        return "inf"
    return f"{value:.6f}"


def write_metric_report(path, psnr_values, ssim_values):
    """Summary TSV with PSNR_AVG, SSIM_AVG, PSNR_SD, SSIM_SD columns."""
    p = np.asarray(psnr_values, dtype=np.float64)
    s = np.asarray(ssim_values, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        # std over values containing +inf is nan, reported as such
        row = [p.mean(), s.mean(), p.std(), s.std()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("PSNR_AVG\tSSIM_AVG\tPSNR_SD\tSSIM_SD\n")
        fh.write("\t".join(_fmt(v) for v in row) + "\n")
    return row
