"""Loss terms for the generator and discriminator.

All functions take torch tensors (batched N x C x H x W images, feature
maps, or lists of score maps) and return scalar tensors, so every term is
differentiable and can be checked against finite differences.

Sign conventions: the adversarial term is mean log(1 - D(I, G(I))) and is
minimized by the generator (saturating form; a non-saturating -log D
variant is available behind a flag). The discriminator loss is the negated
two-term objective, so the trainer minimizes both.
"""

from dataclasses import dataclass

import torch

# score maps are clamped away from {0, 1} before any log
SCORE_EPS = 1e-7


@dataclass
class LossWeights:
    """Weights of the combined objective; defaults follow the training recipe."""

    gamma1: float = 1.0    # adversarial
    gamma2: float = 1.0    # perceptual
    gamma3: float = 50.0   # style
    gamma4: float = 0.01   # feature regularization

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3", "gamma4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass
class LossBreakdown:
    """Unweighted terms of one generator update plus their weighted sum."""

    adversarial: float
    perceptual: float
    style: float
    feature_reg: float
    total: float

    def as_dict(self):
        return {
            "adversarial": self.adversarial,
            "perceptual": self.perceptual,
            "style": self.style,
            "feature_reg": self.feature_reg,
            "total": self.total,
        }


def _clamp_scores(scores):
    return scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def adversarial_loss(scores, non_saturating=False):
    """Generator-side adversarial term, averaged over scales, positions, batch."""
    terms = []
    for s in scores:
        s = _clamp_scores(s)
        if non_saturating:
            terms.append(-torch.log(s).mean())
        else:
            terms.append(torch.log(1.0 - s).mean())
    return torch.stack(terms).mean()


def discriminator_loss(scores_fake, scores_real):
    """Negated discriminator objective (minimized by the trainer)."""
    terms = []
    for sf, sr in zip(scores_fake, scores_real):
        sf = _clamp_scores(sf)
        sr = _clamp_scores(sr)
        terms.append((-torch.log(1.0 - sf) - torch.log(sr)).mean())
    return torch.stack(terms).mean()


def perceptual_loss(extractor, output, target):
    """Squared feature distance normalized by the feature-map size."""
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(output.shape)} vs {tuple(target.shape)}")
    f_out = extractor.extract(output)
    f_tgt = extractor.extract(target)
    # per-sample ||.||^2 / (C*H*W), averaged over the batch == element mean
    return ((f_out - f_tgt) ** 2).mean()


def gram(features):
    """Channel Gram matrix psi psi^T / (C*H*W); accepts C,H,W or N,C,H,W."""
    if features.dim() == 3:
        return gram(features.unsqueeze(0)).squeeze(0)
    n, c, h, w = features.shape
    psi = features.reshape(n, c, h * w)
    return psi @ psi.transpose(1, 2) / (c * h * w)


def style_loss_from_features(f_out, f_tgt):
    """Squared Frobenius distance between Gram matrices, batch averaged."""
    if f_out.shape != f_tgt.shape:
        raise ValueError(f"shape mismatch: {tuple(f_out.shape)} vs {tuple(f_tgt.shape)}")
    diff = gram(f_out) - gram(f_tgt)
    if diff.dim() == 2:
        return (diff ** 2).sum()
    return (diff ** 2).sum(dim=(1, 2)).mean()


def style_loss(extractor, output, target):
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(output.shape)} vs {tuple(target.shape)}")
    return style_loss_from_features(extractor.extract(output), extractor.extract(target))


def feature_reg_loss(features_hazy, features_clean, reduction="sum"):
    """L1 between encoder features of the hazy input and of the clean pair.

    reduction="sum" is the per-sample sum of absolute differences (batch
    averaged); "mean" divides by the element count, trading scale against
    the gamma4 weight.
    """
    if features_hazy.shape != features_clean.shape:
        raise ValueError(
            f"shape mismatch: {tuple(features_hazy.shape)} vs {tuple(features_clean.shape)}"
        )
    diff = (features_hazy - features_clean).abs()
    if diff.dim() == 3:
        diff = diff.unsqueeze(0)
    per_sample = diff.reshape(diff.shape[0], -1)
    if reduction == "sum":
        return per_sample.sum(dim=1).mean()
    if reduction == "mean":
        return per_sample.mean(dim=1).mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def weighted_total(weights, adversarial, perceptual, style, feature_reg):
    """gamma1*L_A + gamma2*L_P + gamma3*L_S + gamma4*L_FR (tensors or floats)."""
    return (
        weights.gamma1 * adversarial
        + weights.gamma2 * perceptual
        + weights.gamma3 * style
        + weights.gamma4 * feature_reg
    )


def generator_loss(weights, adversarial, perceptual, style, feature_reg):
    """Assemble the LossBreakdown record for one batch."""
    parts = [float(adversarial), float(perceptual), float(style), float(feature_reg)]
    total = weighted_total(weights, *parts)
    return LossBreakdown(*parts, total=total)
