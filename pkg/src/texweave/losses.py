"""The five-term training objective and its pieces.

Reconstruction is driven by a pixel L1 loss, a Gram-matrix loss over
five fixed feature scales, and a Wasserstein adversarial loss with
gradient penalty against the reconstruction critic. Interpolation adds
an alpha-weighted Gram loss and an alpha-weighted adversarial loss on a
random crop of the interpolated canvas, judged by a separately trained
critic. The total objective is the lambda-weighted sum; the encoders
and generator descend it while the critics ascend their adversarial
terms (with the gradient penalty acting as the critics' regularizer).
"""

from dataclasses import dataclass

import torch

from .features import default_extractor

GAMMA_GP = 10.0


class LossError(ValueError):
    pass


@dataclass
class LossWeights:
    """Balance factors for the five loss terms."""

    pix_rec: float = 100.0
    gram_rec: float = 0.001
    adv_rec: float = 1.0
    gram_itp: float = 0.001
    adv_itp: float = 1.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise LossError(f"loss weight {name} must be >= 0")


def _as_alpha(alpha, batch, device, dtype):
    """Normalize alpha to a B-vector in [0, 1]."""
    if torch.is_tensor(alpha):
        a = alpha.reshape(-1).to(device=device, dtype=dtype)
        if a.numel() == 1:
            a = a.expand(batch)
    else:
        a = torch.full((batch,), float(alpha), device=device, dtype=dtype)
    if (a < 0).any() or (a > 1).any():
        raise LossError("alpha must lie in [0, 1]")
    return a


def gram_matrix(features):
    """Channel correlation matrix, normalized by C*H*W.

    Accepts B x C x H x W (returns B x C x C) or C x H x W.
    """
    single = features.ndim == 3
    f = features.unsqueeze(0) if single else features
    b, c, h, w = f.shape
    flat = f.reshape(b, c, h * w)
    g = flat @ flat.transpose(1, 2) / float(c * h * w)
    return g[0] if single else g


def gram_sq_distances(a, b, extractor=None):
    """Per-sample sum over scales of squared Frobenius Gram distances."""
    if extractor is None:
        extractor = default_extractor(a.dtype)
    total = 0.0
    for xa, xb in zip(extractor(a), extractor(b)):
        d = gram_matrix(xa) - gram_matrix(xb)
        total = total + (d * d).sum(dim=(-2, -1))
    return total


def gram_loss(a, b, extractor=None):
    """Gram distance of two images (batch mean when batched)."""
    if a.ndim == 3:
        a = a.unsqueeze(0)
    if b.ndim == 3:
        b = b.unsqueeze(0)
    return gram_sq_distances(a, b, extractor).mean()


def pixel_loss(s1_hat, s1, s2_hat, s2):
    """Mean-absolute reconstruction error summed over the two pairs."""
    return (s1_hat - s1).abs().mean() + (s2_hat - s2).abs().mean()


def gp_per_sample(a, b, critic, u, gamma=GAMMA_GP):
    """WGAN-GP penalty per sample on a random interpolate of a and b.

    When a or b carries gradients (the full-objective view) the penalty
    stays differentiable through them; detached inputs (the critic
    update path) get a fresh grad-enabled leaf.
    """
    u = u.reshape(-1, 1, 1, 1).to(a.dtype)
    x_hat = u * a + (1.0 - u) * b
    if not x_hat.requires_grad:
        x_hat.requires_grad_(True)
    score = critic(x_hat)
    grad = torch.autograd.grad(score.sum(), x_hat, create_graph=True)[0]
    norm = grad.reshape(grad.shape[0], -1).norm(dim=1)
    return gamma * (norm - 1.0) ** 2


def gradient_penalty(a, b, critic, u, gamma=GAMMA_GP):
    return gp_per_sample(a, b, critic, u, gamma).mean()


def adv_per_sample(a, b, critic, u, gamma=GAMMA_GP):
    """Per-sample D(A) - D(B) + GP(A, B)."""
    score = critic(a) - critic(b)
    if not torch.isfinite(score).all():
        raise LossError("critic emitted a non-finite score")
    return score + gp_per_sample(a, b, critic, u, gamma)


def adv_loss(a, b, critic, u, gamma=GAMMA_GP):
    """Adversarial loss D(A) - D(B) + GP(A, B), batch mean."""
    if a.ndim == 3:
        a = a.unsqueeze(0)
    if b.ndim == 3:
        b = b.unsqueeze(0)
    return adv_per_sample(a, b, critic, u, gamma).mean()


def interp_losses(i_crop, s1, s2, alpha, critic_itp, u1, u2,
                  extractor=None, gamma=GAMMA_GP):
    """Alpha-weighted Gram and adversarial losses of the interp crop.

    `alpha` may be a scalar or one draw per sample; weighting happens
    per sample before the batch mean.
    """
    a = _as_alpha(alpha, i_crop.shape[0], i_crop.device, i_crop.dtype)
    gram_itp = (a * gram_sq_distances(i_crop, s1, extractor)
                + (1.0 - a) * gram_sq_distances(i_crop, s2, extractor)).mean()
    adv_itp = (a * adv_per_sample(i_crop, s1, critic_itp, u1, gamma)
               + (1.0 - a) * adv_per_sample(i_crop, s2, critic_itp, u2,
                                            gamma)).mean()
    return gram_itp, adv_itp


def total_objective(s1, s2, s1_hat, s2_hat, i_crop, alpha,
                    critic_rec, critic_itp, u_draws, weights=None,
                    extractor=None, gamma=GAMMA_GP):
    """The lambda-weighted five-term objective on one batch.

    `u_draws` supplies the four gradient-penalty interpolation draws
    (rec1, rec2, itp1, itp2) so the value is a deterministic function
    of its inputs. Returns (total, parts).
    """
    weights = weights or LossWeights()
    l_pix = pixel_loss(s1_hat, s1, s2_hat, s2)
    l_gram_rec = gram_loss(s1_hat, s1, extractor) \
        + gram_loss(s2_hat, s2, extractor)
    l_adv_rec = adv_loss(s1_hat, s1, critic_rec, u_draws["rec1"], gamma) \
        + adv_loss(s2_hat, s2, critic_rec, u_draws["rec2"], gamma)
    l_gram_itp, l_adv_itp = interp_losses(
        i_crop, s1, s2, alpha, critic_itp,
        u_draws["itp1"], u_draws["itp2"], extractor, gamma)
    total = (weights.pix_rec * l_pix
             + weights.gram_rec * l_gram_rec
             + weights.adv_rec * l_adv_rec
             + weights.gram_itp * l_gram_itp
             + weights.adv_itp * l_adv_itp)
    parts = {
        "pix_rec": float(l_pix.detach()),
        "gram_rec": float(l_gram_rec.detach()),
        "adv_rec": float(l_adv_rec.detach()),
        "gram_itp": float(l_gram_itp.detach()),
        "adv_itp": float(l_adv_itp.detach()),
    }
    return total, parts
