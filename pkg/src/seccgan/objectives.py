"""Losses, the confidence gate, and the adversarial value diagnostic.

Sign convention: the adversarial game is implemented as descent on BCE/CE
losses (equivalent to ascent on the corresponding log-likelihoods). All batch
reductions are means, so the weighting multiplier keeps its meaning whatever
the qualified-sample count is.
"""

from dataclasses import dataclass

import torch

# probability clamp for BCE-on-probabilities and the value diagnostic
EPS = 1e-7


@dataclass(frozen=True)
class SyntheticBatch:
    """Generated images, their conditioning labels, and per-sample
    discriminator confidences."""

    images: torch.Tensor
    labels: torch.Tensor
    confidences: torch.Tensor

    def __post_init__(self):
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.confidences.shape != (n,):
            raise ValueError(
                f"images/labels/confidences lengths disagree: "
                f"{n}/{tuple(self.labels.shape)}/{tuple(self.confidences.shape)}"
            )

    def __len__(self):
        return self.images.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    loss_d: float = 0.0
    loss_g: float = 0.0
    loss_c_real: float = 0.0
    loss_c_syn: float = 0.0
    k_prime: int = 0


def _as_prob(confidence):
    p = torch.as_tensor(confidence)
    if p.dtype not in (torch.float32, torch.float64):
        p = p.double()
    return p.clamp(EPS, 1.0 - EPS)


def bce(confidence, target):
    """Binary cross-entropy against a constant target, mean over the batch.

    -[t ln p + (1-t) ln(1-p)] with p clamped to [eps, 1-eps].
    """
    if target not in (0, 1):
        raise ValueError(f"target must be 0 or 1, got {target}")
    p = _as_prob(confidence)
    if p.numel() == 0:
        raise ValueError("empty confidence batch")
    return (-torch.log(p) if target == 1 else -torch.log(1.0 - p)).mean()


def ce(logits, labels):
    """Cross-entropy -ln softmax(logits)[label] via log-sum-exp, batch mean."""
    logits = torch.as_tensor(logits)
    if logits.ndim == 1:
        logits = logits[None, :]
    labels = torch.as_tensor(labels, dtype=torch.int64).reshape(-1)
    if logits.shape[0] != labels.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows but {labels.shape[0]} labels")
    if labels.numel() == 0:
        raise ValueError("empty label batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError(
            f"labels must lie in [0, {logits.shape[1]}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    log_probs = logits - torch.logsumexp(logits, dim=1, keepdim=True)
    return -log_probs[torch.arange(labels.shape[0]), labels].mean()


def discriminator_loss(conf_real, conf_fake):
    """Mean BCE of real confidences against 1 plus mean BCE of fake against 0."""
    return bce(conf_real, 1) + bce(conf_fake, 0)


def generator_loss(conf_fake):
    """Non-saturating generator loss: mean BCE of fake confidences against 1."""
    return bce(conf_fake, 1)


def filter_qualified(s, beta):
    """Keep exactly the samples with confidence >= beta, order preserved.

    The boundary is inclusive; beta=0 is the identity and beta>1 always
    yields an empty batch.
    """
    mask = s.confidences >= beta
    return SyntheticBatch(s.images[mask], s.labels[mask], s.confidences[mask])


def classifier_loss(logits_real, labels_real, logits_syn, labels_syn, lam):
    """Mean real CE plus lam times mean CE over the qualified synthetic set.

    The synthetic inputs are the post-filter subset; when it is empty the
    second term is 0 and the loss reduces to the supervised baseline's.
    Returns (loss tensor, LossBreakdown).
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    loss_real = ce(logits_real, labels_real)
    n_syn = torch.as_tensor(logits_syn).shape[0] if logits_syn is not None else 0
    if n_syn > 0:
        loss_syn = ce(logits_syn, labels_syn)
        total = loss_real + lam * loss_syn
    else:
        loss_syn = None
        total = loss_real
    breakdown = LossBreakdown(
        loss_c_real=float(loss_real.detach()),
        loss_c_syn=float(loss_syn.detach()) if loss_syn is not None else 0.0,
        k_prime=int(n_syn),
    )
    return total, breakdown


def gan_value_diagnostic(conf_real, conf_fake):
    """mean ln D(x,y) + mean ln(1 - D(G(z,y),y)).

    Convergence indicator only (no gradients taken): tends to -ln 4 when the
    generator matches the data and the discriminator is optimal, and to 0
    when the discriminator saturates.
    """
    r = _as_prob(conf_real)
    f = _as_prob(conf_fake)
    if r.numel() == 0 or f.numel() == 0:
        raise ValueError("empty confidence batch")
    return float(torch.log(r).mean() + torch.log(1.0 - f).mean())
