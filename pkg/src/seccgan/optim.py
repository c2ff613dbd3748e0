"""Adam with the standard bias-corrected update.

Hand-rolled rather than taken from a framework so the five-update training
schedule's optimizer-state isolation is explicit: each network owns one Adam
instance and an update can never touch another network's moments.
"""

import torch


class Adam:
    """m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
    p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
    """

    def __init__(self, params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            denom = (v / bc2).sqrt_().add_(self.eps)
            p.sub_(self.lr * (m / bc1) / denom)

    def state(self):
        """Moment tensors and step count, for checkpointing."""
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, t, m, v):
        if len(m) != len(self.params) or len(v) != len(self.params):
            raise ValueError(
                f"moment count mismatch: {len(m)}/{len(v)} for {len(self.params)} params"
            )
        self.t = int(t)
        for slot, new in zip(self.m, m):
            slot.copy_(torch.as_tensor(new).reshape(slot.shape))
        for slot, new in zip(self.v, v):
            slot.copy_(torch.as_tensor(new).reshape(slot.shape))
