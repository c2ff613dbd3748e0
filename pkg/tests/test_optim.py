"""Adam tests: a pure-Python transcript oracle and torch.optim agreement."""

import math

import pytest
import torch

from seccgan.optim import Adam


def scalar_adam_transcript(grads, lr, beta1, beta2, eps, p0):
    """Textbook Adam on one float, no tensors involved."""
    p, m, v = p0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        out.append(p)
    return out


def test_matches_scalar_transcript_100_steps():
    lr, b1, b2, eps = 0.01, 0.5, 0.999, 1e-8
    p = torch.tensor([2.0], dtype=torch.float64, requires_grad=True)
    opt = Adam([p], lr, b1, b2, eps)
    # quadratic pull toward 3 gives a sign flip partway through the run
    grads, trajectory = [], []
    for _ in range(100):
        opt.zero_grad()
        loss = (p - 3.0) ** 2
        loss.backward()
        grads.append(float(p.grad))
        opt.step()
        trajectory.append(float(p.detach()))
    want = scalar_adam_transcript(grads, lr, b1, b2, eps, 2.0)
    for got, exp in zip(trajectory, want):
        assert abs(got - exp) < 1e-12


def test_matches_torch_adam():
    torch.manual_seed(0)
    shapes = [(3, 4), (7,), (2, 2, 2)]
    ours = [torch.randn(s, dtype=torch.float64, requires_grad=True) for s in shapes]
    theirs = [p.detach().clone().requires_grad_(True) for p in ours]
    opt_a = Adam(ours, 2e-3, 0.5, 0.999, 1e-8)
    opt_b = torch.optim.Adam(theirs, lr=2e-3, betas=(0.5, 0.999), eps=1e-8)
    for step in range(50):
        torch.manual_seed(100 + step)
        gs = [torch.randn(s, dtype=torch.float64) for s in shapes]
        for p, g in zip(ours, gs):
            p.grad = g.clone()
        for p, g in zip(theirs, gs):
            p.grad = g.clone()
        opt_a.step()
        opt_b.step()
    for a, b in zip(ours, theirs):
        assert torch.allclose(a, b, atol=1e-12, rtol=0)


def test_first_step_is_bias_corrected():
    # after one step the update is lr * g / (|g| + eps), whatever the betas
    p = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
    opt = Adam([p], 0.1, 0.5, 0.999, 1e-8)
    p.grad = torch.tensor([0.25], dtype=torch.float64)
    opt.step()
    assert abs(float(p.detach()) - (1.0 - 0.1 * 0.25 / (0.25 + 1e-8))) < 1e-12


def test_lr_zero_never_moves_parameters():
    p = torch.tensor([1.5, -2.0], requires_grad=True)
    before = p.detach().clone()
    opt = Adam([p], 0.0)
    for _ in range(5):
        p.grad = torch.ones_like(p)
        opt.step()
    assert torch.equal(p.detach(), before)
    assert opt.t == 5


def test_negative_lr_rejected():
    with pytest.raises(ValueError):
        Adam([torch.zeros(1, requires_grad=True)], -1e-4)


def test_none_grad_at_start_means_no_movement():
    p = torch.tensor([0.7], requires_grad=True)
    before = p.detach().clone()
    opt = Adam([p], 0.1)
    opt.step()
    assert torch.equal(p.detach(), before)


def test_zero_grad_clears_to_none():
    p = torch.tensor([0.0], requires_grad=True)
    p.grad = torch.tensor([1.0])
    Adam([p], 0.1).zero_grad()
    assert p.grad is None


def test_state_roundtrip_resumes_exactly():
    def run(opt, p, n, seed):
        for i in range(n):
            torch.manual_seed(seed + i)
            p.grad = torch.randn_like(p)
            opt.step()

    p = torch.randn(4, dtype=torch.float64, requires_grad=True)
    opt = Adam([p], 1e-2, 0.5, 0.999, 1e-8)
    run(opt, p, 3, seed=0)
    snap_p = p.detach().clone()
    snap = opt.state()
    snap_m = [m.clone() for m in snap["m"]]
    snap_v = [v.clone() for v in snap["v"]]
    run(opt, p, 2, seed=50)
    expected = p.detach().clone()

    q = snap_p.clone().requires_grad_(True)
    opt2 = Adam([q], 1e-2, 0.5, 0.999, 1e-8)
    opt2.load_state(snap["t"], snap_m, snap_v)
    run(opt2, q, 2, seed=50)
    assert torch.equal(q.detach(), expected)


def test_load_state_rejects_count_mismatch():
    p = torch.zeros(2, requires_grad=True)
    opt = Adam([p], 0.1)
    with pytest.raises(ValueError):
        opt.load_state(1, [torch.zeros(2), torch.zeros(2)], [torch.zeros(2)])
