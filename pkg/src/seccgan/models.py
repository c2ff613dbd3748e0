"""The three networks: conditional DCGAN generator and discriminator, plus an
independent residual classifier.

All randomness in initialization comes from a named RNG stream, never from
torch's global generator, so parameter draws are reproducible and the three
networks' initializations are independent of later sampling.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class NetConfig:
    z_dim: int = 100
    image_size: int = 32
    channels: int = 1
    num_classes: int = 10
    base_width: int = 64
    classifier_depth: int = 2

    def __post_init__(self):
        if self.image_size not in (32, 64, 128):
            raise ValueError(
                f"image_size must be one of 32/64/128 (power-of-two conv path), "
                f"got {self.image_size}"
            )
        if self.z_dim <= 0:
            raise ValueError(f"z_dim must be > 0, got {self.z_dim}")
        if self.base_width <= 0:
            raise ValueError(f"base_width must be > 0, got {self.base_width}")
        if self.channels <= 0:
            raise ValueError(f"channels must be > 0, got {self.channels}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.classifier_depth < 1:
            raise ValueError(f"classifier_depth must be >= 1, got {self.classifier_depth}")


def _check_labels(labels, num_classes):
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )


class Generator(nn.Module):
    """Label embedding concatenated with z, then a fractionally-strided conv
    stack projecting 1x1 -> 4x4 -> ... -> image_size, tanh output."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        n_up = int(math.log2(cfg.image_size // 4))
        ch = cfg.base_width * (2 ** (n_up - 1))
        self.label_embed = nn.Embedding(cfg.num_classes, cfg.z_dim)
        layers = [
            nn.ConvTranspose2d(2 * cfg.z_dim, ch, 4, 1, 0, bias=False),
            nn.BatchNorm2d(ch),
            nn.ReLU(inplace=True),
        ]
        for _ in range(n_up - 1):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [
            nn.ConvTranspose2d(ch, cfg.channels, 4, 2, 1, bias=False),
            nn.Tanh(),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, z, labels):
        if z.ndim != 2 or z.shape[1] != self.cfg.z_dim:
            raise ValueError(f"z must be (k, {self.cfg.z_dim}), got {tuple(z.shape)}")
        _check_labels(labels, self.cfg.num_classes)
        h = torch.cat([z, self.label_embed(labels)], dim=1)
        return self.net(h[:, :, None, None])


class Discriminator(nn.Module):
    """One-hot label planes concatenated to the image, strided conv stack with
    LeakyReLU(0.2), batch norm on all but the first conv, sigmoid head."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        n_down = int(math.log2(cfg.image_size // 4))
        ch = cfg.base_width
        layers = [
            nn.Conv2d(cfg.channels + cfg.num_classes, ch, 4, 2, 1, bias=False),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for _ in range(n_down - 1):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(ch * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch *= 2
        layers += [nn.Conv2d(ch, 1, 4, 1, 0, bias=False)]
        self.net = nn.Sequential(*layers)

    def forward(self, images, labels):
        cfg = self.cfg
        expect = (cfg.channels, cfg.image_size, cfg.image_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expect:
            raise ValueError(f"images must be (b, {expect[0]}, {expect[1]}, {expect[2]}), got {tuple(images.shape)}")
        if labels.shape != images.shape[:1]:
            raise ValueError("labels must be one per image")
        _check_labels(labels, cfg.num_classes)
        planes = F.one_hot(labels, cfg.num_classes).to(images.dtype)
        planes = planes[:, :, None, None].expand(-1, -1, cfg.image_size, cfg.image_size)
        logits = self.net(torch.cat([images, planes], dim=1))
        return torch.sigmoid(logits.reshape(images.shape[0]))


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride, bias=False),
                nn.BatchNorm2d(out_ch),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Classifier(nn.Module):
    """Residual classifier (BasicBlock stages, widths doubling, global average
    pool, affine head).

    image_size 128 with base_width 64 and classifier_depth 2 is the full
    18-layer geometry (7x7 stride-2 stem, maxpool, stage strides 1,2,2,2);
    32/64 use a 3x3 stem and downsample every stage so small widths stay
    cheap on CPU.
    """

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        d = cfg.classifier_depth
        if cfg.image_size == 128:
            stem = [
                nn.Conv2d(cfg.channels, w, 7, 2, 3, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(3, 2, 1),
            ]
            widths = [w, 2 * w, 4 * w, 8 * w]
            strides = [1, 2, 2, 2]
        else:
            stem = [
                nn.Conv2d(cfg.channels, w, 3, 1, 1, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
            if cfg.image_size == 32:
                widths = [w, 2 * w, 4 * w]
                strides = [2, 2, 2]
            else:
                widths = [w, 2 * w, 4 * w, 8 * w]
                strides = [2, 2, 2, 2]
        self.stem = nn.Sequential(*stem)
        blocks = []
        in_ch = w
        for width, stride in zip(widths, strides):
            for i in range(d):
                blocks.append(BasicBlock(in_ch, width, stride if i == 0 else 1))
                in_ch = width
        self.blocks = nn.Sequential(*blocks)
        self.fc = nn.Linear(in_ch, cfg.num_classes)

    def forward(self, images):
        cfg = self.cfg
        expect = (cfg.channels, cfg.image_size, cfg.image_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expect:
            raise ValueError(f"images must be (b, {expect[0]}, {expect[1]}, {expect[2]}), got {tuple(images.shape)}")
        h = self.blocks(self.stem(images))
        h = h.mean(dim=(2, 3))
        return self.fc(h)


def _init_weights(module, stream):
    # draws consumed per tensor in module registration order
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear, nn.Embedding)):
            w = stream.normal(tuple(m.weight.shape)) * 0.02
            with torch.no_grad():
                m.weight.copy_(torch.from_numpy(w))
                if getattr(m, "bias", None) is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
            m.reset_running_stats()


def init_params(cfg, stream):
    """Build and initialize (generator, discriminator, classifier).

    Conv/affine/embedding weights ~ N(0, 0.02), biases and norm shifts 0,
    norm scales 1. Deterministic in the stream state; draw order is
    generator, then discriminator, then classifier.
    """
    g, d, c = Generator(cfg), Discriminator(cfg), Classifier(cfg)
    for net in (g, d, c):
        _init_weights(net, stream)
    return g, d, c


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
