"""Trainable scorers for the evaluation harness.

The seam classifier scores whether a crop contains an abrupt texture
boundary (positives concatenate two visibly different textures); the
repetition classifier scores whether a double-width crop is a 2x
horizontal tiling of one texture; the family classifier predicts the
procedural family of a patch for the inception-style realism score.
All reuse the critic backbone without the minibatch-stddev channel
(and without its pixel normalization, which measurably hurts
classification). Training streams freshly synthesized examples every
batch so the scorers cannot memorize a fixed set; scores are trusted
only once a held-out validation set clears the accuracy gate.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .models import EqualizedConv2d, EqualizedLinear, _act, init_parameters


class GateNotMet(RuntimeError):
    pass


class PlainDownBlock(nn.Module):
    """Two 3x3 convs then 2x average pooling, no normalization."""

    def __init__(self, nf):
        super().__init__()
        self.conv1 = EqualizedConv2d(nf, nf, 3, padding=1)
        self.conv2 = EqualizedConv2d(nf, nf, 3, padding=1)

    def forward(self, x):
        return F.avg_pool2d(_act(self.conv2(_act(self.conv1(x)))), 2)


class TextureClassifier(nn.Module):
    """Critic backbone (no minibatch stddev) with an n-way linear head."""

    def __init__(self, input_hw, n_out=1, nf=32, seed=0):
        super().__init__()
        h, w = input_hw
        self.input_hw = tuple(int(v) for v in input_hw)
        self.from_rgb = EqualizedConv2d(3, nf, 1)
        blocks = []
        while min(h, w) > 4:
            blocks.append(PlainDownBlock(nf))
            h, w = h // 2, w // 2
        self.blocks = nn.ModuleList(blocks)
        self.conv = EqualizedConv2d(nf, nf, 3, padding=1)
        self.final_conv = EqualizedConv2d(nf, nf, 4)
        self.head = EqualizedLinear(nf * (h - 3) * (w - 3), n_out)
        init_parameters(self, seed)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.input_hw:
            raise ValueError(f"classifier expects {self.input_hw} input, "
                             f"got {tuple(x.shape[-2:])}")
        h = self.from_rgb(x)
        for block in self.blocks:
            h = block(h)
        h = _act(self.conv(h))
        h = _act(self.final_conv(h))
        return self.head(h.reshape(x.shape[0], -1))


@dataclass
class GatedClassifier:
    """A trained classifier plus the validation accuracy it reached."""

    model: TextureClassifier
    val_accuracy: float
    gate: float
    kind: str
    class_names: list = None

    @property
    def trusted(self):
        return self.val_accuracy >= self.gate

    def require_gate(self):
        if not self.trusted:
            raise GateNotMet(
                f"{self.kind} classifier validation accuracy "
                f"{self.val_accuracy:.3f} below gate {self.gate:.2f}")

    def score(self, images):
        """Sigmoid scores in [0, 1] (binary classifiers)."""
        with torch.no_grad():
            return torch.sigmoid(
                self.model(_to_batch(images))).reshape(-1).numpy()

    def predict_proba(self, images):
        """Softmax class probabilities (n-way classifiers)."""
        with torch.no_grad():
            return torch.softmax(self.model(_to_batch(images)),
                                 dim=1).numpy()


def _to_batch(images):
    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(arr).permute(0, 3, 1, 2)


# ---------------------------------------------------------------------------
# Example samplers


def random_crop(img, h, w, rng):
    r = int(rng.integers(0, img.shape[0] - h + 1))
    c = int(rng.integers(0, img.shape[1] - w + 1))
    return img[r:r + h, c:c + w]


MAX_RESAMPLE = 64


def make_seam_examples(source_images, patch, n, rng, labels=None,
                       min_diff=0.25):
    """(positives, negatives) for the seam classifier, patch x patch.

    Positives concatenate two random textures at a random split; the
    pair must be visibly different (different labels when given, or a
    minimum mean pixel difference) so that every positive actually
    contains a seam.
    """
    pos, neg = [], []
    k = len(source_images)
    while len(pos) < n:
        for _ in range(MAX_RESAMPLE):
            i, j = int(rng.integers(0, k)), int(rng.integers(0, k))
            if labels is not None:
                if labels[i] == labels[j]:
                    continue
            a = random_crop(source_images[i], patch, patch, rng)
            b = random_crop(source_images[j], patch, patch, rng)
            if labels is None and np.abs(a - b).mean() < min_diff:
                continue
            break
        else:
            raise ValueError("could not sample a visibly different pair; "
                             "are all sources near-identical?")
        split = int(rng.integers(patch // 4, 3 * patch // 4 + 1))
        pos.append(np.concatenate([a[:, :split], b[:, split:]], axis=1))
        neg.append(random_crop(source_images[int(rng.integers(0, k))],
                               patch, patch, rng))
    return np.stack(pos), np.stack(neg)


def make_repetition_examples(source_images, patch, n, rng,
                             min_halves_diff=0.1):
    """(positives, negatives) for the repetition classifier.

    Positives tile a random patch-sized crop twice horizontally;
    negatives are plain double-width crops, resampled when they happen
    to be periodic themselves (procedural stripes can tile exactly).
    """
    pos, neg = [], []
    k = len(source_images)
    while len(pos) < n:
        img = source_images[int(rng.integers(0, k))]
        tile = random_crop(img, patch, patch, rng)
        pos.append(np.concatenate([tile, tile], axis=1))
        for _ in range(MAX_RESAMPLE):
            cand = random_crop(source_images[int(rng.integers(0, k))],
                               patch, 2 * patch, rng)
            halves = np.abs(cand[:, :patch] - cand[:, patch:]).mean()
            if halves > min_halves_diff:
                neg.append(cand)
                break
        else:
            raise ValueError("could not sample a non-repeating negative")
    return np.stack(pos), np.stack(neg)


def seam_example_sampler(source_images, patch, labels=None):
    def sample(n, rng):
        return make_seam_examples(source_images, patch, n, rng,
                                  labels=labels)

    return sample


def repetition_example_sampler(source_images, patch):
    def sample(n, rng):
        return make_repetition_examples(source_images, patch, n, rng)

    return sample


# ---------------------------------------------------------------------------
# Training


def _binary_val_accuracy(model, xs, ys):
    with torch.no_grad():
        pred = (model(_to_batch(xs)).reshape(-1) > 0).numpy().astype(int)
    return float((pred == ys).mean())


def train_binary_classifier(kind, example_sampler, gate=0.95, seed=0,
                            steps=1500, batch=8, max_rounds=3, lr=2e-3,
                            n_val=96):
    """Train a binary scorer on streamed examples until it clears its gate.

    The validation set is drawn once from a fixed seed; each training
    batch is freshly sampled. Returns a GatedClassifier; callers must
    check `.trusted` (or call `require_gate`) before reporting scores.
    """
    val_pos, val_neg = example_sampler(n_val,
                                       np.random.default_rng([seed, 7, 1]))
    xs_val = np.concatenate([val_pos, val_neg]).astype(np.float32)
    ys_val = np.concatenate([np.ones(len(val_pos)),
                             np.zeros(len(val_neg))]).astype(int)

    best = None
    for round_i in range(max_rounds):
        model = TextureClassifier(xs_val.shape[1:3], n_out=1,
                                  seed=seed + 101 * round_i)
        opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.0, 0.99))
        rng = np.random.default_rng([seed, round_i, 2])
        n_steps = steps * (round_i + 1)
        for step in range(n_steps):
            if step == int(n_steps * 0.7):
                for g in opt.param_groups:
                    g["lr"] = lr / 3
            bp, bn = example_sampler(batch, rng)
            xb = torch.from_numpy(
                np.concatenate([bp, bn]).astype(np.float32)) \
                .permute(0, 3, 1, 2)
            yb = torch.from_numpy(np.concatenate(
                [np.ones(len(bp)), np.zeros(len(bn))]).astype(np.float32))
            loss = F.binary_cross_entropy_with_logits(
                model(xb).reshape(-1), yb)
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        acc = _binary_val_accuracy(model, xs_val, ys_val)
        if best is None or acc > best.val_accuracy:
            best = GatedClassifier(model, acc, gate, kind)
        if best.val_accuracy >= gate:
            break
    return best


def train_family_classifier(source_images, labels, patch, gate=0.95,
                            seed=0, steps=1200, batch=16, max_rounds=3,
                            lr=2e-3, n_val=96):
    """N-way family classifier trained on streamed crops."""
    names = sorted(set(labels))
    y_of = {l: i for i, l in enumerate(names)}

    def sample(n, rng):
        xs, ys = [], []
        for _ in range(n):
            i = int(rng.integers(0, len(source_images)))
            xs.append(random_crop(source_images[i], patch, patch, rng))
            ys.append(y_of[labels[i]])
        return np.stack(xs), np.array(ys)

    xs_val, ys_val = sample(n_val, np.random.default_rng([seed, 7, 1]))

    best = None
    for round_i in range(max_rounds):
        model = TextureClassifier((patch, patch), n_out=len(names),
                                  seed=seed + 31 * round_i)
        opt = torch.optim.Adam(model.parameters(), lr=lr, betas=(0.0, 0.99))
        rng = np.random.default_rng([seed, round_i, 2])
        n_steps = steps * (round_i + 1)
        for step in range(n_steps):
            if step == int(n_steps * 0.7):
                for g in opt.param_groups:
                    g["lr"] = lr / 3
            xb, yb = sample(batch, rng)
            logits = model(torch.from_numpy(
                xb.astype(np.float32)).permute(0, 3, 1, 2))
            loss = F.cross_entropy(logits, torch.from_numpy(yb).long())
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        with torch.no_grad():
            pred = model(_to_batch(xs_val)).argmax(dim=1).numpy()
        acc = float((pred == ys_val).mean())
        if best is None or acc > best.val_accuracy:
            best = GatedClassifier(model, acc, gate, "family",
                                   class_names=names)
        if best.val_accuracy >= gate:
            break
    return best
