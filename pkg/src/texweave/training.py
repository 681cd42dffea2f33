"""Two-task training loop: reconstruction and latent-space interpolation.

Each generator/encoder update encodes a pair of source patches, decodes
each back for the reconstruction losses, then tiles both local tensors
3x3, shuffles them with fresh independent plans, restores the originals
at the corner tiles, blends locals and globals with a spatially uniform
alpha ~ U[0,1], decodes the enlarged canvas, and applies the
alpha-weighted interpolation losses to a random input-sized crop. One
joint critic update (both critics, fresh batches) runs per four
generator updates. Growth follows the progressive schedule; all
randomness flows through named numpy streams that are checkpointed, so
a killed run resumes to bit-identical loss records.
"""

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .checkpoint import (CheckpointError, load_model_checkpoint,
                         save_model_checkpoint)
from .data import augment
from .features import default_extractor
from .latent import make_shuffle_plan
from .losses import LossWeights, gp_per_sample, gram_loss, gram_sq_distances, \
    pixel_loss
from .models import LATENT_FACTOR, ModelConfig, build_model

ABLATIONS = ("no_global", "no_blending", "no_shuffling")


class TrainingDiverged(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    steps: int = 2000             # generator/encoder updates (step schedule)
    batch_size: int = 8
    lr: float = 1e-3
    lr_final: float = 1.5e-3
    beta1: float = 0.0
    beta2: float = 0.99
    gen_per_critic: int = 4       # generator updates per critic update
    use_epoch_schedule: bool = False
    epochs_total: int = 20
    epochs_stabilize: int = 1
    epochs_transition: int = 3
    checkpoint_every: int = 500
    seed: int = 0
    ablation: str = None
    gamma_gp: float = 10.0
    tile_factor: int = 3
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; "
                             f"choose from {ABLATIONS}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.steps <= 0 or self.gen_per_critic <= 0:
            raise ValueError("steps and iteration ratios must be positive")

    def to_dict(self):
        return asdict(self)


def desk_train_config(seed=0, steps=2000):
    return TrainConfig(steps=steps, batch_size=8, seed=seed)


def full_train_config(seed=0):
    return TrainConfig(batch_size=64, use_epoch_schedule=True, seed=seed)


@dataclass
class Stage:
    resolution: int
    steps: int
    fade_in: bool  # transition stage: ramp fade 0 -> 1 across the stage
    name: str


def stage_plan(model_config, config, bank_size):
    """Expand the progressive-growing schedule into concrete stages."""
    if not config.use_epoch_schedule:
        return [Stage(model_config.start_resolution, config.steps, False,
                      "flat")]
    spe = max(1, math.ceil(bank_size / config.batch_size))
    stages = [Stage(model_config.start_resolution,
                    config.epochs_stabilize * spe, False, "stabilize")]
    used = config.epochs_stabilize
    res = model_config.start_resolution
    while res < model_config.patch_size:
        res *= 2
        stages.append(Stage(res, config.epochs_transition * spe, True,
                            "transition"))
        stages.append(Stage(res, config.epochs_stabilize * spe, False,
                            "stabilize"))
        used += config.epochs_transition + config.epochs_stabilize
    remaining = max(config.epochs_total - used, 0)
    if remaining:
        stages.append(Stage(res, remaining * spe, False, "final"))
    return stages


# ---------------------------------------------------------------------------
# torch-side latent ops (plan construction is shared with latent.py)


def tile_t(z, factor=3):
    return z.repeat(1, 1, factor, factor)


def apply_plan_t(z, plan):
    rp = torch.from_numpy(np.ascontiguousarray(plan.row_perm))
    cp = torch.from_numpy(np.ascontiguousarray(plan.col_perm))
    return z[:, :, rp][:, :, :, cp]


def corner_override_t(shuffled, original):
    h, w = original.shape[-2:]
    out = shuffled.clone()
    for r0 in (0, shuffled.shape[-2] - h):
        for c0 in (0, shuffled.shape[-1] - w):
            out[:, :, r0:r0 + h, c0:c0 + w] = original
    return out


def broadcast_vec(v, h, w):
    return v[:, :, None, None].expand(-1, -1, h, w)


# ---------------------------------------------------------------------------


def build_patch_bank(dataset, patch_size, seed):
    """Materialize the augmented patch set for one split, deterministically.

    Mirrors the offline augmentation protocol: a fixed number of
    augmented patches per source image, histogram-matched against
    random same-split references.
    """
    rng = np.random.default_rng([seed, 1])
    items = dataset.items
    bank = []
    labels = []
    for i, item in enumerate(items):
        img = item.load()
        for _ in range(dataset.augmentations_per_item):
            j = int(rng.integers(0, len(items)))
            child = int(rng.integers(0, 2**63 - 1))
            bank.append(augment(img, child, patch_size,
                                reference=items[j].load()))
            labels.append(item.label)
    return np.stack(bank).astype(np.float32), labels


class Trainer:
    def __init__(self, model_config, train_config, train_dataset, out_dir,
                 extractor=None):
        if train_config.ablation == "no_global":
            model_config = ModelConfig(**{**model_config.to_dict(),
                                          "use_global": False})
        self.model_config = model_config
        self.config = train_config
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.model = build_model(model_config)
        self.extractor = extractor or default_extractor()
        self.bank, _ = build_patch_bank(train_dataset,
                                        model_config.patch_size,
                                        train_config.seed)
        self.stages = stage_plan(model_config, train_config, len(self.bank))
        seq = np.random.SeedSequence(train_config.seed)
        kids = seq.spawn(4)
        self.rngs = {
            "data": np.random.default_rng(kids[0]),
            "shuffle": np.random.default_rng(kids[1]),
            "alpha": np.random.default_rng(kids[2]),
            "gp": np.random.default_rng(kids[3]),
        }
        self.step = 0
        self.records = []
        self._last_critic_losses = {}
        self._build_optimizers()

    # -- plumbing -----------------------------------------------------------

    def _build_optimizers(self):
        lr = self._current_lr()
        cfg = self.config
        self.opt_g = torch.optim.Adam(self.model.generator_parameters(),
                                      lr=lr, betas=(cfg.beta1, cfg.beta2))
        self.opt_c = torch.optim.Adam(self.model.critic_parameters(),
                                      lr=lr, betas=(cfg.beta1, cfg.beta2))

    def _current_lr(self):
        if self.model.resolution == self.model_config.patch_size:
            return self.config.lr_final
        return self.config.lr

    def _set_lr(self):
        lr = self._current_lr()
        for opt in (self.opt_g, self.opt_c):
            for group in opt.param_groups:
                group["lr"] = lr

    def _sample_batch(self, size=None):
        b = size or self.config.batch_size
        idx = self.rngs["data"].integers(0, len(self.bank), size=b)
        batch = torch.from_numpy(self.bank[idx]).permute(0, 3, 1, 2)
        res = self.model.resolution
        if res != self.model_config.patch_size:
            batch = torch.nn.functional.avg_pool2d(
                batch, self.model_config.patch_size // res)
        return batch

    def _encode(self, x):
        zl = self.model.encode_local(x)
        zg = self.model.encode_global(x) if self.model_config.use_global \
            else None
        return zl, zg

    def _decode(self, zl, zg):
        h, w = zl.shape[-2:]
        if zg is None:
            return self.model.generate(zl)
        return self.model.generate(
            torch.cat([zl, broadcast_vec(zg, h, w)], dim=1))

    def _shuffle_plans(self, latent_extent):
        factor = self.config.tile_factor
        h = latent_extent * factor
        plans = []
        for _ in range(2):
            seed = int(self.rngs["shuffle"].integers(0, 2**63 - 1))
            plans.append(make_shuffle_plan(h, h, seed,
                                           local_extent=latent_extent))
        if self.config.ablation == "no_shuffling":
            from .latent import identity_plan
            plans = [identity_plan(h, h), identity_plan(h, h)]
        return plans

    def _interp_branch(self, zl1, zg1, zl2, zg2, trace=None):
        """Tile, shuffle, corner-override, blend, decode, crop."""
        if self.config.ablation == "no_blending":
            zl2, zg2 = zl1, zg1
        b = zl1.shape[0]
        ext = zl1.shape[-1]
        factor = self.config.tile_factor
        plans = self._shuffle_plans(ext)
        p1 = corner_override_t(apply_plan_t(tile_t(zl1, factor), plans[0]),
                               zl1)
        p2 = corner_override_t(apply_plan_t(tile_t(zl2, factor), plans[1]),
                               zl2)
        alpha_np = self.rngs["alpha"].uniform(size=b).astype(np.float32)
        alpha = torch.from_numpy(alpha_np)
        a4 = alpha[:, None, None, None]
        z_local = a4 * p1 + (1.0 - a4) * p2
        if zg1 is not None:
            zg = alpha[:, None] * zg1 + (1.0 - alpha[:, None]) * zg2
            z = torch.cat([z_local,
                           broadcast_vec(zg, *z_local.shape[-2:])], dim=1)
        else:
            z = z_local
        canvas = self.model.generate(z)
        res = self.model.resolution
        max_off = canvas.shape[-1] - res
        offs = self.rngs["data"].integers(0, max_off + 1, size=(b, 2))
        crop = torch.stack([canvas[i, :, r:r + res, c:c + res]
                            for i, (r, c) in enumerate(offs)])
        if trace is not None:
            trace.update(plans=plans, alpha=alpha_np,
                         blended_second_source="s1"
                         if self.config.ablation == "no_blending" else "s2",
                         gen_in_channels=z.shape[1],
                         crop_offsets=offs)
        return crop, alpha

    # -- updates ------------------------------------------------------------

    def _set_critics_trainable(self, flag):
        for p in self.model.critic_parameters():
            p.requires_grad_(flag)

    def generator_step(self, trace=None):
        cfg = self.config
        w = cfg.weights
        s1 = self._sample_batch()
        s2 = self._sample_batch()
        self._set_critics_trainable(False)
        zl1, zg1 = self._encode(s1)
        zl2, zg2 = self._encode(s2)
        s1_hat = self._decode(zl1, zg1)
        s2_hat = self._decode(zl2, zg2)
        l_pix = pixel_loss(s1_hat, s1, s2_hat, s2)
        l_gram_rec = gram_loss(s1_hat, s1, self.extractor) \
            + gram_loss(s2_hat, s2, self.extractor)
        d_rec = lambda x: self.model.discriminate(x, "rec")
        d_itp = lambda x: self.model.discriminate(x, "itp")
        l_adv_rec = (d_rec(s1_hat) - d_rec(s1)).mean() \
            + (d_rec(s2_hat) - d_rec(s2)).mean()

        crop, alpha = self._interp_branch(zl1, zg1, zl2, zg2, trace)
        s2_itp = s1 if cfg.ablation == "no_blending" else s2
        l_gram_itp = (alpha * gram_sq_distances(crop, s1, self.extractor)
                      + (1 - alpha) * gram_sq_distances(crop, s2_itp,
                                                        self.extractor)).mean()
        l_adv_itp = (alpha * (d_itp(crop) - d_itp(s1))
                     + (1 - alpha) * (d_itp(crop) - d_itp(s2_itp))).mean()

        total = (w.pix_rec * l_pix + w.gram_rec * l_gram_rec
                 + w.adv_rec * l_adv_rec + w.gram_itp * l_gram_itp
                 + w.adv_itp * l_adv_itp)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        self._set_critics_trainable(True)

        record = {
            "step": self.step,
            "resolution": self.model.resolution,
            "fade": round(self.model.fade, 6),
            "lr": self._current_lr(),
            "total": float(total.detach()),
            "pix_rec": float(l_pix.detach()),
            "gram_rec": float(l_gram_rec.detach()),
            "adv_rec": float(l_adv_rec.detach()),
            "gram_itp": float(l_gram_itp.detach()),
            "adv_itp": float(l_adv_itp.detach()),
        }
        record.update(self._last_critic_losses)
        if not all(np.isfinite(v) for k, v in record.items()
                   if isinstance(v, float)):
            raise TrainingDiverged("non-finite loss", record)
        if trace is not None:
            trace["record"] = record
        return record

    def critic_step(self):
        cfg = self.config
        w = cfg.weights
        gamma = cfg.gamma_gp

        # reconstruction critic on a fresh batch
        s1 = self._sample_batch()
        s2 = self._sample_batch()
        with torch.no_grad():
            s1_hat = self._decode(*self._encode(s1))
            s2_hat = self._decode(*self._encode(s2))
        d_rec = lambda x: self.model.discriminate(x, "rec")
        u1 = torch.from_numpy(
            self.rngs["gp"].uniform(size=s1.shape[0]).astype(np.float32))
        u2 = torch.from_numpy(
            self.rngs["gp"].uniform(size=s1.shape[0]).astype(np.float32))
        loss_rec = -((d_rec(s1_hat) - d_rec(s1)).mean()
                     + (d_rec(s2_hat) - d_rec(s2)).mean()) \
            + gp_per_sample(s1_hat, s1, d_rec, u1, gamma).mean() \
            + gp_per_sample(s2_hat, s2, d_rec, u2, gamma).mean()

        # interpolation critic on another fresh batch
        t1 = self._sample_batch()
        t2 = self._sample_batch()
        with torch.no_grad():
            zl1, zg1 = self._encode(t1)
            zl2, zg2 = self._encode(t2)
            crop, alpha = self._interp_branch(zl1, zg1, zl2, zg2)
        t2_itp = t1 if cfg.ablation == "no_blending" else t2
        d_itp = lambda x: self.model.discriminate(x, "itp")
        u3 = torch.from_numpy(
            self.rngs["gp"].uniform(size=t1.shape[0]).astype(np.float32))
        u4 = torch.from_numpy(
            self.rngs["gp"].uniform(size=t1.shape[0]).astype(np.float32))
        loss_itp = -(alpha * (d_itp(crop) - d_itp(t1))
                     + (1 - alpha) * (d_itp(crop) - d_itp(t2_itp))).mean() \
            + (alpha * gp_per_sample(crop, t1, d_itp, u3, gamma)
               + (1 - alpha) * gp_per_sample(crop, t2_itp, d_itp, u4,
                                             gamma)).mean()

        total = w.adv_rec * loss_rec + w.adv_itp * loss_itp
        self.opt_c.zero_grad(set_to_none=True)
        total.backward()
        self.opt_c.step()
        self._last_critic_losses = {
            "critic_rec": float(loss_rec.detach()),
            "critic_itp": float(loss_itp.detach()),
        }
        return dict(self._last_critic_losses)

    # -- schedule -----------------------------------------------------------

    def run(self, log_path=None):
        """Execute the full stage schedule; returns the final checkpoint path.

        Writes one JSON line per generator step. A trainer restored via
        `Trainer.resume` continues mid-schedule and reproduces the
        exact step sequence of an uninterrupted run.
        """
        log_path = log_path or os.path.join(self.out_dir, "train_log.jsonl")
        log_f = open(log_path, "a")
        target = sum(s.steps for s in self.stages)
        try:
            done = 0
            for stage in self.stages:
                if stage.resolution > self.model.resolution:
                    self.model.grow(stage.resolution)
                    self._build_optimizers()
                for k in range(stage.steps):
                    if done + k < self.step:
                        continue  # already done before resume
                    if stage.fade_in:
                        self.model.fade = k / max(stage.steps - 1, 1)
                    else:
                        self.model.fade = 1.0
                    self._set_lr()
                    if self.step % self.config.gen_per_critic == 0:
                        self.critic_step()
                    record = self.generator_step()
                    record["stage"] = stage.name
                    self.records.append(record)
                    log_f.write(json.dumps(record) + "\n")
                    log_f.flush()
                    self.step += 1
                    if self.step % self.config.checkpoint_every == 0 \
                            and self.step < target:
                        self.save(self._ckpt_path(self.step))
                self.model.fade = 1.0
                done += stage.steps
            final = self._ckpt_path(self.step)
            self.save(final)
            return final
        finally:
            log_f.close()

    def _ckpt_path(self, step):
        return os.path.join(self.out_dir, f"step_{step}.ckpt")

    # -- persistence --------------------------------------------------------

    def save(self, path):
        opt_arrays = {}
        opt_meta = {}
        for tag, opt in (("optg", self.opt_g), ("optc", self.opt_c)):
            sd = opt.state_dict()
            steps = {}
            for idx, st in sd["state"].items():
                for key in ("exp_avg", "exp_avg_sq"):
                    opt_arrays[f"{tag}/{idx}/{key}"] = \
                        st[key].detach().cpu().numpy()
                steps[str(idx)] = float(st["step"])
            opt_meta[tag] = {"steps": steps,
                             "n_params": len(sd["param_groups"][0]["params"])}
        rng_states = {name: _rng_state_json(rng)
                      for name, rng in self.rngs.items()}
        train_meta = {
            "config": self.config.to_dict(),
            "optimizers": opt_meta,
        }
        save_model_checkpoint(path, self.model, step=self.step,
                              train_meta=train_meta,
                              optimizer_arrays=opt_arrays,
                              rng_states=rng_states)
        with open(os.path.join(self.out_dir, "latest"), "w") as f:
            f.write(os.path.basename(path))

    def _restore_optimizers(self, state):
        meta, arrays = state
        for tag, opt in (("optg", self.opt_g), ("optc", self.opt_c)):
            info = meta["train"]["optimizers"].get(tag)
            if not info:
                continue
            sd = opt.state_dict()
            new_state = {}
            for idx_s, step_v in info["steps"].items():
                idx = int(idx_s)
                new_state[idx] = {
                    "step": torch.tensor(step_v),
                    "exp_avg": torch.from_numpy(
                        np.ascontiguousarray(arrays[f"{tag}/{idx}/exp_avg"])),
                    "exp_avg_sq": torch.from_numpy(np.ascontiguousarray(
                        arrays[f"{tag}/{idx}/exp_avg_sq"])),
                }
            sd["state"] = new_state
            opt.load_state_dict(sd)

    @classmethod
    def resume(cls, ckpt_path, train_dataset, out_dir, extractor=None):
        """Restore a trainer mid-schedule from a checkpoint."""
        model, meta, arrays = load_model_checkpoint(ckpt_path)
        model_config = ModelConfig(**meta["config"])
        train_config = TrainConfig(**meta["train"]["config"])
        trainer = cls(model_config, train_config, train_dataset, out_dir,
                      extractor)
        trainer.model = model
        trainer._build_optimizers()
        trainer._restore_optimizers((meta, arrays))
        trainer.step = int(meta["step"])
        for name, st in meta["rng"].items():
            trainer.rngs[name] = _rng_from_state(st)
        return trainer


def _rng_state_json(rng):
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def _rng_from_state(state):
    rng = np.random.default_rng(0)
    st = dict(state)
    st["state"] = {k: int(v) for k, v in state["state"].items()}
    rng.bit_generator.state = st
    return rng


# ---------------------------------------------------------------------------
# Post-training report


def toy_convergence_check(bundle, heldout_patches, heldout_pairs,
                          extractor=None, seed=7):
    """Desk-scale health report for a trained (or untrained) model.

    Reports held-out reconstruction L1, the alpha=0.5 interpolation
    crop's Gram loss against both sources (with the sources' mutual
    Gram loss for scale), and the same Gram numbers for a naive 50/50
    pixel blend of the sources as a comparison point.
    """
    from .models import image_to_tensor

    extractor = extractor or default_extractor()
    recon_errs = []
    for patch in heldout_patches:
        rec = bundle.decode_pair(bundle.encode(patch))
        recon_errs.append(float(np.abs(rec - patch).mean()))

    gram_pair = lambda a, b: float(gram_loss(image_to_tensor(a),
                                             image_to_tensor(b), extractor))
    itp_a, itp_b, between, naive_a, naive_b = [], [], [], [], []
    rng = np.random.default_rng(seed)
    for pa, pb in heldout_pairs:
        crop = synthesize_blend_crop(bundle, pa, pb, 0.5,
                                     int(rng.integers(0, 2**31)))
        itp_a.append(gram_pair(crop, pa))
        itp_b.append(gram_pair(crop, pb))
        between.append(gram_pair(pa, pb))
        naive = 0.5 * pa + 0.5 * pb
        naive_a.append(gram_pair(naive, pa))
        naive_b.append(gram_pair(naive, pb))

    return {
        "recon_l1": float(np.mean(recon_errs)),
        "itp_gram_to_a": float(np.mean(itp_a)),
        "itp_gram_to_b": float(np.mean(itp_b)),
        "gram_between_sources": float(np.mean(between)),
        "naive_gram_to_a": float(np.mean(naive_a)),
        "naive_gram_to_b": float(np.mean(naive_b)),
    }


def synthesize_blend_crop(bundle, patch_a, patch_b, alpha, seed,
                          tile_factor=3):
    """Uniform-alpha synthesis through the full tile/shuffle/blend path,
    returning the center input-sized crop of the enlarged canvas."""
    from .latent import (LatentField, apply_shuffle, blend_global,
                         blend_local, corner_override, tile, uniform_weights)

    za = bundle.encode(patch_a)
    zb = bundle.encode(patch_b)
    ext = za.local.shape[0]
    h = ext * tile_factor
    plan_a = make_shuffle_plan(h, h, seed, local_extent=ext)
    plan_b = make_shuffle_plan(h, h, seed + 1, local_extent=ext)
    ta = corner_override(apply_shuffle(plan_a, tile(za.local, tile_factor)),
                         za.local)
    tb = corner_override(apply_shuffle(plan_b, tile(zb.local, tile_factor)),
                         zb.local)
    wf = uniform_weights(h, h, alpha)
    local = blend_local([ta, tb], wf)
    glob = blend_global([za.global_, zb.global_], wf)
    canvas = bundle.decode_field(LatentField(local, glob))
    p = bundle.patch_size
    off = (canvas.shape[0] - p) // 2
    return canvas[off:off + p, off:off + p]
