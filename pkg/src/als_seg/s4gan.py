"""Conditional-GAN semi-supervised segmentation trainer.

The generator is the segmentation network; an image-wise discriminator
scores image (+) mask channel stacks. The generator minimizes a three-part
loss (supervised cross-entropy, feature matching, gated self-training) and
the discriminator minimizes the negated two-sided GAN objective. Unlabeled
predictions that the discriminator scores at or above the confidence
threshold are kept as pseudo-labels and keep supervising later steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .networks import SEGMENTER_ARCHITECTURES, PairDiscriminator, build_segmenter
from .pool import IGNORE_INDEX, PixelMask, SegmentationDataset
from .seeding import derive_seed, derived_rng

# Discriminator outputs are clamped away from {0, 1} before logs.
D_CLAMP_EPS = 1e-7


@dataclass
class GanConfig:
    """Hyperparameters of the adversarial trainer."""

    lambda_fm: float = 0.1
    lambda_st: float = 1.0
    tau: float = 0.6
    iterations: int = 1000
    # Desk-scale default for the from-scratch compact generator; the
    # full-scale recipe (pretrained dilated backbone, SGD at
    # 2.5e-4) is reachable through config keys.
    gen_lr: float = 0.02
    gen_momentum: float = 0.9
    gen_weight_decay: float = 5e-4
    disc_lr: float = 1e-4
    batch_size: int = 8
    num_classes: int = 4
    crop_size: tuple[int, int] | None = None
    # Paper-gap knobs (defaults follow the documented decisions).
    fm_norm: str = "l2"
    ephemeral_st: bool = False
    seg_architecture: str = "compact"
    disc_base_channels: int = 8
    disc_dropout: float = 0.5
    checkpoint_every: int = 500
    poly_power: float | None = None
    # Self-training engages only after the discriminator has had time to
    # learn what real pairs look like; before that its confidences are
    # noise and accepted pseudo-labels poison the buffer.
    st_start_iteration: int = 150
    # Gradient-norm cap on both players; the feature-matching term can spike
    # when the discriminator saturates, and unclipped SGD+momentum diverges.
    grad_clip_norm: float | None = 5.0

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lambda_fm < 0 or self.lambda_st < 0:
            raise ValueError("loss weights must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.fm_norm not in ("l1", "l2"):
            raise ValueError(f"fm_norm must be 'l1' or 'l2', got {self.fm_norm!r}")
        if self.seg_architecture not in SEGMENTER_ARCHITECTURES:
            raise ValueError(f"unknown segmenter architecture {self.seg_architecture!r}")


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending components."""

    def __init__(self, message: str, components: dict[str, float]):
        super().__init__(message)
        self.components = components


@dataclass(frozen=True)
class Batch:
    """A slice of samples: ids, images (N,C,H,W); masks (N,H,W) when labeled."""

    ids: tuple[str, ...]
    images: torch.Tensor
    masks: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.ids)


def mask_to_tensor(mask) -> torch.Tensor:
    """PixelMask or integer array -> long tensor with IGNORE retained."""
    if isinstance(mask, PixelMask):
        mask = mask.classes
    if isinstance(mask, torch.Tensor):
        return mask.long()
    return torch.from_numpy(np.asarray(mask, dtype=np.int64))


def one_hot_concat(image: torch.Tensor, mask, num_classes: int) -> torch.Tensor:
    """Stack image channels with a one-hot mask; IGNORE pixels get all zeros.

    Accepts a single (C,H,W) image with (H,W) mask or a batch (N,C,H,W)
    with (N,H,W) masks.
    """
    mask_t = mask_to_tensor(mask)
    if image.shape[-2:] != mask_t.shape[-2:]:
        raise ValueError(
            f"image spatial dims {tuple(image.shape[-2:])} != mask dims {tuple(mask_t.shape[-2:])}"
        )
    batched = image.dim() == 4
    if not batched:
        image = image.unsqueeze(0)
        mask_t = mask_t.unsqueeze(0)
    scored = mask_t != IGNORE_INDEX
    safe = torch.where(scored, mask_t, torch.zeros_like(mask_t))
    one_hot = F.one_hot(safe, num_classes=num_classes).permute(0, 3, 1, 2)
    one_hot = one_hot.to(image.dtype) * scored.unsqueeze(1).to(image.dtype)
    out = torch.cat([image, one_hot], dim=1)
    return out if batched else out.squeeze(0)


def cross_entropy_loss(pred: torch.Tensor, mask) -> torch.Tensor:
    """-mean ln pred[true class] over scored pixels of a probability map.

    `pred` is (K,H,W) or (N,K,H,W) with per-pixel class probabilities.
    """
    mask_t = mask_to_tensor(mask)
    if pred.dim() == 3:
        pred = pred.unsqueeze(0)
        mask_t = mask_t.unsqueeze(0)
    if pred.shape[-2:] != mask_t.shape[-2:] or pred.shape[0] != mask_t.shape[0]:
        raise ValueError(
            f"prediction shape {tuple(pred.shape)} incompatible with mask {tuple(mask_t.shape)}"
        )
    scored = mask_t != IGNORE_INDEX
    if not bool(scored.any()):
        raise ValueError("all pixels are IGNORE; cross-entropy is undefined")
    safe = torch.where(scored, mask_t, torch.zeros_like(mask_t))
    picked = pred.gather(1, safe.unsqueeze(1)).squeeze(1)
    log_p = torch.log(picked.clamp_min(torch.finfo(pred.dtype).tiny))
    return -(log_p[scored]).mean()


def feature_matching_loss(disc, labeled_batch, unlabeled_batch, seg, norm: str = "l2"):
    """Distance between mean discriminator features of real and generated pairs.

    labeled_batch is (images, masks); unlabeled_batch is images only. The
    training loop freezes the discriminator's parameters while this term is
    minimized, so gradients reach the segmentation network alone.
    """
    x_l, y_l = labeled_batch
    x_u = unlabeled_batch
    if x_l.shape[0] == 0 or x_u.shape[0] == 0:
        raise ValueError("feature matching needs non-empty labeled and unlabeled batches")
    num_classes = _probe_num_classes(seg, disc, x_l)
    _, feat_real = disc(one_hot_concat(x_l, y_l, num_classes))
    probs_u = seg(x_u)
    _, feat_fake = disc(torch.cat([x_u, probs_u], dim=1))
    return _feature_distance(feat_real.mean(dim=0), feat_fake.mean(dim=0), norm)


def _probe_num_classes(seg, disc, x) -> int:
    if hasattr(seg, "num_classes"):
        return seg.num_classes
    with torch.no_grad():
        return seg(x[:1]).shape[1]


def _feature_distance(mean_real: torch.Tensor, mean_fake: torch.Tensor, norm: str):
    diff = mean_real - mean_fake
    if norm == "l2":
        return torch.linalg.vector_norm(diff)
    if norm == "l1":
        return diff.abs().sum()
    raise ValueError(f"unknown norm {norm!r}")


def self_training_loss(seg_probs: torch.Tensor, d_conf, tau: float) -> torch.Tensor:
    """Gated self-supervision: CE against the map's own argmax when the
    discriminator confidence reaches tau, exactly zero otherwise.

    No gradient flows through the pseudo-label (the argmax is detached).
    """
    if float(d_conf) >= tau:
        pseudo = seg_probs.argmax(dim=-3).detach()
        return cross_entropy_loss(seg_probs, pseudo)
    return seg_probs.new_zeros(())


def _as_float(value) -> float:
    if isinstance(value, torch.Tensor):
        return float(value.detach())
    return float(value)


def generator_loss(ce, fm, st, lambda_fm: float, lambda_st: float):
    """Weighted sum of the three generator loss components."""
    for name, value in (("ce", ce), ("fm", fm), ("st", st)):
        if not math.isfinite(_as_float(value)):
            raise ValueError(f"generator loss component {name} is not finite: {value}")
    return ce + lambda_fm * fm + lambda_st * st


def discriminator_loss(disc, labeled_batch, unlabeled_batch, seg):
    """Negated two-sided GAN objective, clamped away from log(0).

    The generator's output is treated as constant (detached); minimizing
    this trains the discriminator to score real pairs high and generated
    pairs low.
    """
    x_l, y_l = labeled_batch
    x_u = unlabeled_batch
    if x_l.shape[0] == 0 or x_u.shape[0] == 0:
        raise ValueError("discriminator loss needs non-empty labeled and unlabeled batches")
    num_classes = _probe_num_classes(seg, disc, x_l)
    conf_real, _ = disc(one_hot_concat(x_l, y_l, num_classes))
    with torch.no_grad():
        probs_u = seg(x_u)
    conf_fake, _ = disc(torch.cat([x_u, probs_u], dim=1))
    return _disc_loss_from_confidences(conf_real, conf_fake)


def _disc_loss_from_confidences(conf_real, conf_fake=None):
    real_term = torch.log(conf_real.clamp(D_CLAMP_EPS, 1.0 - D_CLAMP_EPS)).mean()
    if conf_fake is None:
        return -real_term
    fake_term = torch.log((1.0 - conf_fake).clamp(D_CLAMP_EPS, 1.0 - D_CLAMP_EPS)).mean()
    return -(real_term + fake_term)


class PseudoLabelBuffer:
    """Accepted pseudo-labels keyed by sample id.

    Every stored entry carries the discriminator confidence it was accepted
    at, which is always >= tau. Re-acceptance overwrites an entry only when
    the new prediction is at least as confident.
    """

    def __init__(self, tau: float):
        self.tau = tau
        self._entries: dict[str, tuple[np.ndarray, float]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._entries

    def insert(self, sample_id: str, mask: np.ndarray, confidence: float) -> bool:
        """Store/overwrite an accepted mask; returns True when stored."""
        if confidence < self.tau:
            raise ValueError(
                f"confidence {confidence} below threshold {self.tau}; gate must reject first"
            )
        if sample_id in self._entries and self._entries[sample_id][1] > confidence:
            return False
        self._entries[sample_id] = (np.asarray(mask, dtype=np.int64), float(confidence))
        return True

    def mask(self, sample_id: str) -> np.ndarray:
        return self._entries[sample_id][0]

    def confidence(self, sample_id: str) -> float:
        return self._entries[sample_id][1]

    def items(self):
        return sorted(self._entries.items())

    def state(self) -> list[tuple[str, np.ndarray, float]]:
        return [(sid, mask, conf) for sid, (mask, conf) in self.items()]

    @classmethod
    def from_state(cls, tau: float, state) -> "PseudoLabelBuffer":
        buf = cls(tau)
        for sid, mask, conf in state:
            buf.insert(sid, mask, conf)
        return buf


@dataclass(frozen=True)
class StepMetrics:
    l_ce: float
    l_fm: float
    l_st: float
    l_d: float
    buffer_size: int
    accepted: tuple[tuple[str, float], ...]  # (sample id, confidence) inserted this step


def _check_finite(components: dict[str, float]) -> None:
    bad = {k: v for k, v in components.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(f"non-finite loss components: {bad}", components)


def train_step(
    seg,
    disc,
    labeled: Batch,
    unlabeled: Batch,
    config: GanConfig,
    buffer: PseudoLabelBuffer,
    gen_opt: torch.optim.Optimizer,
    disc_opt: torch.optim.Optimizer,
    st_enabled: bool = True,
) -> StepMetrics:
    """One generator update then one discriminator update.

    Unlabeled predictions whose discriminator confidence clears tau are
    written into the pseudo-label buffer; buffered masks keep supervising
    their sample through the self-training term in later steps (unless
    ephemeral_st is set). `st_enabled=False` holds the self-training gate
    shut regardless of confidence (warm-up phase).
    """
    if len(labeled) == 0:
        raise ValueError("train step needs at least one labeled sample")

    seg.train()
    disc.train()

    # ----- generator update (discriminator held constant) -----
    for p in disc.parameters():
        p.requires_grad_(False)

    probs_l = seg(labeled.images)
    l_ce = cross_entropy_loss(probs_l, labeled.masks)

    accepted: list[tuple[str, float]] = []
    pending: list[tuple[str, np.ndarray, float]] = []
    probs_u = None
    if len(unlabeled) > 0:
        probs_u = seg(unlabeled.images)
        conf_fake, feat_fake = disc(torch.cat([unlabeled.images, probs_u], dim=1))
        _, feat_real = disc(one_hot_concat(labeled.images, labeled.masks, config.num_classes))
        l_fm = _feature_distance(feat_real.mean(dim=0), feat_fake.mean(dim=0), config.fm_norm)

        st_terms = []
        if st_enabled:
            for i, sample_id in enumerate(unlabeled.ids):
                conf = float(conf_fake[i].detach())
                if conf >= config.tau:
                    st_terms.append(self_training_loss(probs_u[i], conf, config.tau))
                    pseudo = probs_u[i].argmax(dim=0).detach().numpy().astype(np.int64)
                    pending.append((sample_id, pseudo, conf))
                elif not config.ephemeral_st and sample_id in buffer:
                    st_terms.append(cross_entropy_loss(probs_u[i], buffer.mask(sample_id)))
        l_st = torch.stack(st_terms).mean() if st_terms else probs_l.new_zeros(())
    else:
        l_fm = probs_l.new_zeros(())
        l_st = probs_l.new_zeros(())

    _check_finite(
        {"l_ce": _as_float(l_ce), "l_fm": _as_float(l_fm), "l_st": _as_float(l_st)}
    )
    l_s = generator_loss(l_ce, l_fm, l_st, config.lambda_fm, config.lambda_st)
    _check_finite({"l_s": _as_float(l_s)})
    gen_opt.zero_grad()
    l_s.backward()
    if config.grad_clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(seg.parameters(), config.grad_clip_norm)
    gen_opt.step()

    for p in disc.parameters():
        p.requires_grad_(True)

    if not config.ephemeral_st:
        for sample_id, pseudo, conf in pending:
            if buffer.insert(sample_id, pseudo, conf):
                accepted.append((sample_id, conf))

    # ----- discriminator update (generator output held constant) -----
    conf_real, _ = disc(one_hot_concat(labeled.images, labeled.masks, config.num_classes))
    if probs_u is not None:
        conf_fake2, _ = disc(torch.cat([unlabeled.images, probs_u.detach()], dim=1))
        l_d = _disc_loss_from_confidences(conf_real, conf_fake2)
    else:
        l_d = _disc_loss_from_confidences(conf_real)
    _check_finite({"l_d": _as_float(l_d)})
    disc_opt.zero_grad()
    l_d.backward()
    if config.grad_clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(disc.parameters(), config.grad_clip_norm)
    disc_opt.step()

    return StepMetrics(
        l_ce=_as_float(l_ce),
        l_fm=_as_float(l_fm),
        l_st=_as_float(l_st),
        l_d=_as_float(l_d),
        buffer_size=len(buffer),
        accepted=tuple(accepted),
    )


def build_models(config: GanConfig, in_channels: int, seed: int):
    """Seeded construction of the segmentation network + discriminator."""
    torch.manual_seed(derive_seed(seed, "gan-init"))
    seg = build_segmenter(config.seg_architecture, in_channels, config.num_classes)
    disc = PairDiscriminator(
        in_channels + config.num_classes,
        base_channels=config.disc_base_channels,
        dropout=config.disc_dropout,
    )
    return seg, disc


def _prepare_tensors(dataset: SegmentationDataset, ids, crop_size, with_masks: bool):
    """Preload samples as stacked tensors, resizing when crop_size differs."""
    images = []
    masks = []
    for sample_id in ids:
        arr = dataset.load_image(sample_id)
        img = torch.from_numpy(arr.astype(np.float32)).permute(2, 0, 1)
        if crop_size is not None and tuple(img.shape[-2:]) != tuple(crop_size):
            img = F.interpolate(
                img.unsqueeze(0), size=tuple(crop_size), mode="bilinear", align_corners=False
            ).squeeze(0)
        images.append(img)
        if with_masks:
            mask = dataset.load_mask(sample_id)
            mt = mask_to_tensor(mask)
            if crop_size is not None and tuple(mt.shape[-2:]) != tuple(crop_size):
                mt = (
                    F.interpolate(
                        mt.unsqueeze(0).unsqueeze(0).float(), size=tuple(crop_size), mode="nearest"
                    )
                    .squeeze(0)
                    .squeeze(0)
                    .long()
                )
            masks.append(mt)
    stacked_images = torch.stack(images)
    stacked_masks = torch.stack(masks) if with_masks else None
    return stacked_images, stacked_masks


class _CycledSampler:
    """Epoch-shuffled cycling batch indices, a pure function of (seed, step)."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.seed = seed
        self._perms: dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            self._perms[epoch] = derived_rng(self.seed, "epoch", epoch).permutation(self.n)
            if len(self._perms) > 4:  # keep the cache tiny
                for key in sorted(self._perms)[:-2]:
                    del self._perms[key]
        return self._perms[epoch]

    def batch(self, step: int) -> np.ndarray:
        start = step * self.batch_size
        picks = []
        for offset in range(start, start + self.batch_size):
            epoch, pos = divmod(offset, self.n)
            picks.append(self._perm(epoch)[pos])
        return np.asarray(picks)


def save_checkpoint(
    path,
    iteration: int,
    seg,
    disc,
    gen_opt,
    disc_opt,
    buffer: PseudoLabelBuffer,
    config: GanConfig,
    seed: int,
    config_hash: str,
    in_channels: int,
) -> None:
    path = Path(path)
    payload = {
        "iteration": iteration,
        "seg_state": seg.state_dict(),
        "disc_state": disc.state_dict(),
        "gen_opt_state": gen_opt.state_dict(),
        "disc_opt_state": disc_opt.state_dict(),
        "buffer_state": buffer.state(),
        "torch_rng_state": torch.get_rng_state(),
        "num_classes": config.num_classes,
        "in_channels": in_channels,
        "seg_architecture": config.seg_architecture,
        "disc_base_channels": config.disc_base_channels,
        "disc_dropout": config.disc_dropout,
        "seed": seed,
        "config_hash": config_hash,
    }
    torch.save(payload, path)
    sidecar = path.with_suffix(path.suffix + ".txt")
    sidecar.write_text(
        f"iteration={iteration}\nseed={seed}\nconfig_hash={config_hash}\n", encoding="utf-8"
    )


def load_checkpoint(path) -> dict:
    return torch.load(Path(path), map_location="cpu", weights_only=False)


def models_from_checkpoint(payload: dict):
    seg = build_segmenter(
        payload["seg_architecture"], payload["in_channels"], payload["num_classes"]
    )
    seg.load_state_dict(payload["seg_state"])
    disc = PairDiscriminator(
        payload["in_channels"] + payload["num_classes"],
        base_channels=payload["disc_base_channels"],
        dropout=payload["disc_dropout"],
    )
    disc.load_state_dict(payload["disc_state"])
    return seg, disc


def format_log_row(iteration: int, metrics: StepMetrics) -> str:
    # str(float) round-trips exactly, so identical rows mean identical values.
    return (
        f"{iteration}\t{metrics.l_ce}\t{metrics.l_fm}\t{metrics.l_st}"
        f"\t{metrics.l_d}\t{metrics.buffer_size}"
    )


def run_training(
    seg,
    disc,
    manifest_ids,
    dataset: SegmentationDataset,
    config: GanConfig,
    seed: int,
    out_dir,
    unlabeled_ids=None,
    log_path=None,
    resume_payload: dict | None = None,
    config_hash: str = "",
):
    """Train for config.iterations steps; returns (seg, rows written now).

    Labeled pairs come from the manifest ids (all must carry pixel masks);
    the unlabeled pool defaults to every other dataset id. Checkpoints land
    under out_dir/checkpoints, the loss log appends to out_dir/train_log.tsv.
    """
    manifest_ids = list(manifest_ids)
    if not manifest_ids:
        raise ValueError("manifest is empty; nothing to train on")
    missing = [sid for sid in manifest_ids if not dataset.has_mask(sid)]
    if missing:
        raise ValueError(f"manifest ids without pixel masks: {missing}")

    if unlabeled_ids is None:
        unlabeled_ids = [sid for sid in dataset.ids if sid not in set(manifest_ids)]
    unlabeled_ids = sorted(unlabeled_ids)

    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path is not None else out_dir / "train_log.tsv"

    x_l, y_l = _prepare_tensors(dataset, manifest_ids, config.crop_size, with_masks=True)
    x_u, _ = (
        _prepare_tensors(dataset, unlabeled_ids, config.crop_size, with_masks=False)
        if unlabeled_ids
        else (torch.zeros((0,) + tuple(x_l.shape[1:])), None)
    )

    gen_opt = torch.optim.SGD(
        seg.parameters(),
        lr=config.gen_lr,
        momentum=config.gen_momentum,
        weight_decay=config.gen_weight_decay,
    )
    disc_opt = torch.optim.Adam(disc.parameters(), lr=config.disc_lr)

    start_iteration = 0
    if resume_payload is not None:
        seg.load_state_dict(resume_payload["seg_state"])
        disc.load_state_dict(resume_payload["disc_state"])
        gen_opt.load_state_dict(resume_payload["gen_opt_state"])
        disc_opt.load_state_dict(resume_payload["disc_opt_state"])
        buffer = PseudoLabelBuffer.from_state(config.tau, resume_payload["buffer_state"])
        torch.set_rng_state(resume_payload["torch_rng_state"])
        start_iteration = int(resume_payload["iteration"])
    else:
        buffer = PseudoLabelBuffer(config.tau)
        torch.manual_seed(derive_seed(seed, "train-loop"))

    labeled_sampler = _CycledSampler(len(manifest_ids), config.batch_size, derive_seed(seed, "labeled"))
    unlabeled_sampler = (
        _CycledSampler(len(unlabeled_ids), config.batch_size, derive_seed(seed, "unlabeled"))
        if unlabeled_ids
        else None
    )

    rows: list[str] = []
    with open(log_path, "a", encoding="utf-8") as log:
        for iteration in range(start_iteration + 1, config.iterations + 1):
            if config.poly_power is not None:
                scale = (1.0 - (iteration - 1) / config.iterations) ** config.poly_power
                for group in gen_opt.param_groups:
                    group["lr"] = config.gen_lr * scale
                for group in disc_opt.param_groups:
                    group["lr"] = config.disc_lr * scale

            idx_l = labeled_sampler.batch(iteration - 1)
            labeled = Batch(
                ids=tuple(manifest_ids[i] for i in idx_l),
                images=x_l[torch.from_numpy(idx_l)],
                masks=y_l[torch.from_numpy(idx_l)],
            )
            if unlabeled_sampler is not None:
                idx_u = unlabeled_sampler.batch(iteration - 1)
                unlabeled = Batch(
                    ids=tuple(unlabeled_ids[i] for i in idx_u),
                    images=x_u[torch.from_numpy(idx_u)],
                )
            else:
                unlabeled = Batch(ids=(), images=x_u[:0])

            try:
                metrics = train_step(
                    seg, disc, labeled, unlabeled, config, buffer, gen_opt, disc_opt,
                    st_enabled=iteration > config.st_start_iteration,
                )
            except TrainingDiverged:
                dump = out_dir / f"diverged_step_{iteration:06d}.pt"
                save_checkpoint(
                    dump, iteration, seg, disc, gen_opt, disc_opt, buffer,
                    config, seed, config_hash, x_l.shape[1],
                )
                raise

            row = format_log_row(iteration, metrics)
            rows.append(row)
            log.write(row + "\n")
            for sample_id, conf in metrics.accepted:
                log.write(f"# accept\t{iteration}\t{sample_id}\t{conf}\n")

            if iteration % config.checkpoint_every == 0 or iteration == config.iterations:
                save_checkpoint(
                    ckpt_dir / f"step_{iteration:06d}.pt",
                    iteration, seg, disc, gen_opt, disc_opt, buffer,
                    config, seed, config_hash, x_l.shape[1],
                )

    return seg, rows
