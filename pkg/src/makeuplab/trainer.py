"""Training loop: six generator passes per step, TTUR Adam optimizers,
tab-separated metrics log, binary checkpoints, ablation switches."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import alignment, checkpoint, imagecore, synthfaces
from .alignment import (CorrMatrix, FeatureExtractor, WarpedBundle, assemble_bundle,
                        correspondence, soften, unwarped_bundle)
from .critic import PatchCritic, hinge_d_loss, hinge_g_loss
from .errors import ConfigurationError, TrainingError
from .generator import Conditioning, FusionGenerator, build_layout
from .objectives import (LossWeights, PerceptualNet, corr_regularization, cycle_loss,
                         domain_loss, histogram_match, identity_loss, makeup_loss,
                         perceptual_loss, total_loss)
from .regionstyle import RegionNorm, StyleEncoder

LOSS_COLUMNS = ("domain", "perc", "corr", "makeup", "cycle", "adv", "id", "d_loss")


@dataclass
class TrainConfig:
    resolution: int = 64
    epochs: int = 8
    max_steps: int | None = None
    batch_size: int = 1
    beta1: float = 0.0
    beta2: float = 0.9
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    seed: int = 0
    sharpness: float = 100.0
    corr_mode: str = "transpose"
    layout: str = "1-2-2"
    weights: LossWeights = field(default_factory=LossWeights)
    no_sam: bool = False
    no_ram: bool = False
    no_identity: bool = False
    occluder_augment: bool = False
    partial_augment: bool = True
    checkpoint_interval: int = 100

    def __post_init__(self):
        if self.batch_size != 1:
            raise ConfigurationError("batch size is fixed to 1 (correspondence memory)")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ConfigurationError("learning rates must be positive")

    @property
    def corr_size(self) -> int:
        return self.resolution // 2

    def effective_weights(self) -> LossWeights:
        w = LossWeights(**asdict(self)["weights"])
        if self.no_identity:
            w.id = 0.0
        return w

    def snapshot(self) -> dict:
        return asdict(self)


def ablate(config: TrainConfig, flag: str) -> TrainConfig:
    """Return a copy of the config with one ablation switch enabled."""
    if flag not in ("no_sam", "no_ram", "no_identity"):
        raise ValueError(f"unknown ablation flag {flag!r}")
    data = asdict(config)
    data["weights"] = LossWeights(**data["weights"])
    data[flag] = True
    return TrainConfig(**data)


class Models(nn.Module):
    """All learnable modules plus the frozen perceptual network."""

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.feat_x = FeatureExtractor(in_channels=4)
        self.feat_y = FeatureExtractor(in_channels=3)
        self.style_enc = StyleEncoder(in_channels=self.feat_y.width)
        self.gen = FusionGenerator(build_layout(config.layout))
        self.critic_x = PatchCritic()
        self.critic_y = PatchCritic()
        self.perceptual = PerceptualNet(seed=config.seed)

    def generator_parameters(self):
        mods = [self.feat_x, self.feat_y, self.style_enc, self.gen]
        for m in mods:
            yield from m.parameters()

    def critic_parameters(self):
        for m in (self.critic_x, self.critic_y):
            yield from m.parameters()

    def region_norms(self) -> list[RegionNorm]:
        return [m for m in self.gen.modules() if isinstance(m, RegionNorm)]


def build_models(config: TrainConfig) -> Models:
    torch.manual_seed(config.seed)
    return Models(config)


@dataclass
class Sample:
    """One (image, label map) pair with cached tensors at working sizes."""

    image: np.ndarray
    labels: np.ndarray
    corr_size: int

    def __post_init__(self):
        self.image_t = torch.from_numpy(np.ascontiguousarray(self.image)).unsqueeze(0)
        self.onehot_t = torch.from_numpy(imagecore.one_hot(self.labels)).unsqueeze(0)
        self.masks_corr = alignment.masks_tensor(self.labels, self.corr_size)
        self.image_corr = F.interpolate(self.image_t, size=(self.corr_size, self.corr_size),
                                        mode="bilinear", align_corners=False).squeeze(0)


@dataclass
class GenOutput:
    out: torch.Tensor
    f_x: torch.Tensor
    f_y: torch.Tensor
    corr_raw: CorrMatrix | None
    bundle: WarpedBundle
    style_matrix: torch.Tensor
    conditioning: Conditioning


def restrict_conditioning(bundle: WarpedBundle, style_matrix: torch.Tensor,
                          keep_parts: tuple[int, ...]) -> tuple[WarpedBundle, torch.Tensor]:
    """Zero the conditioning for every region index not in ``keep_parts``.

    Mirrors partial composition at inference time: dropped regions contribute
    a zero warped mask, a zero style column, and nothing to the context image.
    """
    sel = bundle.warped_masks.new_zeros(3)
    sel[list(keep_parts)] = 1.0
    masks = bundle.warped_masks * sel.view(3, 1, 1)
    filtered = (masks.sum(dim=0, keepdim=True) * bundle.warped_image).clamp(-1.0, 1.0)
    restricted = WarpedBundle(warped_image=bundle.warped_image, warped_masks=masks,
                              filtered_image=filtered)
    return restricted, style_matrix * sel.view(1, 3)


# proper non-empty subsets of the three region indices (lip, skin, eyes)
PART_SUBSETS = ((0,), (1,), (2,), (0, 1), (0, 2), (1, 2))


def sample_kept_parts(seed: int, step: int, tag: int,
                      p_drop: float = 0.5) -> tuple[int, ...] | None:
    """With probability 1 - p_drop keep all parts (None); otherwise keep a
    random proper subset and drop the rest.

    Stateless: the draw depends only on (seed, step, tag), so training is
    reproducible and checkpoint resume replays the same augmentation schedule.
    """
    rng = np.random.default_rng((0x9E3779B9, seed, step, tag))
    if rng.random() >= p_drop:
        return None
    return PART_SUBSETS[int(rng.integers(len(PART_SUBSETS)))]


def partial_hm_target(hm: np.ndarray, src_image: np.ndarray, src_labels: np.ndarray,
                      keep_parts: tuple[int, ...] | None) -> np.ndarray:
    """Histogram-matched target for a pass with dropped part conditioning.

    Regions outside ``keep_parts`` revert to the source pixels: a partial
    transfer should leave unselected regions exactly as they were.
    """
    if keep_parts is None:
        return hm
    out = hm.copy()
    for i, region in enumerate(imagecore.REGIONS):
        if i in keep_parts:
            continue
        sel = src_labels == imagecore.REGION_LABELS[region]
        out[:, sel] = src_image[:, sel]
    return out


def generator_pass(models: Models, cfg: TrainConfig,
                   src_image_t: torch.Tensor, src_onehot_t: torch.Tensor,
                   ref: Sample, keep_parts: tuple[int, ...] | None = None) -> GenOutput:
    """One full source->reference transfer pass (SAM + RAM + MFM)."""
    f_x = models.feat_x(src_onehot_t)
    f_y = models.feat_y(ref.image_t)
    if cfg.no_sam:
        corr_raw = None
        bundle = unwarped_bundle(ref.image_corr, ref.masks_corr)
    else:
        corr_raw = correspondence(f_x, f_y)
        corr_soft = soften(corr_raw, cfg.sharpness)
        bundle = assemble_bundle(corr_soft, ref.image_corr, ref.masks_corr)
    style_matrix = models.style_enc(f_y, ref.masks_corr)
    if keep_parts is not None:
        bundle, style_matrix = restrict_conditioning(bundle, style_matrix, keep_parts)
    cond = Conditioning(style_matrix, bundle.warped_masks, bundle.filtered_image,
                        use_style=not cfg.no_ram)
    out = models.gen(src_image_t, cond)
    return GenOutput(out=out, f_x=f_x, f_y=f_y, corr_raw=corr_raw, bundle=bundle,
                     style_matrix=style_matrix, conditioning=cond)


@dataclass
class TrainState:
    models: Models
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    config: TrainConfig
    step: int = 0


def init_state(config: TrainConfig) -> TrainState:
    models = build_models(config)
    opt_g = torch.optim.Adam(list(models.generator_parameters()),
                             lr=config.lr_g, betas=(config.beta1, config.beta2))
    opt_d = torch.optim.Adam(list(models.critic_parameters()),
                             lr=config.lr_d, betas=(config.beta1, config.beta2))
    return TrainState(models=models, opt_g=opt_g, opt_d=opt_d, config=config)


def train_step(state: TrainState, x: Sample, y: Sample) -> dict[str, float]:
    """One optimizer step: critic first, then the generator side."""
    models, cfg = state.models, state.config
    weights = cfg.effective_weights()

    # With partial_augment some transfer passes randomly drop part
    # conditioning; their histogram-matching targets revert the dropped
    # regions to the source pixels, so the generator learns that regions
    # without conditioning stay untouched — the contract partial transfer
    # relies on at inference time.
    if cfg.partial_augment:
        keep_fwd = sample_kept_parts(cfg.seed, state.step, 2, p_drop=0.75)
        keep_rev = sample_kept_parts(cfg.seed, state.step, 3, p_drop=0.75)
    else:
        keep_fwd = keep_rev = None

    fwd = generator_pass(models, cfg, x.image_t, x.onehot_t, y,
                         keep_parts=keep_fwd)  # G(x, y)
    rev = generator_pass(models, cfg, y.image_t, y.onehot_t, x,
                         keep_parts=keep_rev)  # G(y, x)

    # critic update on both transfer directions, fakes detached
    d_loss = (hinge_d_loss(models.critic_y(y.image_t), models.critic_y(fwd.out.detach()))
              + hinge_d_loss(models.critic_x(x.image_t), models.critic_x(rev.out.detach())))
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()

    # cycle passes reuse the original source label maps
    cyc_x = generator_pass(models, cfg, fwd.out, x.onehot_t, x)   # G(G(x,y), x)
    cyc_y = generator_pass(models, cfg, rev.out, y.onehot_t, y)   # G(G(y,x), y)

    terms: dict[str, torch.Tensor] = {}
    terms["domain"] = domain_loss(fwd.f_x, fwd.f_y) + domain_loss(rev.f_x, rev.f_y)
    terms["perc"] = (perceptual_loss(fwd.out, x.image_t, models.perceptual)
                     + perceptual_loss(rev.out, y.image_t, models.perceptual))
    if cfg.no_sam:
        terms["corr"] = fwd.out.new_zeros(())
    else:
        terms["corr"] = (
            corr_regularization(fwd.corr_raw, fwd.bundle.warped_image, y.image_corr,
                                cfg.sharpness, cfg.corr_mode)
            + corr_regularization(rev.corr_raw, rev.bundle.warped_image, x.image_corr,
                                  cfg.sharpness, cfg.corr_mode))
    hm_xy = torch.from_numpy(partial_hm_target(
        histogram_match(x.image, y.image, x.labels, y.labels),
        x.image, x.labels, keep_fwd)).unsqueeze(0)
    hm_yx = torch.from_numpy(partial_hm_target(
        histogram_match(y.image, x.image, y.labels, x.labels),
        y.image, y.labels, keep_rev)).unsqueeze(0)
    terms["makeup"] = makeup_loss(fwd.out, rev.out, hm_xy, hm_yx)
    terms["cycle"] = cycle_loss(cyc_y.out, y.image_t, cyc_x.out, x.image_t)
    terms["adv"] = hinge_g_loss(models.critic_y(fwd.out)) + hinge_g_loss(models.critic_x(rev.out))
    if cfg.no_identity:
        terms["id"] = fwd.out.new_zeros(())
    else:
        # With partial_augment the self-transfer passes randomly drop part
        # conditioning while keeping the full-image target, so the generator
        # learns to reproduce the source wherever conditioning is absent —
        # the exact situation partial transfer creates at inference time.
        if cfg.partial_augment:
            keep_x = sample_kept_parts(cfg.seed, state.step, 0)
            keep_y = sample_kept_parts(cfg.seed, state.step, 1)
        else:
            keep_x = keep_y = None
        id_x = generator_pass(models, cfg, x.image_t, x.onehot_t, x,
                              keep_parts=keep_x)  # G(x, x)
        id_y = generator_pass(models, cfg, y.image_t, y.onehot_t, y,
                              keep_parts=keep_y)  # G(y, y)
        terms["id"] = identity_loss(id_x.out, x.image_t, id_y.out, y.image_t)

    g_total = total_loss([terms[k] for k in LossWeights.TERM_ORDER], weights)
    state.opt_g.zero_grad()
    state.opt_d.zero_grad()
    g_total.backward()
    state.opt_g.step()
    state.opt_d.zero_grad()  # discard critic grads picked up by the generator backward

    report = {name: float(terms[name].detach()) for name in LossWeights.TERM_ORDER}
    report["d_loss"] = float(d_loss.detach())
    report["total"] = float(g_total.detach())
    bad = [k for k, v in report.items() if not np.isfinite(v)]
    if bad:
        raise TrainingError(f"non-finite loss terms {bad}: {report}")
    state.step += 1
    return report


def apply_occluder(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Paste a gray rectangle covering at most 15% of the image."""
    _, h, w = image.shape
    area = rng.uniform(0.05, 0.15) * h * w
    rh = int(np.sqrt(area * rng.uniform(0.5, 2.0)))
    rh = max(1, min(h, rh))
    rw = max(1, min(w, int(area / rh)))
    top = rng.integers(0, h - rh + 1)
    left = rng.integers(0, w - rw + 1)
    out = image.copy()
    out[:, top:top + rh, left:left + rw] = 0.0  # mid gray in [-1,1]
    return out


def load_sample(manifest: synthfaces.Manifest, entry: synthfaces.ManifestEntry,
                cfg: TrainConfig) -> Sample:
    img = imagecore.load_image(os.path.join(manifest.root, entry.image_path), cfg.resolution)
    labels = imagecore.load_label_map(os.path.join(manifest.root, entry.mask_path))
    if labels.shape != (cfg.resolution, cfg.resolution):
        labels = imagecore.resize(labels, cfg.resolution, cfg.resolution, mode="nearest")
    return Sample(image=img, labels=labels, corr_size=cfg.corr_size)


def train(manifest: synthfaces.Manifest, config: TrainConfig, out_dir: str,
          log_callback=None) -> tuple[str, str]:
    """Train on the manifest's train split; returns (checkpoint_path, metrics_path)."""
    os.makedirs(out_dir, exist_ok=True)
    xs = manifest.by_domain("X")
    ys = manifest.by_domain("Y")
    xs_train = [e for i, e in enumerate(xs) if synthfaces.split_of(i, len(xs)) == "train"]
    ys_train = [e for i, e in enumerate(ys) if synthfaces.split_of(i, len(ys)) == "train"]
    if not xs_train or not ys_train:
        raise ConfigurationError("manifest must contain at least one train sample per domain")

    torch.manual_seed(config.seed)
    state = init_state(config)
    rng = np.random.default_rng(config.seed)
    occ_rng = np.random.default_rng(config.seed + 1)

    cache: dict[str, Sample] = {}

    def get(entry):
        if entry.sample_id not in cache:
            cache[entry.sample_id] = load_sample(manifest, entry, config)
        return cache[entry.sample_id]

    metrics_path = os.path.join(out_dir, "metrics.tsv")
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    n_per_epoch = max(len(xs_train), len(ys_train))
    total_steps = config.max_steps if config.max_steps is not None else config.epochs * n_per_epoch

    with open(metrics_path, "w", encoding="utf-8") as log:
        log.write("step\t" + "\t".join(LOSS_COLUMNS) + "\n")
        done = False
        while not done:
            xi = rng.permutation(len(xs_train))
            yi = rng.permutation(len(ys_train))
            for k in range(n_per_epoch):
                x = get(xs_train[xi[k % len(xs_train)]])
                y = get(ys_train[yi[k % len(ys_train)]])
                if config.occluder_augment:
                    y = Sample(image=apply_occluder(y.image, occ_rng), labels=y.labels,
                               corr_size=config.corr_size)
                report = train_step(state, x, y)
                log.write(str(state.step) + "\t"
                          + "\t".join(f"{report[c]:.6f}" for c in LOSS_COLUMNS) + "\n")
                if log_callback is not None:
                    log_callback(state.step, report)
                if config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
                    save_checkpoint(state, ckpt_path)
                if state.step >= total_steps:
                    done = True
                    break
    save_checkpoint(state, ckpt_path)
    return ckpt_path, metrics_path


def _optimizer_tensors(prefix: str, opt: torch.optim.Adam) -> tuple[dict[str, torch.Tensor], dict]:
    tensors: dict[str, torch.Tensor] = {}
    sd = opt.state_dict()
    meta_state: dict[str, list[str]] = {}
    for idx, entry in sd["state"].items():
        keys = []
        for key, value in entry.items():
            if isinstance(value, torch.Tensor):
                tensors[f"{prefix}.state.{idx}.{key}"] = value
                keys.append(key)
        meta_state[str(idx)] = keys
    return tensors, {"param_groups": sd["param_groups"], "state_keys": meta_state}


def _restore_optimizer(prefix: str, opt: torch.optim.Adam, tensors: dict[str, torch.Tensor],
                       meta: dict) -> None:
    state = {}
    for idx_str, keys in meta["state_keys"].items():
        idx = int(idx_str)
        state[idx] = {k: tensors[f"{prefix}.state.{idx}.{k}"] for k in keys}
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def save_checkpoint(state: TrainState, path: str) -> None:
    tensors = {f"models.{k}": v for k, v in state.models.state_dict().items()}
    g_tensors, g_meta = _optimizer_tensors("opt_g", state.opt_g)
    d_tensors, d_meta = _optimizer_tensors("opt_d", state.opt_d)
    tensors.update(g_tensors)
    tensors.update(d_tensors)
    meta = {
        "step": state.step,
        "config": state.config.snapshot(),
        "opt_g": g_meta,
        "opt_d": d_meta,
    }
    checkpoint.save(path, tensors, meta)


def config_from_snapshot(snapshot: dict) -> TrainConfig:
    data = dict(snapshot)
    data["weights"] = LossWeights(**data["weights"])
    return TrainConfig(**data)


def load_checkpoint(path: str) -> TrainState:
    tensors, meta = checkpoint.load(path)
    config = config_from_snapshot(meta["config"])
    state = init_state(config)
    model_sd = {k[len("models."):]: v for k, v in tensors.items() if k.startswith("models.")}
    state.models.load_state_dict(model_sd)
    _restore_optimizer("opt_g", state.opt_g, tensors, meta["opt_g"])
    _restore_optimizer("opt_d", state.opt_d, tensors, meta["opt_d"])
    state.step = meta["step"]
    return state
