"""Adversarial + L1 training loop, learning-rate schedule and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from rgb2hsi.dataset import PatchSet
from rgb2hsi.rng import get_state, set_state, stream
from rgb2hsi.ssrgan import (
    INFERENCE,
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    build_discriminator,
    build_generator,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rgb2hsi-checkpoint/1"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    lambda_l1: float = 100.0
    epochs: int = 50
    lr_start: float = 2e-3
    lr_end: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 4
    seed: int = 0
    aux_loss: str = "l1"
    schedule: str = "linear"
    dtype: str = "float32"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.lambda_l1 < 0:
            raise ValueError("lambda_l1 must be >= 0")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError(f"need 0 < lr_end <= lr_start, got {self.lr_end}, {self.lr_start}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.aux_loss not in ("l1", "l2"):
            raise ValueError(f"aux_loss must be 'l1' or 'l2', got {self.aux_loss!r}")
        if self.schedule not in ("linear", "step"):
            raise ValueError(f"schedule must be 'linear' or 'step', got {self.schedule!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        # one seed drives every stream of a run
        object.__setattr__(self, "generator", replace(self.generator, seed=self.seed))
        object.__setattr__(self, "discriminator", replace(self.discriminator, seed=self.seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["generator"] = self.generator.to_dict()
        d["discriminator"] = self.discriminator.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        d = dict(d)
        if isinstance(d.get("generator"), dict):
            d["generator"] = GeneratorConfig.from_dict(d["generator"])
        if isinstance(d.get("discriminator"), dict):
            d["discriminator"] = DiscriminatorConfig.from_dict(d["discriminator"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    d_loss: float
    g_adv: float
    g_aux: float
    g_total: float


# ---------------------------------------------------------------------- losses


def _check_finite(*tensors: torch.Tensor) -> None:
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError("loss inputs must be finite")


def discriminator_loss(score_real, score_fake) -> torch.Tensor:
    """Half the sum of logit BCE against 1 (real) and 0 (fake), averaged over cells."""
    real = torch.as_tensor(score_real).double()
    fake = torch.as_tensor(score_fake).double()
    _check_finite(real, fake)
    return 0.5 * (
        F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
        + F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake))
    )


def generator_loss(score_fake, fake, target, lambda_l1: float = 100.0, aux: str = "l1"):
    """Return ``(g_adv, g_aux, g_total)`` with ``g_total = g_adv + lambda_l1 * g_aux``."""
    s = torch.as_tensor(score_fake).double()
    f = torch.as_tensor(fake).double()
    t = torch.as_tensor(target).double()
    if f.shape != t.shape:
        raise ValueError(f"prediction {tuple(f.shape)} and target {tuple(t.shape)} differ in shape")
    _check_finite(s, f, t)
    g_adv = F.binary_cross_entropy_with_logits(s, torch.ones_like(s))
    if aux == "l1":
        g_aux = (f - t).abs().mean()
    elif aux == "l2":
        g_aux = ((f - t) ** 2).mean()
    else:
        raise ValueError(f"unknown aux loss {aux!r}")
    return g_adv, g_aux, g_adv + lambda_l1 * g_aux


def lr_at(epoch: int, config: TrainingConfig) -> float:
    """Constant ``lr_start`` for the first half, then linear decay to ``lr_end`` at the last epoch."""
    n = config.epochs
    if not 0 <= epoch < n:
        raise ValueError(f"epoch {epoch} outside [0, {n})")
    half = n / 2
    if epoch < half:
        return config.lr_start
    if config.schedule == "step":
        return config.lr_end
    span = (n - 1) - half
    t = 1.0 if span <= 0 else (epoch - half) / span
    if epoch == n - 1:
        t = 1.0
    # convex form keeps both endpoints exact in floating point
    return (1.0 - t) * config.lr_start + t * config.lr_end


# ------------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict[str, np.ndarray]


@dataclass
class TrainState:
    config: TrainingConfig
    generator: Generator
    discriminator: Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    epoch: int = 0
    step: int = 0
    history: list[LossRecord] = field(default_factory=list)


def _adam(params, config: TrainingConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.lr_start, betas=config.betas, eps=config.eps, foreach=False)


def new_state(config: TrainingConfig) -> TrainState:
    g = build_generator(config.generator)
    d = build_discriminator(config.discriminator)
    if config.dtype == "float64":
        g.double()
        d.double()
    return TrainState(config, g, d, _adam(g.parameters(), config), _adam(d.parameters(), config))


def _optimizer_tensors(prefix: str, module: torch.nn.Module, opt: torch.optim.Adam, tensors: dict, steps: dict) -> None:
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        steps[name] = float(st["step"])
        tensors[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().cpu().numpy()
        tensors[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()


def snapshot(state: TrainState) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    for prefix, module in (("generator", state.generator), ("discriminator", state.discriminator)):
        for name, t in module.state_dict().items():
            tensors[f"{prefix}/{name}"] = t.detach().cpu().numpy()
    steps_g: dict[str, float] = {}
    steps_d: dict[str, float] = {}
    _optimizer_tensors("adam_generator", state.generator, state.opt_g, tensors, steps_g)
    _optimizer_tensors("adam_discriminator", state.discriminator, state.opt_d, tensors, steps_d)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "epoch": state.epoch,
        "step": state.step,
        "lambda_l1": state.config.lambda_l1,
        "training": state.config.to_dict(),
        "rng": {"generator_dropout": get_state(state.generator.dropout_rng)},
        "adam_steps": {"generator": steps_g, "discriminator": steps_d},
        "history": [asdict(r) for r in state.history],
    }
    return Checkpoint(manifest=manifest, tensors=tensors)


def save_checkpoint(ckpt: Checkpoint, directory: str | os.PathLike) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, arr in ckpt.tensors.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(buf)
        offset += len(buf)
    manifest = dict(ckpt.manifest)
    manifest.update({"dtype": "float32", "byte_order": "little-endian", "payload_bytes": offset, "entries": entries})
    (d / "params.bin").write_bytes(b"".join(chunks))
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return d


def load_checkpoint(directory: str | os.PathLike) -> Checkpoint:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
        payload = (d / "params.bin").read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{d}: cannot read checkpoint ({exc.strerror})") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{d}: unknown checkpoint format {manifest.get('format')!r}")
    entries = manifest.pop("entries")
    expected = sum(4 * e["count"] for e in entries)
    if len(payload) != expected or manifest.get("payload_bytes") != expected:
        raise CheckpointError(f"{d}: params.bin holds {len(payload)} bytes, manifest declares {expected}")
    tensors = {}
    for e in entries:
        if e["count"] != int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"{d}: entry {e['name']} shape {e['shape']} disagrees with count {e['count']}")
        arr = np.frombuffer(payload, dtype="<f4", count=e["count"], offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).copy()
    for key in ("dtype", "byte_order", "payload_bytes"):
        manifest.pop(key, None)
    return Checkpoint(manifest=manifest, tensors=tensors)


def _load_module(prefix: str, module: torch.nn.Module, tensors: dict) -> None:
    sd = module.state_dict()
    for name, ref in sd.items():
        key = f"{prefix}/{name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint lacks {key}")
        arr = tensors[key]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"{key}: shape {arr.shape} but model expects {tuple(ref.shape)}")
        sd[name] = torch.from_numpy(arr).to(ref.dtype)
    module.load_state_dict(sd)


def _load_adam(prefix: str, module, opt, tensors: dict, steps: dict) -> None:
    for name, p in module.named_parameters():
        if name not in steps:
            continue
        opt.state[p] = {
            "step": torch.tensor(steps[name], dtype=torch.float32),
            "exp_avg": torch.from_numpy(tensors[f"{prefix}/{name}/exp_avg"]).to(p.dtype).clone(),
            "exp_avg_sq": torch.from_numpy(tensors[f"{prefix}/{name}/exp_avg_sq"]).to(p.dtype).clone(),
        }


def restore(ckpt: Checkpoint) -> TrainState:
    m = ckpt.manifest
    config = TrainingConfig.from_dict(m["training"])
    state = new_state(config)
    _load_module("generator", state.generator, ckpt.tensors)
    _load_module("discriminator", state.discriminator, ckpt.tensors)
    _load_adam("adam_generator", state.generator, state.opt_g, ckpt.tensors, m["adam_steps"]["generator"])
    _load_adam("adam_discriminator", state.discriminator, state.opt_d, ckpt.tensors, m["adam_steps"]["discriminator"])
    set_state(state.generator.dropout_rng, m["rng"]["generator_dropout"])
    state.epoch = int(m["epoch"])
    state.step = int(m["step"])
    state.history = [LossRecord(**r) for r in m["history"]]
    return state


# ----------------------------------------------------------------------- loop


def train_step(state: TrainState, rgb: torch.Tensor, target: torch.Tensor) -> LossRecord:
    g, d = state.generator, state.discriminator
    cfg = state.config
    g.train()

    fake = g(rgb)

    # D step; G's output is detached so no gradient reaches G
    d.requires_grad_(True)
    d_loss = discriminator_loss(d(rgb, target), d(rgb, fake.detach()))
    state.opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    d_loss = d_loss.detach()
    state.opt_d.step()

    # G step against the updated D; D is frozen so its parameters stay put
    d.requires_grad_(False)
    g_adv, g_aux, g_total = generator_loss(d(rgb, fake), fake, target, cfg.lambda_l1, cfg.aux_loss)
    state.opt_g.zero_grad(set_to_none=True)
    g_total.backward()
    state.opt_g.step()
    g_adv, g_aux, g_total = g_adv.detach(), g_aux.detach(), g_total.detach()
    d.requires_grad_(True)

    return LossRecord(
        epoch=state.epoch,
        step=state.step,
        d_loss=d_loss.item(),
        g_adv=g_adv.item(),
        g_aux=g_aux.item(),
        g_total=g_total.item(),
    )


def _set_lr(opt: torch.optim.Adam, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def run_epochs(state: TrainState, patches: PatchSet, until: int | None = None,
               checkpoint_dir: str | os.PathLike | None = None) -> TrainState:
    cfg = state.config
    until = cfg.epochs if until is None else min(until, cfg.epochs)
    rgb_all, tgt_all = patches.arrays("train")
    if len(rgb_all) == 0:
        raise TrainingError("the train split of the patch set is empty")
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    rgb_all = torch.from_numpy(rgb_all).to(dtype)
    tgt_all = torch.from_numpy(tgt_all).to(dtype)
    n = len(rgb_all)

    while state.epoch < until:
        lr = lr_at(state.epoch, cfg)
        _set_lr(state.opt_g, lr)
        _set_lr(state.opt_d, lr)
        order = stream(cfg.seed, f"train/shuffle/{state.epoch}").permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[start:start + cfg.batch_size])
            rec = train_step(state, rgb_all[idx], tgt_all[idx])
            if not all(math.isfinite(v) for v in (rec.d_loss, rec.g_adv, rec.g_aux, rec.g_total)):
                raise TrainingError(f"non-finite loss at epoch {rec.epoch} step {rec.step}: {rec}")
            state.history.append(rec)
            state.step += 1
        state.epoch += 1
        epoch_recs = [r for r in state.history if r.epoch == state.epoch - 1]
        log.info("epoch %d/%d lr=%.3g d=%.4f g_adv=%.4f g_aux=%.5f", state.epoch, cfg.epochs, lr,
                 np.mean([r.d_loss for r in epoch_recs]), np.mean([r.g_adv for r in epoch_recs]),
                 np.mean([r.g_aux for r in epoch_recs]))
        if checkpoint_dir is not None:
            save_checkpoint(snapshot(state), Path(checkpoint_dir) / f"epoch_{state.epoch:03d}")
    state.generator.set_mode(INFERENCE)
    return state


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    history: list[LossRecord]
    checkpoint: Checkpoint


def train(config: TrainingConfig, patches: PatchSet, checkpoint_dir: str | os.PathLike | None = None,
          resume: str | os.PathLike | Checkpoint | None = None, until: int | None = None) -> TrainResult:
    """Train G and D on the train split of ``patches``.

    Writes ``epoch_NNN`` checkpoints under ``checkpoint_dir`` after every epoch.
    With ``resume`` the run continues from a saved checkpoint (its config wins);
    ``until`` stops early after that many completed epochs.
    """
    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        state = restore(ckpt)
    else:
        state = new_state(config)
    run_epochs(state, patches, until=until, checkpoint_dir=checkpoint_dir)
    return TrainResult(state.generator, state.discriminator, state.history, snapshot(state))


def generator_from_checkpoint(ckpt: Checkpoint | str | os.PathLike) -> Generator:
    if not isinstance(ckpt, Checkpoint):
        ckpt = load_checkpoint(ckpt)
    state = restore(ckpt)
    return state.generator.set_mode(INFERENCE)


def epoch_means(history: list[LossRecord], key: str = "g_aux") -> list[float]:
    epochs = sorted({r.epoch for r in history})
    return [float(np.mean([getattr(r, key) for r in history if r.epoch == e])) for e in epochs]

