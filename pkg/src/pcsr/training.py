"""Two-phase optimization: coverage-only pretraining, then adversarial finetuning.

Phase 1 minimizes the one-sided Chamfer loss alone; phase 2 alternates
discriminator updates (real patches vs detached generator outputs) with
generator updates on the weighted joint objective. Both optimizers are
bias-corrected Adam. All per-step randomness is derived functionally from
(seed, phase, epoch, step, example), so runs are deterministic, and a
checkpoint restored mid-epoch continues bit-exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import AugmentConfig, Patch, add_gaussian_noise, augment, subsample_input
from .discriminator import DiscriminatorConfig, DiscriminatorModel
from .generator import GeneratorConfig, GeneratorModel
from .loss import LossConfig, chamfer_one_sided, discriminator_loss, joint_loss


class NumericalError(RuntimeError):
    """Raised when a loss or parameter becomes NaN/Inf during training."""


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter, one slot per parameter."""

    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    learning_rate: float = 0.001

    @classmethod
    def for_parameters(cls, params, learning_rate: float = 0.001) -> "AdamState":
        return cls(
            m={p.name: np.zeros_like(p.data) for p in params},
            v={p.name: np.zeros_like(p.data) for p in params},
            learning_rate=learning_rate,
        )


def adam_step(params, grads: dict, state: AdamState):
    """Standard bias-corrected Adam update, in place; returns (params, state)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for p in params:
        g = grads[p.name]
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {p.name} {p.data.shape}")
        m = state.m[p.name] = b1 * state.m[p.name] + (1 - b1) * g
        v = state.v[p.name] = b2 * state.v[p.name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** state.t)
        v_hat = v / (1 - b2 ** state.t)
        p.data = p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    batch_size: int = 28
    phase1_epochs: int = 80
    phase2_epochs: int = 40
    d_steps_per_g_step: int = 1
    rng_seed: int = 0
    checkpoint_interval: int = 0  # steps between checkpoints; 0 = final only
    learning_rate: float = 0.001
    input_size: int = 1024
    noise_sigma: float = 0.0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        if min(self.batch_size, self.d_steps_per_g_step, self.input_size) < 1:
            raise ValueError("batch_size, d_steps_per_g_step and input_size must be positive")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")


# functional randomness: every draw is keyed by (seed, phase, epoch, step, ...)
_TAG_INIT_G = 101
_TAG_INIT_D = 102
_TAG_PERM = 103
_TAG_SAMPLE = 104
_TAG_AUGMENT = 105
_TAG_NOISE = 106


def _derived_rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


@dataclass
class TrainerState:
    config: TrainConfig
    generator: GeneratorModel
    discriminator: DiscriminatorModel
    adam_g: AdamState
    adam_d: AdamState
    phase: int = 1
    epoch: int = 0          # next epoch index within the current phase
    step_in_epoch: int = 0  # next step index within that epoch
    global_step: int = 0


def init_trainer(config: TrainConfig) -> TrainerState:
    gen = GeneratorModel(config.generator, _derived_rng(config.rng_seed, _TAG_INIT_G))
    disc = DiscriminatorModel(config.discriminator, _derived_rng(config.rng_seed, _TAG_INIT_D))
    return TrainerState(
        config=config,
        generator=gen,
        discriminator=disc,
        adam_g=AdamState.for_parameters(gen.parameters(), config.learning_rate),
        adam_d=AdamState.for_parameters(disc.parameters(), config.learning_rate),
    )


def _check_finite_loss(value: float, phase: int, epoch: int, step: int):
    if not np.isfinite(value):
        raise NumericalError(
            f"non-finite loss at phase {phase}, epoch {epoch}, step {step}"
        )


def _check_finite_params(model, phase: int, epoch: int, step: int):
    for p in model.parameters():
        if not np.isfinite(p.data).all():
            raise NumericalError(
                f"parameter {p.name} became non-finite at phase {phase}, "
                f"epoch {epoch}, step {step}"
            )


def _example_clouds(config: TrainConfig, patch: Patch, phase: int, epoch: int,
                    step: int, example: int, draw: int = 0):
    """Deterministically derive one (input, ground-truth) pair for a step."""
    seed = config.rng_seed
    inp = subsample_input(
        patch, config.input_size, _derived_rng(seed, phase, epoch, step, example, draw, _TAG_SAMPLE)
    )
    if config.noise_sigma > 0:
        inp = add_gaussian_noise(
            inp, config.noise_sigma,
            _derived_rng(seed, phase, epoch, step, example, draw, _TAG_NOISE),
        )
    return augment(
        inp, patch.gt,
        _derived_rng(seed, phase, epoch, step, example, draw, _TAG_AUGMENT),
        config.augment,
    )


def _epoch_batches(config: TrainConfig, n_patches: int, phase: int, epoch: int):
    perm = _derived_rng(config.rng_seed, phase, epoch, _TAG_PERM).permutation(n_patches)
    return [perm[i : i + config.batch_size] for i in range(0, n_patches, config.batch_size)]


def _accumulate(acc: dict, params, scale: float):
    """Fold the current gradients into the batch accumulator and clear them."""
    for p in params:
        acc[p.name] = acc.get(p.name, 0.0) + p.grad * scale
        p.node.grad = None
    return acc


def _grad_dict(acc: dict, params) -> dict:
    return {p.name: acc.get(p.name, np.zeros_like(p.data)) for p in params}


class Trainer:
    """Drives both phases over a fixed list of patches.

    ``history`` collects one row per generator step with the logged losses;
    ``checkpoint_cb`` (when set) is called as cb(state) every
    ``checkpoint_interval`` global steps and at each phase end.
    """

    def __init__(self, dataset, config: TrainConfig, state: TrainerState = None,
                 checkpoint_cb=None):
        if not dataset:
            raise ValueError("dataset is empty")
        for patch in dataset:
            if config.input_size > len(patch.gt):
                raise ValueError("input_size exceeds a patch's ground-truth size")
        self.dataset = list(dataset)
        self.config = config
        self.state = state if state is not None else init_trainer(config)
        self.history: list[dict] = []
        self.checkpoint_cb = checkpoint_cb

    # -- phase 1 -----------------------------------------------------------

    def run_phase1(self, max_steps: int = None):
        """Coverage-only training for config.phase1_epochs (optionally capped by steps)."""
        st = self.state
        cfg = self.config
        if st.phase != 1:
            return self.state
        done = 0
        for epoch in range(st.epoch, cfg.phase1_epochs):
            batches = _epoch_batches(cfg, len(self.dataset), 1, epoch)
            epoch_losses = []
            for step, batch in enumerate(batches):
                if epoch == st.epoch and step < st.step_in_epoch:
                    continue
                l_cd = self._phase1_step(batch, epoch, step)
                epoch_losses.append(l_cd)
                st.step_in_epoch = step + 1
                st.global_step += 1
                done += 1
                self.history.append({"step": st.global_step, "l_cd": l_cd,
                                     "l_g": None, "l_d": None})
                self._maybe_checkpoint()
                if max_steps is not None and done >= max_steps:
                    return self.state
            st.epoch = epoch + 1
            st.step_in_epoch = 0
        st.phase = 2
        st.epoch = 0
        st.step_in_epoch = 0
        self._maybe_checkpoint(force=True)
        return self.state

    def _phase1_step(self, batch, epoch: int, step: int) -> float:
        st = self.state
        cfg = self.config
        gen_params = st.generator.parameters()
        acc: dict = {}
        total = 0.0
        for j, patch_idx in enumerate(batch):
            inp, gt = _example_clouds(cfg, self.dataset[patch_idx], 1, epoch, step, j)
            pred = st.generator.generate(inp)
            l = chamfer_one_sided(gt, pred, cfg.loss.chamfer_reduction)
            ad.backward(l)
            _accumulate(acc, gen_params, 1.0 / len(batch))
            total += float(l.data)
        l_cd = total / len(batch)
        _check_finite_loss(l_cd, 1, epoch, step)
        adam_step(gen_params, _grad_dict(acc, gen_params), st.adam_g)
        _check_finite_params(st.generator, 1, epoch, step)
        return l_cd

    # -- phase 2 -----------------------------------------------------------

    def run_phase2(self, max_steps: int = None):
        """Adversarial finetuning for config.phase2_epochs."""
        st = self.state
        cfg = self.config
        if st.phase < 2:
            raise ValueError("run phase 1 first (or set state.phase = 2 for the no-pretrain arm)")
        done = 0
        for epoch in range(st.epoch, cfg.phase2_epochs):
            batches = _epoch_batches(cfg, len(self.dataset), 2, epoch)
            for step, batch in enumerate(batches):
                if epoch == st.epoch and step < st.step_in_epoch:
                    continue
                l_d = self._discriminator_step(batch, epoch, step)
                l_cd, l_g = self._generator_step(batch, epoch, step)
                st.step_in_epoch = step + 1
                st.global_step += 1
                done += 1
                self.history.append({"step": st.global_step, "l_cd": l_cd,
                                     "l_g": l_g, "l_d": l_d})
                self._maybe_checkpoint()
                if max_steps is not None and done >= max_steps:
                    return self.state
            st.epoch = epoch + 1
            st.step_in_epoch = 0
        st.phase = 3
        self._maybe_checkpoint(force=True)
        return self.state

    def _discriminator_step(self, batch, epoch: int, step: int) -> float:
        st = self.state
        cfg = self.config
        d_params = st.discriminator.parameters()
        l_d_last = 0.0
        for d_round in range(cfg.d_steps_per_g_step):
            acc: dict = {}
            total = 0.0
            for j, patch_idx in enumerate(batch):
                inp, gt = _example_clouds(cfg, self.dataset[patch_idx], 2, epoch, step, j,
                                          draw=d_round)
                fake = st.generator.generate(inp).data  # detached
                l = discriminator_loss(
                    st.discriminator.discriminate(fake),
                    st.discriminator.discriminate(gt.points),
                )
                ad.backward(l)
                _accumulate(acc, d_params, 1.0 / len(batch))
                total += float(l.data)
            l_d_last = total / len(batch)
            _check_finite_loss(l_d_last, 2, epoch, step)
            adam_step(d_params, _grad_dict(acc, d_params), st.adam_d)
            _check_finite_params(st.discriminator, 2, epoch, step)
        return l_d_last

    def _generator_step(self, batch, epoch: int, step: int):
        st = self.state
        cfg = self.config
        gen_params = st.generator.parameters()
        acc: dict = {}
        total_cd = 0.0
        total_joint = 0.0
        for j, patch_idx in enumerate(batch):
            inp, gt = _example_clouds(cfg, self.dataset[patch_idx], 2, epoch, step, j,
                                      draw=cfg.d_steps_per_g_step)
            pred = st.generator.generate(inp)
            scores = st.discriminator.discriminate(pred)
            l = joint_loss(gt, pred, scores, cfg.loss)
            ad.backward(l)
            _accumulate(acc, gen_params, 1.0 / len(batch))
            total_joint += float(l.data)
            total_cd += float(chamfer_one_sided(gt, pred, cfg.loss.chamfer_reduction).data)
        l_joint = total_joint / len(batch)
        l_cd = total_cd / len(batch)
        _check_finite_loss(l_joint, 2, epoch, step)
        adam_step(gen_params, _grad_dict(acc, gen_params), st.adam_g)
        _check_finite_params(st.generator, 2, epoch, step)
        return l_cd, l_joint - cfg.loss.chamfer_weight * l_cd

    def _maybe_checkpoint(self, force: bool = False):
        if self.checkpoint_cb is None:
            return
        interval = self.config.checkpoint_interval
        if force or (interval > 0 and self.state.global_step % interval == 0):
            self.checkpoint_cb(self.state)


def train_phase1(dataset, config: TrainConfig, state: TrainerState = None):
    """Run phase 1 from scratch (or the given state); returns (state, history)."""
    trainer = Trainer(dataset, config, state)
    trainer.run_phase1()
    return trainer.state, trainer.history


def train_phase2(dataset, config: TrainConfig, state: TrainerState):
    """Finetune a phase-1 state adversarially; returns (state, history)."""
    trainer = Trainer(dataset, config, state)
    trainer.run_phase2()
    return trainer.state, trainer.history


# ---------------------------------------------------------------------------
# checkpointing

_MAGIC = b"PCSRCKPT"
_VERSION = 1


def _config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "batch_size": cfg.batch_size,
        "phase1_epochs": cfg.phase1_epochs,
        "phase2_epochs": cfg.phase2_epochs,
        "d_steps_per_g_step": cfg.d_steps_per_g_step,
        "rng_seed": cfg.rng_seed,
        "checkpoint_interval": cfg.checkpoint_interval,
        "learning_rate": cfg.learning_rate,
        "input_size": cfg.input_size,
        "noise_sigma": cfg.noise_sigma,
        "loss": {"chamfer_weight": cfg.loss.chamfer_weight,
                 "chamfer_reduction": cfg.loss.chamfer_reduction},
        "augment": {"rotate": cfg.augment.rotate, "shift": cfg.augment.shift,
                    "scale_min": cfg.augment.scale_min, "scale_max": cfg.augment.scale_max},
        "generator": cfg.generator.to_dict(),
        "discriminator": cfg.discriminator.to_dict(),
    }


def _config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(
        batch_size=d["batch_size"],
        phase1_epochs=d["phase1_epochs"],
        phase2_epochs=d["phase2_epochs"],
        d_steps_per_g_step=d["d_steps_per_g_step"],
        rng_seed=d["rng_seed"],
        checkpoint_interval=d["checkpoint_interval"],
        learning_rate=d["learning_rate"],
        input_size=d["input_size"],
        noise_sigma=d["noise_sigma"],
        loss=LossConfig(**d["loss"]),
        augment=AugmentConfig(**d["augment"]),
        generator=GeneratorConfig.from_dict(d["generator"]),
        discriminator=DiscriminatorConfig.from_dict(d["discriminator"]),
    )


def _named_tensors(state: TrainerState):
    """All checkpoint tensors in declaration order."""
    out = []
    for p in state.generator.parameters():
        out.append((f"g.{p.name}", p.data))
    for p in state.discriminator.parameters():
        out.append((f"d.{p.name}", p.data))
    for p in state.generator.parameters():
        out.append((f"adam_g.m.{p.name}", state.adam_g.m[p.name]))
        out.append((f"adam_g.v.{p.name}", state.adam_g.v[p.name]))
    for p in state.discriminator.parameters():
        out.append((f"adam_d.m.{p.name}", state.adam_d.m[p.name]))
        out.append((f"adam_d.v.{p.name}", state.adam_d.v[p.name]))
    return out


def save_checkpoint(state: TrainerState, path) -> None:
    """Versioned binary checkpoint plus a human-readable sidecar of names and shapes.

    The file is written to a temporary name and atomically replaced, so an
    interrupted save leaves any previous checkpoint intact.
    """
    meta = {
        "config": _config_to_dict(state.config),
        "phase": state.phase,
        "epoch": state.epoch,
        "step_in_epoch": state.step_in_epoch,
        "global_step": state.global_step,
        "adam_g_t": state.adam_g.t,
        "adam_d_t": state.adam_d.t,
        "rng": {"scheme": "counter-derived", "seed": state.config.rng_seed},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors = _named_tensors(state)
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _VERSION)
    blob += struct.pack("<Q", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name, data in tensors:
        name_b = name.encode("utf-8")
        blob += struct.pack("<I", len(name_b))
        blob += name_b
        blob += struct.pack("<I", data.ndim)
        blob += struct.pack(f"<{data.ndim}Q", *data.shape)
        blob += np.ascontiguousarray(data, dtype="<f8").tobytes()
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)
    sidecar = str(path) + ".txt"
    with open(sidecar + ".tmp", "w") as fh:
        for name, data in tensors:
            fh.write(f"{name} {'x'.join(str(s) for s in data.shape)}\n")
    os.replace(sidecar + ".tmp", sidecar)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.off = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.off + count > len(self.buf):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.off : self.off + count]
        self.off += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> TrainerState:
    """Rebuild a full trainer state; corrupt or truncated files raise without side effects."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(len(_MAGIC)) != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = reader.unpack("<I")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (meta_len,) = reader.unpack("<Q")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    config = _config_from_dict(meta["config"])
    state = init_trainer(config)
    state.phase = meta["phase"]
    state.epoch = meta["epoch"]
    state.step_in_epoch = meta["step_in_epoch"]
    state.global_step = meta["global_step"]
    state.adam_g.t = meta["adam_g_t"]
    state.adam_d.t = meta["adam_d_t"]
    slots = {}
    g_named = state.generator.named_parameters()
    d_named = state.discriminator.named_parameters()
    for name, p in g_named.items():
        slots[f"g.{name}"] = ("param", p)
        slots[f"adam_g.m.{name}"] = ("adam", state.adam_g.m, name)
        slots[f"adam_g.v.{name}"] = ("adam", state.adam_g.v, name)
    for name, p in d_named.items():
        slots[f"d.{name}"] = ("param", p)
        slots[f"adam_d.m.{name}"] = ("adam", state.adam_d.m, name)
        slots[f"adam_d.v.{name}"] = ("adam", state.adam_d.v, name)
    (count,) = reader.unpack("<I")
    if count != len(slots):
        raise ValueError(f"{path}: expected {len(slots)} tensors, file has {count}")
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        n_items = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(reader.take(8 * n_items), dtype="<f8").reshape(shape).copy()
        if name not in slots:
            raise ValueError(f"{path}: unexpected tensor {name!r}")
        slot = slots.pop(name)
        if slot[0] == "param":
            if slot[1].data.shape != data.shape:
                raise ValueError(f"{path}: tensor {name!r} has shape {data.shape}, "
                                 f"model expects {slot[1].data.shape}")
            slot[1].data = data
        else:
            slot[1][slot[2]] = data
    if slots:
        raise ValueError(f"{path}: missing tensors: {sorted(slots)[:4]} ...")
    return state
