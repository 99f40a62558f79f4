"""Alternating critic/generator training for every architecture."""

from __future__ import annotations

import time
import warnings
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .critics import AuxClassifier, CriticNet
from .data import make_rng
from .generators import Generator
from .layers import SMOOTH_ACTIVATIONS
from .losses import (
    classification_term,
    gradient_penalty,
    madgan_losses,
    original_gan_losses,
    safe_log,
    wasserstein_losses,
)
from .optim import Adam, NumericalError

LOSS_MODES = ("wgan-gp", "wgan-clip", "original-gan", "madgan", "mgan", "megan")

COMPATIBLE_LOSSES = {
    "hmog": ("wgan-gp", "wgan-clip", "original-gan"),
    "mog": ("wgan-gp", "wgan-clip", "original-gan"),
    "fc": ("wgan-gp", "wgan-clip", "original-gan"),
    "madgan": ("madgan",),
    "mgan": ("mgan",),
    "megan": ("megan", "original-gan"),
}

DEFAULT_LOSS = {
    "hmog": "wgan-gp",
    "mog": "wgan-gp",
    "fc": "wgan-gp",
    "madgan": "madgan",
    "mgan": "mgan",
    "megan": "megan",
}

# stream keys under the run seed
STREAM_DATA, STREAM_LATENT, STREAM_NOISE, STREAM_INIT, STREAM_EVAL = range(5)

LOG_COLUMNS = ("step", "d_loss", "g_loss", "gp_term", "wall_ms")


def critic_head(loss: str) -> str:
    if loss.startswith("wgan"):
        return "wasserstein"
    return "softmax" if loss == "madgan" else "sigmoid"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.5, 0.999)
    eps: float = 1e-8
    amsgrad: bool = True
    batch_size: int = 128
    critic_steps: int | None = None
    gp_lambda: float = 10.0
    total_steps: int = 20000
    loss: str = "wgan-gp"
    clip_bound: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.critic_steps is None:
            self.critic_steps = 5 if self.loss.startswith("wgan") else 1
        self.validate()

    def validate(self) -> None:
        if self.loss not in LOSS_MODES:
            raise ValueError(f"loss: unknown mode {self.loss!r}; expected one of {LOSS_MODES}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must be two values in [0, 1), got {self.betas}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.critic_steps < 1:
            raise ValueError(f"critic_steps must be >= 1, got {self.critic_steps}")
        if self.gp_lambda < 0:
            raise ValueError(f"gp_lambda must be >= 0, got {self.gp_lambda}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.loss == "wgan-clip" and self.clip_bound <= 0:
            raise ValueError(f"clip_bound must be > 0, got {self.clip_bound}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class ModelBundle:
    generator: Generator
    critic: CriticNet
    latent_dim: int
    classifier: AuxClassifier | None = None

    @property
    def arch(self) -> str:
        return self.generator.arch

    def modules(self) -> dict:
        out = {"generator": self.generator, "critic": self.critic}
        if self.classifier is not None:
            out["classifier"] = self.classifier
        return out

    def generator_side_parameters(self) -> list:
        params = self.generator.trainable_parameters()
        if self.classifier is not None:
            params += self.classifier.trainable_parameters()
        return params


def check_compatible(arch: str, cfg: TrainConfig, critic_activation: str = "tanh") -> None:
    allowed = COMPATIBLE_LOSSES.get(arch)
    if allowed is None:
        raise ValueError(f"unknown architecture {arch!r}")
    if cfg.loss not in allowed:
        raise ValueError(f"loss {cfg.loss!r} is not compatible with architecture {arch!r}; use one of {allowed}")
    if cfg.loss == "wgan-gp" and critic_activation not in SMOOTH_ACTIVATIONS:
        raise ValueError(
            f"critic activation {critic_activation!r} is not twice differentiable; "
            "the gradient penalty needs tanh, softplus or sigmoid"
        )


def make_critic(bundle_arch, loss, data_dim, hidden, n_generators, rng, activation="tanh") -> CriticNet:
    head = critic_head(loss)
    n_classes = n_generators + 1 if head == "softmax" else None
    critic = CriticNet(data_dim, hidden, rng, head=head, n_classes=n_classes, activation=activation)
    critic.assign_names("critic.")
    return critic


def make_classifier(data_dim, hidden, n_generators, rng, activation="tanh") -> AuxClassifier:
    clf = AuxClassifier(data_dim, hidden, n_generators, rng, activation)
    clf.assign_names("classifier.")
    return clf


def critic_objective(bundle: ModelBundle, cfg: TrainConfig, real: np.ndarray, fake: np.ndarray, labels, rng):
    """Critic loss (with penalty applied) and the raw penalty value."""
    critic = bundle.critic
    n = real.shape[0]
    scores = critic(Tensor(np.concatenate([real, fake], axis=0)))
    d_real, d_fake = scores[:n], scores[n:]
    gp = None
    if cfg.loss.startswith("wgan"):
        loss, _ = wasserstein_losses(d_real, d_fake)
        if cfg.loss == "wgan-gp" and cfg.gp_lambda > 0:
            gp = gradient_penalty(critic, real, fake, rng)
            loss = ad.add(loss, ad.scale(gp, cfg.gp_lambda))
    elif cfg.loss == "madgan":
        loss, _ = madgan_losses(d_real, d_fake, labels)
    else:
        loss, _ = original_gan_losses(d_real, d_fake)
    return loss, gp


def generator_objective(bundle: ModelBundle, cfg: TrainConfig, fake: Tensor, labels) -> Tensor:
    d_fake = bundle.critic(fake)
    if cfg.loss.startswith("wgan"):
        return ad.scale(ad.mean(d_fake), -1.0)
    if cfg.loss == "madgan":
        return ad.mean(safe_log(ad.sub(1.0, d_fake[:, 0])))
    g_loss = ad.mean(safe_log(ad.sub(1.0, d_fake)))
    if cfg.loss == "mgan":
        g_loss = ad.add(g_loss, classification_term(bundle.classifier(fake), labels))
    return g_loss


@dataclass
class Trainer:
    """Holds optimiser state and RNG streams so training can be resumed or stepped."""

    bundle: ModelBundle
    data_source: Callable[[int, np.random.Generator], np.ndarray]
    cfg: TrainConfig
    step: int = 0
    rngs: dict = field(init=False)

    def __post_init__(self):
        check_compatible(self.bundle.arch, self.cfg, self.bundle.critic.net.activations[0])
        cfg = self.cfg
        self.rngs = {
            "data": make_rng(cfg.seed, STREAM_DATA),
            "latent": make_rng(cfg.seed, STREAM_LATENT),
            "noise": make_rng(cfg.seed, STREAM_NOISE),
        }
        opt = dict(lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps, amsgrad=cfg.amsgrad)
        self.critic_opt = Adam(self.bundle.critic.trainable_parameters(), **opt)
        self.gen_opt = Adam(self.bundle.generator_side_parameters(), **opt)

    def latents(self, n: int) -> np.ndarray:
        return self.rngs["latent"].standard_normal((n, self.bundle.latent_dim))

    def critic_update(self) -> tuple[float, float]:
        cfg, bundle = self.cfg, self.bundle
        real = self.data_source(cfg.batch_size, self.rngs["data"])
        z = Tensor(self.latents(cfg.batch_size))
        with ad.no_grad():
            fake, labels = bundle.generator.sample(z, self.rngs["noise"])
        with Graph() as g:
            loss, gp = critic_objective(bundle, cfg, real, fake.data, labels, self.rngs["noise"])
            grads = g.gradients(loss, self.critic_opt.params)
        self._check(loss, "critic", real, fake.data)
        self.critic_opt.step(grads)
        if cfg.loss == "wgan-clip":
            for p in self.critic_opt.params:
                np.clip(p.data, -cfg.clip_bound, cfg.clip_bound, out=p.data)
        return loss.item(), (gp.item() if gp is not None else 0.0)

    def generator_update(self) -> float:
        cfg, bundle = self.cfg, self.bundle
        z = Tensor(self.latents(cfg.batch_size))
        with Graph() as g:
            fake, labels = bundle.generator.sample(z, self.rngs["noise"])
            loss = generator_objective(bundle, cfg, fake, labels)
            grads = g.gradients(loss, self.gen_opt.params)
        self._check(loss, "generator", None, fake.data)
        self.gen_opt.step(grads)
        return loss.item()

    def _check(self, loss: Tensor, who: str, real, fake) -> None:
        if np.isfinite(loss.data).all():
            return
        diag = {"step": self.step + 1, "phase": who, "loss": float(loss.data.reshape(-1)[0])}
        for name, batch in (("real", real), ("fake", fake)):
            if batch is not None:
                with warnings.catch_warnings():  # all-NaN columns are expected here
                    warnings.simplefilter("ignore", RuntimeWarning)
                    diag[f"{name}_mean"] = np.nanmean(batch, axis=0).tolist()
                    diag[f"{name}_std"] = np.nanstd(batch, axis=0).tolist()
                diag[f"{name}_nonfinite"] = int((~np.isfinite(batch)).sum())
        raise NumericalError(f"non-finite {who} loss at step {self.step + 1}", diag)

    def run_step(self) -> dict:
        t0 = time.perf_counter()
        d_loss = gp = 0.0
        for _ in range(self.cfg.critic_steps):
            d_loss, gp = self.critic_update()
        g_loss = self.generator_update()
        self.step += 1
        return {
            "step": self.step,
            "d_loss": d_loss,
            "g_loss": g_loss,
            "gp_term": gp,
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }


def train(
    bundle: ModelBundle,
    data_source: Callable[[int, np.random.Generator], np.ndarray],
    cfg: TrainConfig,
    callbacks: Sequence[Callable[[int, dict], None]] = (),
) -> list[dict]:
    """Run ``cfg.total_steps`` iterations; each is ``critic_steps`` critic
    updates followed by one generator update.  Callbacks receive
    ``(step, record)`` after every iteration.
    """
    trainer = Trainer(bundle, data_source, cfg)
    log = []
    for _ in range(cfg.total_steps):
        record = trainer.run_step()
        log.append(record)
        for cb in callbacks:
            cb(trainer.step, record)
    return log
