"""Experiment configuration files.

Configs are TOML with hyphenated keys::

    architecture = "hmog"
    seed = 0
    eval-every = 2000
    output-dir = "runs/hmog"
    mixture = "default"          # or a path to a mixture TOML file

    [model]
    depth = 3                    # hmog only; generators = 8 is equivalent
    latent-dim = 2
    h-dim = 2

    [model.shared]
    hidden = []

    [critic]
    hidden = [64, 64]

    [train]
    batch-size = 128
    learning-rate = 1e-4

Every key has a default, unknown keys are rejected, and errors name the
offending key path.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import tomli_w

from .data import GaussianMixtureSpec
from .generators import ARCHITECTURES
from .layers import ACTIVATIONS
from .training import COMPATIBLE_LOSSES, DEFAULT_LOSS, TrainConfig, check_compatible

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

log = logging.getLogger(__name__)

STANDARD_GENERATOR_COUNTS = (4, 8, 16, 32)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the culprit."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass
class EvalConfig:
    n_real: int = 2000
    n_fake: int = 2000
    truncate: float = 0.25
    knn_k: int = 5
    coverage_samples: int = 10000
    radius_sigmas: float = 3.0
    min_share: float = 0.02


@dataclass
class ExperimentConfig:
    architecture: str = "hmog"
    n_generators: int = 8
    depth: int | None = 3
    latent_dim: int = 2
    h_dim: int = 2
    hidden: list[int] = field(default_factory=list)
    gate_hidden: list[int] = field(default_factory=list)
    shared_hidden: list[int] = field(default_factory=list)
    activation: str = "tanh"
    temperature: float = 1.0
    critic_hidden: list[int] = field(default_factory=lambda: [64, 64])
    critic_activation: str = "tanh"
    classifier_hidden: list[int] = field(default_factory=lambda: [64])
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    mixture: str = "default"
    eval_every: int = 2000
    output_dir: str = "runs"
    seed: int = 0
    source: str | None = None
    notices: list[str] = field(default_factory=list)

    def mixture_spec(self) -> GaussianMixtureSpec:
        if self.mixture == "default":
            return GaussianMixtureSpec.default()
        path = Path(self.mixture)
        if not path.is_absolute() and self.source is not None:
            path = Path(self.source).parent / path
        try:
            return GaussianMixtureSpec.load(path)
        except FileNotFoundError as exc:
            raise ConfigError("mixture", f"file not found: {path}") from exc
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError("mixture", str(exc)) from exc

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seed=seed, train=replace(self.train, seed=seed), notices=list(self.notices))

    def to_dict(self) -> dict:
        """Resolved config with file-style keys; re-parses to the same config."""
        d = {
            "architecture": self.architecture,
            "seed": self.seed,
            "eval-every": self.eval_every,
            "output-dir": self.output_dir,
            "mixture": self.mixture,
            "model": {
                "generators": self.n_generators,
                "latent-dim": self.latent_dim,
                "h-dim": self.h_dim,
                "hidden": list(self.hidden),
                "gate-hidden": list(self.gate_hidden),
                "activation": self.activation,
                "temperature": self.temperature,
                "shared": {"hidden": list(self.shared_hidden)},
            },
            "critic": {
                "hidden": list(self.critic_hidden),
                "activation": self.critic_activation,
                "classifier-hidden": list(self.classifier_hidden),
            },
            "train": {_dash(k): v for k, v in self.train.to_dict().items() if k != "seed"},
            "eval": {_dash(k): v for k, v in asdict(self.evaluation).items()},
        }
        if self.depth is not None:
            d["model"]["depth"] = self.depth
        return d


def _dash(name: str) -> str:
    return name.replace("_", "-")


# key -> (expected type, attribute); dotted sections handled separately
_TOP = {
    "architecture": str,
    "seed": int,
    "eval-every": int,
    "output-dir": str,
    "mixture": str,
}
_MODEL = {
    "generators": int,
    "depth": int,
    "latent-dim": int,
    "h-dim": int,
    "hidden": list,
    "gate-hidden": list,
    "activation": str,
    "temperature": float,
}
_CRITIC = {"hidden": list, "activation": str, "classifier-hidden": list}
_TRAIN = {
    "learning-rate": float,
    "betas": list,
    "eps": float,
    "amsgrad": bool,
    "batch-size": int,
    "critic-steps": int,
    "gp-lambda": float,
    "total-steps": int,
    "loss": str,
    "clip-bound": float,
}
_EVAL = {
    "n-real": int,
    "n-fake": int,
    "truncate": float,
    "knn-k": int,
    "coverage-samples": int,
    "radius-sigmas": float,
    "min-share": float,
}


def _typed(section: dict, schema: dict, path: str) -> dict:
    out = {}
    for key, value in section.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(where, "unknown key")
        want = schema[key]
        if isinstance(value, dict):
            raise ConfigError(where, "expected a value, got a table")
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is int and isinstance(value, bool) or not isinstance(value, want):
            raise ConfigError(where, f"expected {want.__name__}, got {type(value).__name__} {value!r}")
        if want is list:
            for i, item in enumerate(value):
                if key != "betas" and (not isinstance(item, int) or isinstance(item, bool) or item < 1):
                    raise ConfigError(f"{where}[{i}]", f"layer widths must be positive integers, got {item!r}")
        out[key.replace("-", "_")] = value
    return out


def _section(doc: dict, name: str, path: str = "") -> dict:
    value = doc.pop(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{path}{name}", "expected a table")
    return value


def _positive(value, key: str) -> None:
    if value < 1:
        raise ConfigError(key, f"must be >= 1, got {value}")


def from_dict(doc: dict, source: str | None = None) -> ExperimentConfig:
    doc = dict(doc)
    model = dict(_section(doc, "model"))
    shared = _section(model, "shared", "model.")
    critic = _section(doc, "critic")
    train = _section(doc, "train")
    evaluation = _section(doc, "eval")
    top = _typed(doc, _TOP, "")
    model_v = _typed(model, _MODEL, "model")
    shared_v = _typed(shared, {"hidden": list}, "model.shared")
    critic_v = _typed(critic, _CRITIC, "critic")
    train_v = _typed(train, _TRAIN, "train")
    eval_v = _typed(evaluation, _EVAL, "eval")

    notices: list[str] = []
    arch = top.get("architecture", "hmog")
    if arch not in ARCHITECTURES:
        raise ConfigError("architecture", f"unknown architecture {arch!r}; expected one of {ARCHITECTURES}")

    depth = model_v.pop("depth", None)
    k = model_v.pop("generators", None)
    if arch == "hmog":
        if depth is None:
            k = 8 if k is None else k
            depth = round(math.log2(k)) if k >= 1 else -1
            if k < 1 or 2**depth != k:
                raise ConfigError("model.generators", f"hmog needs a power of two, got {k}")
        elif depth < 0:
            raise ConfigError("model.depth", f"must be >= 0, got {depth}")
        elif k is not None and k != 2**depth:
            raise ConfigError("model.generators", f"depth={depth} gives 2^{depth} = {2**depth} leaves, not {k}")
        k = 2**depth
    else:
        if depth is not None:
            raise ConfigError("model.depth", f"only meaningful for hmog, not {arch}")
        k = 8 if k is None else k
        if arch != "fc" and k < 2:
            raise ConfigError("model.generators", f"{arch} needs at least 2 generators, got {k}")
        if arch == "fc":
            k = 1
    if arch != "fc" and k not in STANDARD_GENERATOR_COUNTS:
        notices.append(f"model.generators: {k} generators is outside the usual {STANDARD_GENERATOR_COUNTS}")

    for key in ("latent_dim", "h_dim"):
        if key in model_v:
            _positive(model_v[key], f"model.{_dash(key)}")
    for key in ("activation",):
        if model_v.get(key, "tanh") not in ACTIVATIONS:
            raise ConfigError(f"model.{key}", f"unknown activation {model_v[key]!r}")
    if critic_v.get("activation", "tanh") not in ACTIVATIONS:
        raise ConfigError("critic.activation", f"unknown activation {critic_v['activation']!r}")
    if model_v.get("temperature", 1.0) <= 0:
        raise ConfigError("model.temperature", "must be > 0")

    seed = top.get("seed", 0)
    if seed < 0:
        raise ConfigError("seed", f"must be >= 0, got {seed}")
    train_v.setdefault("loss", DEFAULT_LOSS[arch])
    if "betas" in train_v:
        train_v["betas"] = tuple(float(b) for b in train_v["betas"])
    try:
        tcfg = TrainConfig(seed=seed, **train_v)
    except ValueError as exc:
        key = next((f"train.{_dash(k)}" for k in train_v if str(exc).startswith(k)), "train")
        raise ConfigError(key, str(exc)) from exc
    try:
        check_compatible(arch, tcfg, critic_v.get("activation", "tanh"))
    except ValueError as exc:
        raise ConfigError("train.loss", f"{exc} (allowed: {COMPATIBLE_LOSSES[arch]})") from exc

    ecfg = EvalConfig(**eval_v)
    for key in ("n_real", "n_fake", "knn_k", "coverage_samples"):
        _positive(getattr(ecfg, key), f"eval.{_dash(key)}")
    if not 0.0 <= ecfg.truncate < 1.0:
        raise ConfigError("eval.truncate", f"must lie in [0, 1), got {ecfg.truncate}")
    if ecfg.radius_sigmas <= 0:
        raise ConfigError("eval.radius-sigmas", "must be > 0")
    if not 0.0 < ecfg.min_share < 1.0:
        raise ConfigError("eval.min-share", "must lie in (0, 1)")
    if ecfg.knn_k >= ecfg.n_real + ecfg.n_fake:
        raise ConfigError("eval.knn-k", "must be smaller than n-real + n-fake")

    eval_every = top.get("eval-every".replace("-", "_"), 2000)
    _positive(eval_every, "eval-every")

    cfg = ExperimentConfig(
        architecture=arch,
        n_generators=k,
        depth=depth if arch == "hmog" else None,
        shared_hidden=list(shared_v.get("hidden", [])),
        critic_hidden=list(critic_v.get("hidden", [64, 64])),
        critic_activation=critic_v.get("activation", "tanh"),
        classifier_hidden=list(critic_v.get("classifier_hidden", [64])),
        train=tcfg,
        evaluation=ecfg,
        mixture=top.get("mixture", "default"),
        eval_every=eval_every,
        output_dir=top.get("output_dir", "runs"),
        seed=seed,
        source=source,
        notices=notices,
        **model_v,
    )
    cfg.mixture_spec()  # fail early on a bad mixture file
    for note in notices:
        log.warning(note)
    return cfg


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("", f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from exc
    return from_dict(doc, source=str(path))


def dump_toml(doc: dict) -> str:
    """Serialise a config document (as produced by :meth:`ExperimentConfig.to_dict`)."""
    return tomli_w.dumps(doc)
