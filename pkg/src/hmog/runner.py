"""Seeded experiment runs and the artifacts they leave behind.

A run directory holds::

    config.toml      resolved config (re-parses to the same experiment)
    mixture.toml     the ground-truth mixture used
    manifest.json    config echo, seed, versions, timestamps, parameter counts
    metrics.csv      step, frechet, knn_real, knn_fake, modes_covered
    train_log.csv    step, d_loss, g_loss, gp_term, wall_ms
    checkpoint.npz   final parameters
    samples.npz      real and generated samples from the final evaluation
    *.svg            plots

``metrics.csv`` depends only on config and seed, so two runs of the same
experiment produce identical files.  ``train_log.csv`` carries wall-clock
timings and does not.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, dump_toml, parse_config
from .data import BIT_GENERATOR, GaussianMixtureSpec, make_rng, sample_mixture
from .generators import Generator, build_generator
from .metrics import (
    MetricReport,
    fit_gaussian,
    frechet_distance,
    knn_two_sample,
    mode_coverage,
    truncate_latents,
)
from .optim import NumericalError
from .training import (
    LOG_COLUMNS,
    STREAM_EVAL,
    STREAM_INIT,
    ModelBundle,
    Trainer,
    make_classifier,
    make_critic,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
METRIC_COLUMNS = ("step", "frechet", "knn_real", "knn_fake", "modes_covered")


def build_bundle(cfg: ExperimentConfig) -> ModelBundle:
    """Fresh models initialised from the run seed."""
    rng = make_rng(cfg.seed, STREAM_INIT)
    gen = build_generator(
        cfg.architecture,
        latent_dim=cfg.latent_dim,
        h_dim=cfg.h_dim,
        data_dim=2,
        rng=rng,
        n_generators=cfg.n_generators,
        depth=cfg.depth,
        hidden=cfg.hidden,
        gate_hidden=cfg.gate_hidden,
        shared_hidden=cfg.shared_hidden,
        activation=cfg.activation,
        temperature=cfg.temperature,
    )
    critic = make_critic(
        cfg.architecture, cfg.train.loss, 2, cfg.critic_hidden, gen.n_generators, rng, cfg.critic_activation
    )
    clf = None
    if cfg.train.loss == "mgan":
        clf = make_classifier(2, cfg.classifier_hidden, gen.n_generators, rng, cfg.critic_activation)
    return ModelBundle(gen, critic, cfg.latent_dim, clf)


def generate(gen: Generator, z: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Samples and 1-based generator assignments, without recording a graph."""
    zt = Tensor(z)
    with ad.no_grad():
        x, labels = gen.sample(zt, rng)
        if labels is None:
            labels = gen.assignments(zt)
    return x.data, np.asarray(labels)


def draws_for(n_keep: int, drop_fraction: float) -> int:
    """Smallest n whose truncation leaves at least ``n_keep`` rows."""
    n = n_keep
    while n - math.floor(drop_fraction * n + 1e-9) < n_keep:
        n += 1
    return n


@dataclass
class Evaluation:
    report: MetricReport
    real: np.ndarray
    fake: np.ndarray
    fake_z: np.ndarray
    fake_labels: np.ndarray


def evaluate_model(bundle: ModelBundle, cfg: ExperimentConfig, spec: GaussianMixtureSpec, step: int) -> Evaluation:
    """Metrics at ``step`` from the evaluation stream, so snapshots are reproducible.

    Frechet distance and k-NN use truncated fakes; mode coverage uses a
    larger untruncated draw so that missing modes are not hidden by the
    truncation.
    """
    ecfg = cfg.evaluation
    rng = make_rng(cfg.seed, STREAM_EVAL, step)
    real = sample_mixture(spec, ecfg.n_real, rng)
    z = truncate_latents(rng.standard_normal((draws_for(ecfg.n_fake, ecfg.truncate), cfg.latent_dim)), ecfg.truncate)
    z = z[: ecfg.n_fake]
    fake, labels = generate(bundle.generator, z, rng)
    cover, _ = generate(bundle.generator, rng.standard_normal((ecfg.coverage_samples, cfg.latent_dim)), rng)
    fd = frechet_distance(fit_gaussian(real), fit_gaussian(fake))
    r_acc, f_acc, overall = knn_two_sample(real, fake, ecfg.knn_k)
    covered, hist = mode_coverage(cover, spec, ecfg.radius_sigmas, ecfg.min_share)
    report = MetricReport(fd, r_acc, f_acc, overall, covered, hist.tolist())
    return Evaluation(report, real, fake, z, labels)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _finite_or_none(value):
    """Strict JSON has no NaN/inf; diagnostics of a diverged run are full of them."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    return value


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_finite_or_none(doc), indent=2, allow_nan=False) + "\n")


def _metric_row(step: int, r: MetricReport) -> list:
    return [step, repr(r.frechet), repr(r.knn_real_acc), repr(r.knn_fake_acc), r.modes_covered]


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {
            "step": int(r["step"]),
            "frechet": float(r["frechet"]),
            "knn_real": float(r["knn_real"]),
            "knn_fake": float(r["knn_fake"]),
            "modes_covered": int(r["modes_covered"]),
        }
        for r in rows
    ]


def manifest_for(cfg: ExperimentConfig, bundle: ModelBundle) -> dict:
    return {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "software": {
            "hmog": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
            "bit_generator": BIT_GENERATOR,
        },
        "parameter_count": bundle.generator.body_parameter_count(),
        "shared_block_parameter_count": bundle.generator.shared.parameter_count(),
        "critic_parameter_count": bundle.critic.parameter_count(),
        "notices": list(cfg.notices),
        "started": _now(),
        "finished": None,
        "status": "running",
    }


def run_experiment(cfg: ExperimentConfig, run_dir: str | Path, plots: bool = True, progress=None) -> int:
    """Train, evaluate every ``eval_every`` steps and at the end, write artifacts.

    Returns an exit status: 0 on success, 2 if a loss went non-finite (a
    ``diagnostics.json`` with the offending batch statistics is written).
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.mixture_spec()
    bundle = build_bundle(cfg)

    (run_dir / "mixture.toml").write_text(spec.to_toml())
    doc = cfg.to_dict()
    doc["mixture"] = "mixture.toml"
    (run_dir / "config.toml").write_text(dump_toml(doc))
    manifest = manifest_for(cfg, bundle)
    _write_json(run_dir / "manifest.json", manifest)

    data_source = lambda n, rng: sample_mixture(spec, n, rng)  # noqa: E731
    trainer = Trainer(bundle, data_source, cfg.train)
    total = cfg.train.total_steps
    last: Evaluation | None = None
    status = EXIT_OK
    with open(run_dir / "metrics.csv", "w", newline="") as mfh, open(run_dir / "train_log.csv", "w", newline="") as lfh:
        metrics_out, log_out = csv.writer(mfh, lineterminator="\n"), csv.writer(lfh, lineterminator="\n")
        metrics_out.writerow(METRIC_COLUMNS)
        log_out.writerow(LOG_COLUMNS)
        try:
            for _ in range(total):
                rec = trainer.run_step()
                log_out.writerow([rec["step"]] + [repr(float(rec[c])) for c in LOG_COLUMNS[1:]])
                if rec["step"] % cfg.eval_every == 0 or rec["step"] == total:
                    last = evaluate_model(bundle, cfg, spec, rec["step"])
                    metrics_out.writerow(_metric_row(rec["step"], last.report))
                    mfh.flush()
                    if progress is not None:
                        progress(rec["step"], last.report)
        except NumericalError as exc:
            _write_json(run_dir / "diagnostics.json", {"error": str(exc), **exc.diagnostics})
            status = EXIT_NUMERICAL

    if status == EXIT_OK:
        save_checkpoint(run_dir / "checkpoint.npz", bundle.modules(), {"step": np.array(trainer.step)})
        if last is not None:
            np.savez(
                run_dir / "samples.npz", real=last.real, fake=last.fake, z=last.fake_z, labels=last.fake_labels
            )
            if plots:
                from .plots import emit_plots

                emit_plots(run_dir)
    manifest["finished"] = _now()
    manifest["status"] = "ok" if status == EXIT_OK else "numerical-failure"
    manifest["steps_completed"] = trainer.step
    _write_json(run_dir / "manifest.json", manifest)
    return status


def load_run(run_dir: str | Path) -> tuple[ExperimentConfig, ModelBundle, int]:
    """Config, models with checkpointed weights, and the checkpoint step."""
    run_dir = Path(run_dir)
    ckpt = run_dir / "checkpoint.npz"
    if not ckpt.is_file():
        raise FileNotFoundError(f"no checkpoint in {run_dir}")
    cfg = parse_config(run_dir / "config.toml")
    bundle = build_bundle(cfg)
    extra = load_checkpoint(ckpt, bundle.modules())
    return cfg, bundle, int(extra.get("step", 0))


def eval_run(run_dir: str | Path) -> MetricReport:
    """Recompute the metrics of a finished run at its checkpoint step."""
    cfg, bundle, step = load_run(run_dir)
    return evaluate_model(bundle, cfg, cfg.mixture_spec(), step).report


def compare_runs(run_dirs) -> str:
    """Plain-text table of the final metrics row of each run."""
    header = f"{'run':<40} {'step':>7} {'frechet':>10} {'knn_real':>9} {'knn_fake':>9} {'modes':>6}"
    lines = [header, "-" * len(header)]
    for d in run_dirs:
        rows = read_metrics(Path(d) / "metrics.csv")
        if not rows:
            lines.append(f"{str(d):<40} {'-':>7} {'-':>10} {'-':>9} {'-':>9} {'-':>6}")
            continue
        r = rows[-1]
        lines.append(
            f"{str(d):<40} {r['step']:>7} {r['frechet']:>10.4f} {r['knn_real']:>9.3f} "
            f"{r['knn_fake']:>9.3f} {r['modes_covered']:>6}"
        )
    return "\n".join(lines)
