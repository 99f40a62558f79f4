"""Parameter checkpoints as ``.npz`` archives keyed by parameter name."""

from __future__ import annotations

from collections.abc import Mapping
from pathlib import Path

import numpy as np

from .layers import Module


def state_dict(modules: Mapping[str, Module]) -> dict[str, np.ndarray]:
    """Copy of every named parameter; names already carry their module prefix."""
    state: dict[str, np.ndarray] = {}
    for module in modules.values():
        for p in module.parameters():
            if p.name in state:
                raise ValueError(f"duplicate parameter name {p.name!r} in checkpoint")
            state[p.name] = p.data.copy()
    return state


def save_checkpoint(path: str | Path, modules: Mapping[str, Module], extra: Mapping[str, np.ndarray] | None = None) -> None:
    state = state_dict(modules)
    for key, value in (extra or {}).items():
        name = f"extra/{key}"
        if name in state:
            raise ValueError(f"extra array {key!r} clashes with a parameter name")
        state[name] = np.asarray(value)
    with open(path, "wb") as fh:
        np.savez(fh, **state)


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        return {name: archive[name] for name in archive.files}


def load_checkpoint(path: str | Path, modules: Mapping[str, Module]) -> dict[str, np.ndarray]:
    """Copy stored values into the live parameters; returns the extra arrays.

    Every live parameter must be present with the same shape, and the file
    may not contain parameters the modules do not have.
    """
    arrays = load_arrays(path)
    extra = {k[len("extra/"):]: v for k, v in arrays.items() if k.startswith("extra/")}
    stored = {k: v for k, v in arrays.items() if not k.startswith("extra/")}
    live = {p.name: p for module in modules.values() for p in module.parameters()}
    missing = sorted(set(live) - set(stored))
    unexpected = sorted(set(stored) - set(live))
    if missing or unexpected:
        raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {unexpected}")
    for name, p in live.items():
        if stored[name].shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name}: {stored[name].shape} vs {p.data.shape}")
        p.data[...] = stored[name]
    return extra
