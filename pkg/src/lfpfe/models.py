"""Building networks from configs and storing them in checkpoints."""

from __future__ import annotations

import numpy as np

from .autodiff import CheckpointError, load_checkpoint, save_checkpoint
from .crnet import CRNet
from .dnnet import DNNet
from .pfe import ArchitectureMask

FORMAT = "lfpfe-model/1"


def build_model(config: dict, seed: int = 0, arches: list[ArchitectureMask] | None = None):
    rng = np.random.default_rng(seed)
    kind = config.get("kind")
    if kind == "cr":
        return CRNet(config["m"], config["n"], config["s"], config["stages"], config["units"],
                     config["channels"], rng, normalize_cms=config.get("normalize_cms", False), arches=arches)
    if kind == "dn":
        return DNNet(config["m"], config["n"], config["stages"], config["units"], config["channels"], rng,
                     ca_layout=config.get("ca_layout", "per_view"), arches=arches)
    raise CheckpointError(f"unknown model kind {kind!r}")


def model_arches(model) -> list[ArchitectureMask] | None:
    mods = [st for st in model.stages] if model.config()["kind"] == "cr" else [st.pfe for st in model.stages]
    if all(m.arch is None for m in mods):
        return None
    return [m.arch if m.arch is not None else ArchitectureMask.template(m.units) for m in mods]


def gate_mode(model) -> str:
    banks = model.gate_banks()
    return banks[0].mode if banks else "pruned"


def save_model(model, path, extra: dict | None = None) -> None:
    arches = model_arches(model)
    meta = {
        "format": FORMAT,
        "config": model.config(),
        "gate_mode": gate_mode(model),
        "arches": None if arches is None else [a.to_dict() for a in arches],
    }
    if extra:
        meta["extra"] = extra
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path):
    """Rebuild a model saved by :func:`save_model`; returns ``(model, meta)``."""
    tensors, meta = load_checkpoint(path)
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported model format {meta.get('format')!r}")
    arches = meta.get("arches")
    arches = None if arches is None else [ArchitectureMask.from_dict(a) for a in arches]
    model = build_model(meta["config"], arches=arches)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if meta.get("gate_mode") in ("template", "sampled", "hard"):
        model.set_gate_mode(meta["gate_mode"])
    return model, meta


def live_parameter_count(model, template: bool = False) -> int:
    """Weights the forward pass can touch; gate probabilities are excluded.

    A template model in hard mode is counted as its pruned equivalent unless
    ``template`` is set.
    """
    if template or gate_mode(model) != "hard":
        return model.num_weights()
    return model.prune().num_weights()


def template_parameter_count(config: dict) -> int:
    return build_model({**config}).num_weights()
