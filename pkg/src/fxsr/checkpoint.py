"""Checkpoint serialisation for training state.

A checkpoint is a single array archive holding every tensor needed to
continue training bit-exactly: both networks' parameters and buffers, both
optimizers' moments and step counts, and the sampler's RNG state. The
manifest carries the full training configuration verbatim, so a checkpoint
is self-describing for inference-only consumers.

Manifests contain no timestamps on purpose: a resumed run must be able to
reproduce the original byte-for-byte at the array level, and deterministic
manifests make whole-archive comparisons meaningful too.
"""

import numpy as np
import torch

from . import __version__
from .archive import load_archive, save_archive
from .errors import CheckpointError
from .generator import FlexibleGenerator, GeneratorConfig

CHECKPOINT_KIND = "fxsr-checkpoint"


def _module_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{key}": value.detach().cpu().numpy()
        for key, value in module.state_dict().items()
    }


def _optimizer_arrays(prefix: str, optimizer: torch.optim.Optimizer,
                      param_names: list[str]) -> dict[str, np.ndarray]:
    arrays = {}
    state = optimizer.state_dict()["state"]
    for idx, name in enumerate(param_names):
        if idx not in state:
            continue  # parameter not yet stepped
        entry = state[idx]
        arrays[f"{prefix}/{name}/step"] = entry["step"].detach().cpu().numpy()
        arrays[f"{prefix}/{name}/exp_avg"] = entry["exp_avg"].detach().cpu().numpy()
        arrays[f"{prefix}/{name}/exp_avg_sq"] = (
            entry["exp_avg_sq"].detach().cpu().numpy()
        )
    return arrays


def _load_module(prefix: str, module: torch.nn.Module,
                 arrays: dict[str, np.ndarray], path) -> None:
    state = {}
    reference = module.state_dict()
    for key, ref in reference.items():
        full = f"{prefix}/{key}"
        if full not in arrays:
            raise CheckpointError(f"{path}: missing array {full!r}")
        tensor = torch.from_numpy(arrays[full])
        if tensor.shape != ref.shape:
            raise CheckpointError(
                f"{path}: array {full!r} has shape {tuple(tensor.shape)}, "
                f"expected {tuple(ref.shape)}"
            )
        state[key] = tensor.to(ref.dtype)
    module.load_state_dict(state)


def _load_optimizer(prefix: str, optimizer: torch.optim.Optimizer,
                    param_names: list[str], params: list[torch.nn.Parameter],
                    arrays: dict[str, np.ndarray]) -> None:
    sd = optimizer.state_dict()
    state = {}
    for idx, (name, param) in enumerate(zip(param_names, params)):
        step_key = f"{prefix}/{name}/step"
        if step_key not in arrays:
            continue
        state[idx] = {
            "step": torch.from_numpy(arrays[step_key]).to(torch.float32),
            "exp_avg": torch.from_numpy(
                arrays[f"{prefix}/{name}/exp_avg"]
            ).to(param.dtype),
            "exp_avg_sq": torch.from_numpy(
                arrays[f"{prefix}/{name}/exp_avg_sq"]
            ).to(param.dtype),
        }
    sd["state"] = state
    optimizer.load_state_dict(sd)


def save_state(path, state) -> None:
    """Write a TrainState to disk; see fxsr.trainer.TrainState."""
    gen_names = [name for name, _ in state.generator.named_parameters()]
    disc_names = [name for name, _ in state.discriminator.named_parameters()]
    arrays = {}
    arrays.update(_module_arrays("gen", state.generator))
    arrays.update(_module_arrays("disc", state.discriminator))
    arrays.update(_optimizer_arrays("optg", state.opt_g, gen_names))
    arrays.update(_optimizer_arrays("optd", state.opt_d, disc_names))
    arrays["rng/torch"] = torch.get_rng_state().numpy()
    manifest = {
        "kind": CHECKPOINT_KIND,
        "package_version": __version__,
        "iteration": int(state.iteration),
        "config": state.config.to_dict(),
        "numpy_rng": state.rng.bit_generator.state,
    }
    save_archive(path, manifest, arrays)


def load_state(path):
    """Reconstruct a TrainState exactly as saved."""
    from .trainer import TrainConfig, init_state

    manifest, arrays = load_archive(path)
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a training checkpoint")
    config = TrainConfig.from_dict(manifest["config"])
    state = init_state(config)
    _load_module("gen", state.generator, arrays, path)
    _load_module("disc", state.discriminator, arrays, path)
    gen_named = list(state.generator.named_parameters())
    disc_named = list(state.discriminator.named_parameters())
    _load_optimizer("optg", state.opt_g, [n for n, _ in gen_named],
                    [p for _, p in gen_named], arrays)
    _load_optimizer("optd", state.opt_d, [n for n, _ in disc_named],
                    [p for _, p in disc_named], arrays)
    state.iteration = int(manifest["iteration"])
    rng_state = manifest["numpy_rng"]
    try:
        state.rng.bit_generator.state = rng_state
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid RNG state: {exc}") from exc
    if "rng/torch" in arrays:
        torch.set_rng_state(torch.from_numpy(arrays["rng/torch"]))
    return state


def import_generator(path, generator: torch.nn.Module) -> int:
    """Copy generator weights from a checkpoint into an existing model.

    Warm-starts a run from an earlier one (typically a pixel-loss
    pretrain). Architectures must match exactly; the critic, optimizer
    moments and iteration counter are not imported. Returns the source
    checkpoint's iteration for logging.
    """
    manifest, arrays = load_archive(path)
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a training checkpoint")
    _load_module("gen", generator, arrays, path)
    return int(manifest.get("iteration", 0))


def load_generator(path) -> tuple[FlexibleGenerator, dict]:
    """Load just the generator for inference; returns (model, manifest)."""
    manifest, arrays = load_archive(path)
    if manifest.get("kind") != CHECKPOINT_KIND:
        raise CheckpointError(f"{path} is not a training checkpoint")
    gen_config = GeneratorConfig.from_dict(manifest["config"]["generator"])
    model = FlexibleGenerator(gen_config)
    _load_module("gen", model, arrays, path)
    model.eval()
    model.requires_grad_(False)
    return model, manifest
