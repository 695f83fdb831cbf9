"""Checkpoint container for generator/discriminator training state.

A checkpoint is one torch-serialized record holding a format version, the
architecture fingerprints, the parameter and optimizer state dicts, the
iteration counter, and the training configuration. Loading verifies the
version and fingerprints before touching any parameters.
"""

import hashlib

import torch

from .errors import CheckpointError

FORMAT_VERSION = 1


def state_dict_digest(*state_dicts):
    """Canonical sha256 over named tensors (order-independent)."""
    h = hashlib.sha256()
    for state in state_dicts:
        for name, tensor in sorted(state.items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def parameter_digest(*modules):
    return state_dict_digest(*(m.state_dict() for m in modules))


def save_checkpoint(path, generator, discriminator, opt_g, opt_d, iteration, config_dict):
    record = {
        "format_version": FORMAT_VERSION,
        "generator_fingerprint": generator.fingerprint(),
        "discriminator_fingerprint": discriminator.fingerprint(),
        "iteration": iteration,
        "config": dict(config_dict),
        "generator": generator.state_dict(),
        "discriminator": discriminator.state_dict(),
        "opt_g": opt_g.state_dict(),
        "opt_d": opt_d.state_dict(),
    }
    torch.save(record, path)
    return path


def read_checkpoint(path):
    record = torch.load(path, map_location="cpu", weights_only=False)
    version = record.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version} != {FORMAT_VERSION}")
    return record


def load_generator(path, generator):
    """Restore generator parameters after verifying the fingerprint."""
    record = read_checkpoint(path)
    if record["generator_fingerprint"] != generator.fingerprint():
        raise CheckpointError(
            f"{path}: generator architecture fingerprint mismatch "
            f"({record['generator_fingerprint'][:12]}... != {generator.fingerprint()[:12]}...)"
        )
    generator.load_state_dict(record["generator"])
    return record


def load_training_state(path, generator, discriminator, opt_g, opt_d):
    """Restore everything needed to continue a run; returns the record."""
    record = load_generator(path, generator)
    if record["discriminator_fingerprint"] != discriminator.fingerprint():
        raise CheckpointError(f"{path}: discriminator architecture fingerprint mismatch")
    discriminator.load_state_dict(record["discriminator"])
    opt_g.load_state_dict(record["opt_g"])
    opt_d.load_state_dict(record["opt_d"])
    return record
