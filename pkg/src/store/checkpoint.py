"""Module with checkpoint persistence: a JSON header plus ordered MST1 tensors.

Layout::

    <dir>/header.json
    <dir>/params/<index>.mst
    <dir>/adam/<index>.m.mst      (optional)
    <dir>/adam/<index>.v.mst      (optional)

A training run directory holds one such directory per saved step and a
``latest.json`` pointer to the most recent one.
"""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import torch

from src.model.unet import ModelConfig, VelocityUNet
from src.store.dataset_store.file_store import dump_json
from src.store.tensor_file import read_tensor, write_tensor
from src.utils.errors import DataFormatError

logger = logging.getLogger(__name__)

FORMAT = "monetlab-checkpoint-1"
HEADER = "header.json"
LATEST = "latest.json"


@dataclass
class Checkpoint:
    """A loaded checkpoint.

    Attributes:
        config (ModelConfig): Network shape.
        params (OrderedDict): Parameter name to float32 array, in registration order.
        header (dict): Full header document.
        moments (dict, optional): Parameter name to (first, second) Adam moments.
    """

    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    header: dict = field(default_factory=dict)
    moments: Optional[Dict[str, Tuple[np.ndarray, np.ndarray]]] = None

    @property
    def step(self) -> int:
        """Training step the checkpoint was taken at."""
        return int(self.header.get("step", 0))

    def build_model(self) -> VelocityUNet:
        """Instantiate the network and copy the stored parameters into it."""
        model = VelocityUNet(self.config)
        model.load_state_dict(
            {name: torch.from_numpy(array.copy()) for name, array in self.params.items()},
            strict=True,
        )
        return model

    def restore_optimizer(self, optimizer: torch.optim.Adam, model: VelocityUNet) -> None:
        """Put the stored Adam moments and step counter back into ``optimizer``."""
        if self.moments is None:
            return
        adam_step = float(self.header["optimizer"]["step"])
        for name, p in model.named_parameters():
            m, v = self.moments[name]
            optimizer.state[p] = {
                "step": torch.tensor(adam_step),
                "exp_avg": torch.from_numpy(m.copy()),
                "exp_avg_sq": torch.from_numpy(v.copy()),
            }


def save_checkpoint(
    path,
    model: VelocityUNet,
    optimizer: Optional[torch.optim.Adam] = None,
    step: int = 0,
    seed: int = 0,
    metrics: dict = None,
    extra: dict = None,
    durable: bool = False,
) -> Path:
    """Write a checkpoint directory.

    Args:
        path (str | Path): Destination directory.
        model (VelocityUNet): Network to persist.
        optimizer (torch.optim.Adam, optional): Adam state to persist with it.
        step (int, optional): Training step. Defaults to 0.
        seed (int, optional): Training seed. Defaults to 0.
        metrics (dict, optional): Metric snapshot (loss, val_loss, ...).
        extra (dict, optional): Further header entries (run config, training ids).
        durable (bool, optional): fsync every tensor. Defaults to False.

    Raises:
        DataFormatError: On I/O failure.

    Returns:
        Path: The checkpoint directory.
    """
    path = Path(path)
    try:
        (path / "params").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataFormatError(f"Cannot create checkpoint '{path}': {e}") from e

    tensors = []
    adam_step = None
    for index, (name, p) in enumerate(model.named_parameters()):
        write_tensor(path / "params" / f"{index:04d}.mst", p, durable=durable)
        tensors.append({"name": name, "shape": list(p.shape)})

        state = optimizer.state.get(p) if optimizer is not None else None
        if state:
            (path / "adam").mkdir(exist_ok=True)
            write_tensor(path / "adam" / f"{index:04d}.m.mst", state["exp_avg"], durable=durable)
            write_tensor(path / "adam" / f"{index:04d}.v.mst", state["exp_avg_sq"], durable=durable)
            adam_step = int(state["step"])

    header = {
        "format": FORMAT,
        "model_config": model.config.model_dump(mode="json"),
        "step": int(step),
        "seed": int(seed),
        "metrics": metrics or {},
        "tensors": tensors,
        "optimizer": None,
    }
    if adam_step is not None:
        group = optimizer.param_groups[0]
        header["optimizer"] = {
            "lr": group["lr"],
            "betas": list(group["betas"]),
            "eps": group["eps"],
            "step": adam_step,
        }
    header.update(extra or {})

    try:
        (path / HEADER).write_text(dump_json(header))
    except OSError as e:
        raise DataFormatError(f"Cannot write checkpoint header '{path}': {e}") from e

    logger.info("Saved checkpoint at step %s to %s", step, path)
    return path


def mark_latest(run_dir, checkpoint_dir) -> None:
    """Point ``<run_dir>/latest.json`` at a checkpoint directory."""
    run_dir = Path(run_dir)
    (run_dir / LATEST).write_text(dump_json({"path": Path(checkpoint_dir).name}))


def resolve_checkpoint(path) -> Path:
    """Return the checkpoint directory for a checkpoint or a run directory."""
    path = Path(path)
    if (path / HEADER).is_file():
        return path
    if (path / LATEST).is_file():
        try:
            target = json.loads((path / LATEST).read_text())["path"]
        except (OSError, json.JSONDecodeError, KeyError) as e:
            raise DataFormatError(f"Corrupt checkpoint pointer in '{path}': {e}") from e
        return path / target
    raise DataFormatError(f"No checkpoint found at '{path}'")


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint, validating every tensor shape against its model config.

    Args:
        path (str | Path): Checkpoint directory or a run directory with ``latest.json``.

    Raises:
        DataFormatError: If the header is unreadable or a tensor is missing or misshapen.

    Returns:
        Checkpoint: The loaded checkpoint.
    """
    path = resolve_checkpoint(path)
    try:
        header = json.loads((path / HEADER).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataFormatError(f"Cannot read checkpoint header '{path}': {e}") from e

    if header.get("format") != FORMAT:
        raise DataFormatError(f"'{path}' is not a {FORMAT} checkpoint")

    config = ModelConfig.model_validate(header["model_config"])
    expected = VelocityUNet(config).expected_shapes()
    names = [t["name"] for t in header["tensors"]]
    if names != list(expected):
        raise DataFormatError(f"Checkpoint '{path}' tensor names do not match its model config")

    def read_shaped(file: Path, name: str) -> np.ndarray:
        array = read_tensor(file)
        if array.shape != expected[name]:
            raise DataFormatError(
                f"Checkpoint '{path}': tensor {name} has shape {array.shape}, "
                f"expected {expected[name]}"
            )
        return array

    params = OrderedDict()
    moments = {} if header.get("optimizer") else None
    for index, name in enumerate(names):
        params[name] = read_shaped(path / "params" / f"{index:04d}.mst", name)
        if moments is not None:
            moments[name] = (
                read_shaped(path / "adam" / f"{index:04d}.m.mst", name),
                read_shaped(path / "adam" / f"{index:04d}.v.mst", name),
            )

    logger.debug("Loaded checkpoint %s (step %s)", path, header.get("step"))
    return Checkpoint(config=config, params=params, header=header, moments=moments)
