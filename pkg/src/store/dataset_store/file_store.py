"""Module for managing a synthetic dataset stored as a directory tree.

Layout::

    <root>/manifest.json
    <root>/stats.json
    <root>/timelapse_manifest.json
    <root>/scenes/<id>/bf.mst
    <root>/scenes/<id>/paint.mst
    <root>/scenes/<id>/meta.json
"""

import json
import logging
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from src.store.dataset_store.abstract import InterfaceDatasetStore
from src.store.tensor_file import read_tensor, write_tensor
from src.synthdata.render import StainStack
from src.utils.errors import DataFormatError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STATS = "stats.json"
TIMELAPSE_MANIFEST = "timelapse_manifest.json"


def dump_json(document) -> str:
    """Serialize a document the same way every time (sorted keys, fixed indent)."""
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


class FileDatasetStore(InterfaceDatasetStore):
    """Filesystem implementation of the dataset store.

    Args:
        root (str | Path): Dataset directory.
        durable (bool, optional): fsync every tensor write. Defaults to False.
    """

    def __init__(self, root, durable: bool = False):
        """Store the dataset location; nothing is touched until connect.

        Args:
            root (str | Path): Dataset directory.
            durable (bool, optional): fsync every tensor write. Defaults to False.
        """
        self.root = Path(root)
        self.durable = durable
        self.connected = False

    @property
    def scenes_dir(self) -> Path:
        """Directory holding one sub-directory per scene."""
        return self.root / "scenes"

    def connect(self, create: bool = False) -> "FileDatasetStore":
        """Open the dataset directory.

        Args:
            create (bool, optional): Create the directory tree if missing. Defaults to False.

        Raises:
            DataFormatError: If the directory is missing (and not created) or not writable.

        Returns:
            FileDatasetStore: self, for chaining.
        """
        try:
            if create:
                self.scenes_dir.mkdir(parents=True, exist_ok=True)
            elif not self.root.is_dir():
                raise DataFormatError(f"Dataset directory '{self.root}' does not exist")
        except OSError as e:
            logger.error(f"Error opening dataset '{self.root}': {e}")
            raise DataFormatError(f"Cannot open dataset '{self.root}': {e}") from e

        self.connected = True
        logger.debug("Opened dataset %s", self.root)
        return self

    def write_scene(self, scene_id: str, stack: StainStack, meta: dict) -> None:
        """Persist one scene.

        Args:
            scene_id (str): Scene identifier, used as directory name.
            stack (StainStack): Raw planes.
            meta (dict): Scene metadata (class, domain, frame_index, sequence id, ...).
        """
        directory = self.scenes_dir / scene_id
        try:
            directory.mkdir(parents=True, exist_ok=True)
            (directory / "meta.json").write_text(dump_json(meta))
        except OSError as e:
            raise DataFormatError(f"Cannot write scene '{directory}': {e}") from e

        write_tensor(directory / "bf.mst", stack.brightfield, durable=self.durable)
        write_tensor(directory / "paint.mst", stack.paint, durable=self.durable)

    def read_scene(self, scene_id: str) -> Tuple[StainStack, dict]:
        """Read one scene.

        Args:
            scene_id (str): Scene identifier.

        Returns:
            tuple: The raw StainStack and its metadata.
        """
        directory = self.scenes_dir / scene_id
        try:
            meta = json.loads((directory / "meta.json").read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataFormatError(f"Cannot read scene metadata '{directory}': {e}") from e

        stack = StainStack(
            brightfield=read_tensor(directory / "bf.mst"),
            paint=read_tensor(directory / "paint.mst"),
        )
        return stack, meta

    def read_stacks(self, scene_ids: List[str]) -> np.ndarray:
        """Read several scenes as one Nx6xHxW raw array, brightfield first."""
        return np.stack([self.read_scene(i)[0].planes() for i in scene_ids])

    def write_document(self, name: str, document: dict) -> None:
        """Write a JSON document at the dataset root."""
        path = self.root / name
        try:
            path.write_text(dump_json(document))
        except OSError as e:
            raise DataFormatError(f"Cannot write '{path}': {e}") from e

    def read_document(self, name: str) -> dict:
        """Read a JSON document from the dataset root."""
        path = self.root / name
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataFormatError(f"Cannot read '{path}': {e}") from e

    def fetch_to_dataframe(self) -> pd.DataFrame:
        """Return the manifest's scene index as a DataFrame.

        Returns:
            pd.DataFrame: One row per scene with id, split, label, domain,
                sequence_id and frame_index columns.
        """
        manifest = self.read_document(MANIFEST)
        df = pd.DataFrame(manifest["scenes"])
        logger.info(f"Fetched {len(df)} scenes from {self.root}.")
        return df
