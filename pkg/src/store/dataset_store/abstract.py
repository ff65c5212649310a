"""Module with the interface to persist and read synthetic datasets."""

from abc import ABC, abstractmethod


class InterfaceDatasetStore(ABC):
    """Abstract class to manage a dataset's scenes and documents."""

    @abstractmethod
    def connect(self, create: bool = False):
        """Open the dataset, optionally creating it."""
        pass

    @abstractmethod
    def write_scene(self, scene_id, stack, meta):
        """Persist one scene's planes and metadata."""
        pass

    @abstractmethod
    def read_scene(self, scene_id):
        """Read one scene's planes and metadata."""
        pass

    @abstractmethod
    def write_document(self, name, document):
        """Persist a JSON document beside the scenes."""
        pass

    @abstractmethod
    def read_document(self, name):
        """Read a JSON document stored beside the scenes."""
        pass
