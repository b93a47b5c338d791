import abc
import hashlib
import json
import logging
import os
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import typing
import zlib
from importlib import metadata
from typing import (
    Any,
    BinaryIO,
    Callable,
    Dict,
    Iterable,
    List,
    Optional,
    TypeVar,
)

import numpy as np

logger = logging.getLogger(__name__)


def read_toml_data(
    toml_config_file: pathlib.Path,
    loader: Callable[[BinaryIO], Dict[str, Any]] = tomllib.load
) -> Dict[str, Any]:
    """Read contents of toml file.

    Args:
        toml_config_file: path to toml config file.
        loader: toml loader function.

    Returns: contents of toml file

    """
    with open(toml_config_file, "rb") as f:
        return loader(f)


def file_digest(path: pathlib.Path, chunk_size: int = 1 << 16) -> str:
    """Get the sha256 hex digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(data: Dict[str, Any]) -> str:
    """Hash a configuration document independent of key order."""
    text = json.dumps(data, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_seed(seed: int, stage: str) -> np.random.SeedSequence:
    """Derive a stage specific seed sequence from the top-level seed.

    The stage name is folded in through CRC32, so adding or reordering stages
    never shifts the random streams of the other stages.
    """
    return np.random.SeedSequence([seed, zlib.crc32(stage.encode("utf-8"))])


def version_from_distribution() -> Optional[str]:
    try:
        return metadata.version("aerial_radio_map")
    except metadata.PackageNotFoundError:
        return None


def version_from_package() -> Optional[str]:
    from aerial_radio_map import __version__
    return __version__


DEFAULT_VERSION_STRATEGIES: List[Callable[[], Optional[str]]] = [
    version_from_distribution,
    version_from_package,
]


def get_tool_version(
    strategies: Optional[List[Callable[[], Optional[str]]]] = None
) -> str:
    if strategies is None:
        strategies = DEFAULT_VERSION_STRATEGIES
    for strategy in strategies:
        logger.debug("trying %s", strategy.__name__)
        result = strategy()
        if result is not None:
            return result
    return "unknown"


class LocateInputFile:
    """Search for a relative path under a list of directories in order."""

    def __init__(
        self,
        search_paths: Optional[Iterable[str]] = None,
        strict: bool = True,
    ) -> None:
        self.search_paths = list(search_paths or ['.'])
        self.strict = strict

    def __call__(self, file_name: str) -> pathlib.Path:
        """Return the first existing match.

        A non-strict locator falls back to the path under the first search
        directory and leaves the existence check to whoever opens it.
        """
        if os.path.isabs(file_name):
            if os.path.exists(file_name) or not self.strict:
                return pathlib.Path(file_name)
            raise FileNotFoundError(f"{file_name} does not exist")
        for search_path in self.search_paths:
            candidate = os.path.join(search_path, file_name)
            if os.path.exists(candidate):
                return pathlib.Path(os.path.abspath(candidate))
        if not self.strict:
            return pathlib.Path(
                os.path.abspath(os.path.join(self.search_paths[0], file_name))
            )
        raise FileNotFoundError(
            f"Unable to locate {file_name} in "
            f"{', '.join(self.search_paths)}"
        )


def stage_seed(seed: int, stage: str) -> int:
    """Unsigned 64 bit integer seed for ``stage``."""
    state = derive_seed(seed, stage).generate_state(1, dtype=np.uint64)
    return int(state[0])


class MetaClassWithAbstractClassAttrs(abc.ABCMeta):
    def __call__(cls, *args: object, **kwargs: object) -> object:
        instance: object = super().__call__(*args, **kwargs)
        abstract_attributes = {
            name
            for name in dir(instance)
            if getattr(
                getattr(instance, name), '__is_abstract_attribute__', False
            )
        }
        if abstract_attributes:
            names = ", ".join(sorted(abstract_attributes))
            raise NotImplementedError(
                f"Can't instantiate abstract class {cls.__name__} with"
                f" abstract attributes: {names}"
            )
        return instance


T = TypeVar('T')


def abstract_attribute(obj: Optional[Callable[[Any], T]] = None) -> T:
    """Mark a class attribute that subclasses must define."""
    class DummyAttribute:
        pass
    _obj = typing.cast(Any, obj)
    if obj is None:
        _obj = DummyAttribute()
    _obj.__is_abstract_attribute__ = True
    return typing.cast(T, _obj)
