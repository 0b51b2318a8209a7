"""Pluggable model-backend interfaces and the role registry.

Every heavyweight model the pipeline touches (captioner, segmenter,
inpainter, embedding-inversion trainer, super-resolution upscaler, depth
estimator, image encoder, image source) sits behind a role interface. No
module above this one names a concrete model; runs bind role -> backend id
in the run config. Deterministic mocks ship for every role so the whole
pipeline is testable on a desk.
"""

import hashlib
from typing import Callable

import numpy as np

from ..errors import ConfigurationError

ROLES = (
    "captioner",
    "segmenter",
    "inpainter",
    "inversion_trainer",
    "upscaler",
    "depth",
    "encoder",
    "image_source",
)


def conditioning_hash(vector: np.ndarray | None) -> str:
    """Stable hash of an opaque conditioning vector.

    Backends that cannot interpret conditioning (mocks) key deterministic
    behavior off this hash.
    """
    h = hashlib.sha256()
    if vector is not None:
        arr = np.ascontiguousarray(np.asarray(vector, dtype=np.float32))
        h.update(arr.tobytes())
    return h.hexdigest()


# (role, implementation id) -> factory(options dict) -> backend instance
_FACTORIES: dict[tuple[str, str], Callable[[dict], object]] = {}


def register_backend(role: str, impl_id: str):
    if role not in ROLES:
        raise ConfigurationError(f"unknown backend role {role!r}; roles are {ROLES}")

    def wrap(factory):
        _FACTORIES[(role, impl_id)] = factory
        return factory

    return wrap


def available_ids(role: str) -> list[str]:
    return sorted(impl for (r, impl) in _FACTORIES if r == role)


def create_backend(role: str, impl_id: str, options: dict | None = None):
    factory = _FACTORIES.get((role, impl_id))
    if factory is None:
        raise ConfigurationError(
            f"no backend {impl_id!r} for role {role!r}; available: {available_ids(role)}"
        )
    return factory(dict(options or {}))


class BackendRegistry:
    """Immutable role -> backend bindings for one pipeline run."""

    def __init__(self, instances: dict[str, object], bindings: dict[str, str] | None = None):
        self._instances = dict(instances)
        self.bindings = dict(bindings or {})

    def resolve(self, role: str):
        if role not in self._instances:
            raise ConfigurationError(
                f"backend role {role!r} is unbound; bound roles: {sorted(self._instances)}; "
                f"available implementations for {role!r}: {available_ids(role)}"
            )
        return self._instances[role]

    def bound_roles(self) -> list[str]:
        return sorted(self._instances)


def build_registry(config: dict) -> BackendRegistry:
    """Build a registry from a run-config backends block.

    Each role maps to an implementation id string, or to a table
    {id = "...", <option> = ...} when the adapter needs paths or knobs.
    """
    instances: dict[str, object] = {}
    bindings: dict[str, str] = {}
    for role, spec in config.items():
        if role not in ROLES:
            raise ConfigurationError(f"unknown backend role {role!r}; roles are {ROLES}")
        if isinstance(spec, str):
            impl_id, options = spec, {}
        elif isinstance(spec, dict):
            if "id" not in spec:
                raise ConfigurationError(f"backends.{role} table must carry an 'id' key")
            options = dict(spec)
            impl_id = options.pop("id")
        else:
            raise ConfigurationError(f"backends.{role} must be an id string or a table with 'id'")
        instances[role] = create_backend(role, impl_id, options)
        bindings[role] = impl_id
    return BackendRegistry(instances, bindings)


from . import mocks  # noqa: E402,F401  (registers the mock implementations)
from .mocks import mock_contracts  # noqa: E402,F401
