"""Bundled reference systems, addressable on the command line as ``corpus:NAME``."""

from __future__ import annotations

from importlib import resources

from .io import SystemDefinition, load_definition, parse_definition

__all__ = ["names", "load", "resolve"]


def names():
    files = resources.files("ltvpassivity.systems")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def load(name: str) -> SystemDefinition:
    if name not in names():
        raise KeyError(f"unknown corpus entry {name!r}; available: {', '.join(names())}")
    res = resources.files("ltvpassivity.systems").joinpath(f"{name}.yaml")
    return parse_definition(res.read_text(), f"corpus:{name}")


def resolve(spec: str) -> SystemDefinition:
    """Load ``corpus:NAME`` from the bundle, anything else from disk."""
    if spec.startswith("corpus:"):
        return load(spec[len("corpus:"):])
    return load_definition(spec)
