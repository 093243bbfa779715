"""Shipped example configurations."""

from importlib import resources


def names():
    return sorted(p.name[:-4] for p in resources.files(__name__).iterdir() if p.name.endswith(".cfg"))


def read_text(name):
    if name not in names():
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(names())}")
    return resources.files(__name__).joinpath(f"{name}.cfg").read_text()
