"""Bundled example models."""

from importlib.resources import files


def path(name: str):
    return files(__name__) / name
