"""Shipped example models: the coin changer and the railcar terminal."""

from __future__ import annotations

from importlib import resources

from ..dsl import Document, parse


def _load(name: str) -> Document:
    text = resources.files(__package__).joinpath(name).read_text(encoding="utf-8")
    return parse(text).require()


def vending_source() -> str:
    return resources.files(__package__).joinpath("vending.tm").read_text(encoding="utf-8")


def load_vending() -> Document:
    """The coin-changer model with regions A-I and the 'vending' behavior."""
    return _load("vending.tm")


def railcar_source() -> str:
    return resources.files(__package__).joinpath("railcar.tm").read_text(encoding="utf-8")


def load_railcar() -> Document:
    """One terminal of the railcar protocol with events E1-E15."""
    return _load("railcar.tm")


def vending_table_source() -> str:
    return resources.files(__package__).joinpath("vending_table.csv").read_text(encoding="utf-8")
