"""Adapter seam between the wire service and detection models.

An adapter provides the two pipeline stages:

    propose(image, width, height, superset_class, frame_index)
        -> list of proposals {"box": [x, y, w, h], "detector_score": float,
           "ref": opaque}
    verify(patch, query, ref)
        -> (verdict: bool, justification: str)

``query`` is the decoded request query dict (superset_class, predicate,
description, system_prompt); real vision-language adapters are expected to
build their prompt from ``description``/``system_prompt`` plus their
template, while the mock consults ``predicate`` against its annotations.
``ref`` is whatever the adapter attached to the proposal (the mock carries
the matching annotation record; model adapters typically carry None).

Adapters also declare:

    name       short identifier used by --adapter
    reentrant  False serializes all calls behind one lock

Third-party adapters register under the ``mlbridge.adapters`` entry-point
group; each may ship a prompt template at mlbridge/prompts/<name>.toml
(or its own package data), loaded via ``load_prompt_template``.
"""
from __future__ import annotations

from importlib import metadata, resources


class AdapterLoadFailure(Exception):
    pass


def load_adapter_class(name: str):
    for ep in metadata.entry_points(group="mlbridge.adapters"):
        if ep.name == name:
            try:
                return ep.load()
            except Exception as exc:
                raise AdapterLoadFailure(f"adapter {name!r} failed to import: {exc}") from exc
    known = sorted(ep.name for ep in metadata.entry_points(group="mlbridge.adapters"))
    raise AdapterLoadFailure(f"no adapter named {name!r}; installed: {known or 'none'}")


def load_prompt_template(name: str) -> dict:
    """Per-adapter prompt configuration; empty dict when none is shipped."""
    try:
        text = (resources.files("mlbridge") / "prompts" / f"{name}.toml").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return {}
    try:
        import tomllib
    except ImportError:
        import tomli as tomllib
    return tomllib.loads(text)
