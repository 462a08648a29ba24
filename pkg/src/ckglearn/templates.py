"""Relation templates: map KG relations to natural-language text in both directions.

A relation is rendered forward by appending ``forward_template`` to the head
text, and in reverse by wrapping the tail text between ``reverse_prefix`` and
``reverse_suffix``.  Social-KG style registries additionally substitute the
placeholder actors PersonX/PersonY with proper names.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

PERSON_SUBSTITUTIONS = (("PersonX", "John"), ("PersonY", "Tom"))

# reserved section for registry-wide settings in registry files
_SETTINGS_SECTION = "registry"

BUILTIN_REGISTRIES = ("atomic", "conceptnet")


class RegistryError(ValueError):
    """Raised for malformed registry files or unresolvable relation names."""


def substitute_persons(text: str) -> str:
    """Replace every PersonX with "John" and every PersonY with "Tom"."""
    for placeholder, name in PERSON_SUBSTITUTIONS:
        text = text.replace(placeholder, name)
    return text


@dataclass(frozen=True)
class Relation:
    """One relation type plus its forward and reverse text templates.

    ``reverse_suffix`` may be empty (single-segment reverse templates);
    at least one of the two reverse segments must be non-empty.
    """

    name: str
    forward_template: str
    reverse_prefix: str
    reverse_suffix: str = ""

    def __post_init__(self) -> None:
        if not self.name:
            raise RegistryError("relation name must be non-empty")
        if not self.forward_template:
            raise RegistryError(f"relation {self.name!r}: forward template must be non-empty")
        if not (self.reverse_prefix or self.reverse_suffix):
            raise RegistryError(
                f"relation {self.name!r}: at least one reverse segment must be non-empty"
            )


@dataclass
class TemplateRegistry:
    """Collection of relations keyed by name, plus registry-wide settings."""

    relations: dict[str, Relation] = field(default_factory=dict)
    substitute_persons: bool = False
    name: str = ""

    def add(self, relation: Relation) -> None:
        if relation.name in self.relations:
            raise RegistryError(f"duplicate relation name {relation.name!r}")
        self.relations[relation.name] = relation

    def resolve(self, name: str) -> Relation:
        try:
            return self.relations[name]
        except KeyError:
            raise RegistryError(f"unknown relation {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.relations

    def __len__(self) -> int:
        return len(self.relations)

    def render(self, text: str) -> str:
        """Apply the registry's post-assembly text substitutions."""
        if self.substitute_persons:
            return substitute_persons(text)
        return text

    def to_text(self) -> str:
        """Serialize back to the line-oriented registry file format."""
        lines = [f"[{_SETTINGS_SECTION}]", f"substitute_persons = {'on' if self.substitute_persons else 'off'}", ""]
        for relation in self.relations.values():
            lines.append(f"[{relation.name}]")
            lines.append(f"forward = {relation.forward_template}")
            if relation.reverse_prefix:
                lines.append(f"reverse_prefix = {relation.reverse_prefix}")
            if relation.reverse_suffix:
                lines.append(f"reverse_suffix = {relation.reverse_suffix}")
            lines.append("")
        return "\n".join(lines)


def _make_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # relation names and templates are case-sensitive
    return parser


def parse_registry(text: str, name: str = "") -> TemplateRegistry:
    """Parse a registry from its line-oriented key-value text form.

    One section per relation with keys ``forward``, ``reverse_prefix`` and
    optional ``reverse_suffix``; the reserved ``[registry]`` section holds
    the ``substitute_persons`` flag.
    """
    parser = _make_parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise RegistryError(f"malformed registry file: {exc}") from exc

    registry = TemplateRegistry(name=name)
    if parser.has_section(_SETTINGS_SECTION):
        try:
            registry.substitute_persons = parser.getboolean(
                _SETTINGS_SECTION, "substitute_persons", fallback=False
            )
        except ValueError as exc:
            raise RegistryError(f"bad substitute_persons value: {exc}") from exc

    for section in parser.sections():
        if section == _SETTINGS_SECTION:
            continue
        options = parser[section]
        forward = options.get("forward", "").strip()
        if not forward:
            raise RegistryError(f"relation {section!r}: missing forward template")
        registry.add(
            Relation(
                name=section,
                forward_template=forward,
                reverse_prefix=options.get("reverse_prefix", "").strip(),
                reverse_suffix=options.get("reverse_suffix", "").strip(),
            )
        )
    if not registry.relations:
        raise RegistryError("registry defines no relations")
    return registry


def load_registry(path: str | Path) -> TemplateRegistry:
    """Load a registry file from disk."""
    path = Path(path)
    return parse_registry(path.read_text(encoding="utf-8"), name=path.stem)


def builtin_registry(name: str) -> TemplateRegistry:
    """Load one of the registries shipped with the package ("atomic", "conceptnet")."""
    if name not in BUILTIN_REGISTRIES:
        raise RegistryError(
            f"unknown builtin registry {name!r}; available: {', '.join(BUILTIN_REGISTRIES)}"
        )
    text = resources.files("ckglearn.data").joinpath(f"{name}.cfg").read_text(encoding="utf-8")
    return parse_registry(text, name=name)
