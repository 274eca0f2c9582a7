"""Attribute taxonomy: 40 CelebA attributes partitioned into 8 face-region groups.

The default grouping lives in ``resources/grouping.txt`` so alternative
taxonomies can be swapped in without code changes. Attribute order always
follows the canonical CelebA header order, which lets label files be indexed
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

# Canonical CelebA attribute-file header order. Label columns index into this.
CELEBA_ATTRIBUTES = (
    "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes",
    "Bald", "Bangs", "Big_Lips", "Big_Nose", "Black_Hair", "Blond_Hair",
    "Blurry", "Brown_Hair", "Bushy_Eyebrows", "Chubby", "Double_Chin",
    "Eyeglasses", "Goatee", "Gray_Hair", "Heavy_Makeup", "High_Cheekbones",
    "Male", "Mouth_Slightly_Open", "Mustache", "Narrow_Eyes", "No_Beard",
    "Oval_Face", "Pale_Skin", "Pointy_Nose", "Receding_Hairline",
    "Rosy_Cheeks", "Sideburns", "Smiling", "Straight_Hair", "Wavy_Hair",
    "Wearing_Earrings", "Wearing_Hat", "Wearing_Lipstick", "Wearing_Necklace",
    "Wearing_Necktie", "Young",
)

NUM_ATTRIBUTES = 40
NUM_GROUPS = 8


class GroupingError(ValueError):
    """Raised when a grouping config violates the partition contract."""


def canonical_name(name: str) -> str:
    """Normalize an attribute or group name (spaces and underscores are equivalent)."""
    return name.strip().replace(" ", "_")


@dataclass(frozen=True)
class AttributeGroup:
    name: str
    attribute_indices: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.attribute_indices)


@dataclass(frozen=True)
class AttributeGrouping:
    """A partition of the 40 attributes into named groups.

    Immutable after construction; safe for concurrent readers.
    """

    groups: tuple[AttributeGroup, ...]
    attribute_names: tuple[str, ...]

    def __post_init__(self):
        seen: dict[int, str] = {}
        for group in self.groups:
            for idx in group.attribute_indices:
                if not 0 <= idx < len(self.attribute_names):
                    raise GroupingError(f"attribute index {idx} out of range")
                if idx in seen:
                    raise GroupingError(
                        f"attribute {self.attribute_names[idx]!r} assigned to both "
                        f"{seen[idx]!r} and {group.name!r}"
                    )
                seen[idx] = group.name
        if len(seen) != len(self.attribute_names):
            missing = sorted(set(range(len(self.attribute_names))) - set(seen))
            names = ", ".join(self.attribute_names[i] for i in missing)
            raise GroupingError(f"attributes not assigned to any group: {names}")

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def group_of(self, attr_index: int) -> int:
        """Index of the unique group containing ``attr_index``."""
        if not 0 <= attr_index < len(self.attribute_names):
            raise IndexError(f"attribute index {attr_index} out of range")
        for gi, group in enumerate(self.groups):
            if attr_index in group.attribute_indices:
                return gi
        raise AssertionError("unreachable: grouping is a validated partition")

    def group_index(self, name: str) -> int:
        key = canonical_name(name)
        for gi, group in enumerate(self.groups):
            if canonical_name(group.name) == key:
                return gi
        raise KeyError(f"unknown group {name!r}")

    def attribute_index(self, name: str) -> int:
        key = canonical_name(name)
        for ai, attr in enumerate(self.attribute_names):
            if canonical_name(attr) == key:
                return ai
        raise KeyError(f"unknown attribute {name!r}")

    def attributes_of(self, group: int | str) -> tuple[str, ...]:
        gi = group if isinstance(group, int) else self.group_index(group)
        return tuple(self.attribute_names[i] for i in self.groups[gi].attribute_indices)


def _parse_lines(lines, source: str) -> AttributeGrouping:
    name_to_idx = {canonical_name(n): i for i, n in enumerate(CELEBA_ATTRIBUTES)}
    groups = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise GroupingError(f"{source}:{lineno}: expected '<group>: <attributes>'")
        gname, _, rest = line.partition(":")
        indices = []
        for token in rest.split(","):
            token = token.strip()
            if not token:
                continue
            key = canonical_name(token)
            if key not in name_to_idx:
                raise GroupingError(f"{source}:{lineno}: unknown attribute {token!r}")
            indices.append(name_to_idx[key])
        groups.append(AttributeGroup(canonical_name(gname), tuple(indices)))
    return AttributeGrouping(tuple(groups), CELEBA_ATTRIBUTES)


def load_grouping(path: str | Path | None = None) -> AttributeGrouping:
    """Load and validate a grouping config; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("mgmtn.resources").joinpath("grouping.txt").read_text()
        return _parse_lines(text.splitlines(), "resources/grouping.txt")
    path = Path(path)
    return _parse_lines(path.read_text().splitlines(), str(path))


def write_grouping(grouping: AttributeGrouping, path: str | Path) -> None:
    """Serialize a grouping in the same key-value format ``load_grouping`` reads."""
    lines = []
    for group in grouping.groups:
        names = ", ".join(grouping.attribute_names[i] for i in group.attribute_indices)
        lines.append(f"{group.name}: {names}")
    Path(path).write_text("\n".join(lines) + "\n")
