from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class GroupPartition:
    """Hard assignment of agent ids to conversational groups.

    ``groups`` holds groups of two or more ids; everyone else is a singleton.
    """

    groups: tuple = ()
    singletons: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        groups = tuple(frozenset(g) for g in self.groups)
        singletons = frozenset(self.singletons)
        seen = set(singletons)
        for g in groups:
            if len(g) < 2:
                raise ValueError(f"group {sorted(g)} has fewer than two members")
            if seen & g:
                raise ValueError(f"ids {sorted(seen & g)} assigned twice")
            seen |= g
        # canonical order so equal partitions compare equal
        groups = tuple(sorted(groups, key=lambda g: sorted(g)))
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "singletons", singletons)

    @classmethod
    def from_labels(cls, ids, labels) -> "GroupPartition":
        """Build from per-id block labels; blocks of size one become singletons."""
        blocks = {}
        for i, lab in zip(ids, labels):
            blocks.setdefault(lab, set()).add(i)
        groups = [b for b in blocks.values() if len(b) >= 2]
        singles = set().union(*[b for b in blocks.values() if len(b) < 2]) if blocks else set()
        return cls(tuple(groups), frozenset(singles))

    @classmethod
    def from_groups(cls, groups, universe) -> "GroupPartition":
        """Groups as listed (size-one entries allowed); ids not mentioned become singletons."""
        real = [frozenset(g) for g in groups if len(g) >= 2]
        used = set().union(*real) if real else set()
        return cls(tuple(real), frozenset(set(universe) - used))

    @property
    def universe(self) -> frozenset:
        return self.singletons.union(*self.groups)

    def same_group(self, a, b) -> bool:
        return any(a in g and b in g for g in self.groups)

    def relabel(self, mapping) -> "GroupPartition":
        return GroupPartition(
            tuple(frozenset(mapping[i] for i in g) for g in self.groups),
            frozenset(mapping[i] for i in self.singletons),
        )
