"""Arithmetic on the binary labelling of a genealogical tree.

The root is labelled 1 and the daughters of cell ``k`` are ``2k`` (new pole,
type N) and ``2k + 1`` (old pole, type O).  Python integers are unbounded, so
labels deep in a comb (generation 300 and beyond) are materialised exactly.
"""
from __future__ import annotations

import enum


class LineageError(ValueError):
    """Raised for labels outside the domain of a lineage operation."""


class Pole(str, enum.Enum):
    N = "N"
    O = "O"  # noqa: E741

    @classmethod
    def from_bit(cls, bit: int) -> "Pole":
        return cls.O if bit else cls.N


def _check(label: int) -> int:
    if isinstance(label, bool) or int(label) != label or label < 1:
        raise LineageError(f"invalid cell label {label!r}")
    return int(label)


def generation(label: int) -> int:
    """Generation of a cell; the root is generation 0."""
    return _check(label).bit_length() - 1


def mother(label: int) -> int:
    label = _check(label)
    if label == 1:
        raise LineageError("the root cell has no mother")
    return label >> 1


def daughters(label: int) -> tuple[int, int]:
    """(new pole, old pole) daughters of ``label``."""
    label = _check(label)
    return 2 * label, 2 * label + 1


def pole_type(label: int) -> Pole:
    label = _check(label)
    if label == 1:
        raise LineageError("the type of the root cell is not observable")
    return Pole.from_bit(label & 1)


def type_sequence(label: int) -> list[Pole]:
    """Types along the lineage, oldest ancestor first and the cell itself last.

    The generation-1 ancestor is dropped since its type is unknown, so a cell of
    generation ``g`` gets ``g - 1`` entries.
    """
    g = generation(label)
    if g < 2:
        raise LineageError(f"cell {label} is in generation {g}; types are known from generation 2 on")
    return [Pole.from_bit((label >> i) & 1) for i in range(g - 2, -1, -1)]


def consecutive_poles(label: int) -> tuple[int, Pole]:
    """Length and type of the run of identical poles ending at the cell."""
    g = generation(label)
    if g < 2:
        raise LineageError(f"cell {label} is in generation {g}; types are known from generation 2 on")
    bit = label & 1
    # Trailing run of `bit` in the lowest g-1 binary digits.
    x = label if bit else ~label
    run = ((x + 1) & -(x + 1)).bit_length() - 1
    return min(run, g - 1), Pole.from_bit(bit)


def comb_labels(gen: int) -> tuple[int, int]:
    """(new pole, old pole) labels of the generation-``gen`` cells of the comb.

    The comb is the lineage of cells cumulating old poles, labelled
    ``2**(l + 1) - 1``, plus the new-pole sisters of those cells.
    """
    if int(gen) != gen or gen < 1:
        raise LineageError(f"comb generations start at 1, got {gen!r}")
    spine = (1 << (int(gen) + 1)) - 1
    return spine - 1, spine


def spine_label(gen: int) -> int:
    """Label of the cell that cumulated ``gen`` old poles (``gen = 0`` is the root)."""
    if int(gen) != gen or gen < 0:
        raise LineageError(f"invalid generation {gen!r}")
    return (1 << (int(gen) + 1)) - 1


def is_comb_label(label: int) -> bool:
    """True for the root, the spine cells and their new-pole sisters."""
    label = _check(label)
    return label == 1 or (label | 1) + 1 == 1 << label.bit_length()


def format_types(types: list[Pole]) -> str:
    return "".join(p.value for p in types)
