"""Shared three-class category scheme.

Every module that touches labels imports the scheme from here so that
category order (and therefore probability-column order, argmax
tie-breaking, and confusion-matrix axes) is identical everywhere.
"""

from __future__ import annotations

NON_RACIST = "non_racist"
COVERT = "covert"
OVERT = "overt"

# Canonical order. Probability vectors, confusion matrices and argmax
# tie-breaks all follow this order, not alphabetical order.
CATEGORIES: tuple[str, str, str] = (NON_RACIST, COVERT, OVERT)

CATEGORY_INDEX: dict[str, int] = {c: i for i, c in enumerate(CATEGORIES)}

N_CATEGORIES = len(CATEGORIES)


def validate_category(label: str) -> str:
    """Return *label* unchanged if it is one of the three categories.

    Raises ValueError otherwise; label checks across the package funnel
    through here so error messages stay uniform.
    """
    if label not in CATEGORY_INDEX:
        raise ValueError(
            f"unknown category {label!r}; expected one of {list(CATEGORIES)}"
        )
    return label
