"""Model order identifiers shared across modules.

Kept separate so the feature index can size its slot blocks per order
without importing the lattice machinery.
"""

from __future__ import annotations

import enum


class ModelOrder(str, enum.Enum):
    """Which chain model a component is built for.

    FIRST is the plain first-order chain over base IOB2 labels. SECOND is
    the second-order chain realized as a first-order chain over label
    pairs. PRE_INDUCED is a first-order chain over the expanded alphabet
    produced by the carrier-state transform.
    """

    FIRST = "first"
    SECOND = "second"
    PRE_INDUCED = "pre-induced"

    def __str__(self) -> str:
        return self.value
