"""Bounded labels with a non-transitive dominance relation.

A label is a pair ``(sting, antistings)`` over the integer domain ``1..q``
with ``q = d*d + 1``.  ``l1`` is dominated by ``l2`` when the sting of
``l1`` is one of the antistings of ``l2`` and not the other way around.
The relation is irreflexive and antisymmetric but not transitive, so no
code in this package may assume transitivity.

The hot-path helpers (:func:`label_less`, :func:`label_next`,
:func:`is_canceling`) skip domain checks.  :class:`LabelingScheme` wraps
them with validation for callers that handle untrusted labels.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigurationError, DimensionExceeded


class Label(NamedTuple):
    """A label: a sting and a set of antistings."""

    sting: int
    antistings: frozenset[int]

    def __str__(self) -> str:
        return format_label(self)


def make_label(sting: int, antistings: Iterable[int] = ()) -> Label:
    return Label(sting, frozenset(antistings))


def label_less(l1: Label, l2: Label) -> bool:
    """Return True when ``l1`` is dominated by ``l2``."""
    return l1.sting in l2.antistings and l2.sting not in l1.antistings


def label_leq(l1: Label, l2: Label) -> bool:
    """Reflexive closure of :func:`label_less`."""
    return l1 == l2 or label_less(l1, l2)


def is_canceling(cl: Label, l: Label) -> bool:
    """True when ``cl`` is neither equal to nor dominated by ``l``."""
    return not label_leq(cl, l)


def label_next(labels: Iterable[Label], d: int) -> Label:
    """Return a label that dominates every label in ``labels``.

    The sting is the smallest positive integer missing from every antisting
    set; the antistings are the input stings.  At most ``d`` labels are
    accepted, which keeps the union of antistings below ``q = d*d + 1``
    for well-formed inputs.
    """
    labels = set(labels)
    if len(labels) > d:
        raise DimensionExceeded(f"{len(labels)} labels exceed dimension {d}")
    used: set[int] = set()
    for lab in labels:
        used.update(lab.antistings)
    sting = 1
    while sting in used:
        sting += 1
    return Label(sting, frozenset(lab.sting for lab in labels))


def format_label(lab: Label) -> str:
    """Canonical text form ``(sting|a1,a2,...)`` with sorted antistings."""
    return f"({lab.sting}|{','.join(str(a) for a in sorted(lab.antistings))})"


def parse_label(text: str) -> Label:
    body = text.strip()
    if not (body.startswith("(") and body.endswith(")")) or "|" not in body:
        raise ValueError(f"malformed label {text!r}")
    sting, _, rest = body[1:-1].partition("|")
    antis = [int(x) for x in rest.split(",") if x]
    return Label(int(sting), frozenset(antis))


@dataclass(frozen=True)
class LabelingParams:
    """Dimension ``d`` and domain size ``q = d*d + 1`` of a labeling scheme."""

    d: int
    q: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ConfigurationError(f"dimension must be positive, got {self.d}")
        if self.q != self.d * self.d + 1:
            raise ConfigurationError(f"q must equal d*d + 1 = {self.d * self.d + 1}, got {self.q}")

    @classmethod
    def for_dimension(cls, d: int) -> LabelingParams:
        return cls(d=d, q=d * d + 1)


class LabelingScheme:
    """Validated access to the labeling operations for one set of parameters."""

    def __init__(self, params: LabelingParams):
        self.params = params

    @property
    def d(self) -> int:
        return self.params.d

    @property
    def q(self) -> int:
        return self.params.q

    def is_well_formed(self, lab: Label) -> bool:
        q = self.params.q
        if not 1 <= lab.sting <= q:
            return False
        if len(lab.antistings) > self.params.d:
            return False
        return all(1 <= a <= q for a in lab.antistings)

    def check(self, lab: Label) -> Label:
        if not self.is_well_formed(lab):
            raise ConfigurationError(f"label {format_label(lab)} is outside the scheme with d={self.d}")
        return lab

    def less(self, l1: Label, l2: Label) -> bool:
        return label_less(self.check(l1), self.check(l2))

    def canceling(self, cl: Label, l: Label) -> bool:
        return is_canceling(self.check(cl), self.check(l))

    def next(self, labels: Iterable[Label]) -> Label:
        labels = [self.check(lab) for lab in labels]
        return label_next(labels, self.params.d)

    def domain(self) -> range:
        return range(1, self.params.q + 1)
