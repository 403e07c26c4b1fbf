"""Bounded tags: vectors of labeled step/trial entries and their maintenance.

A tag holds one :class:`TagEntry` per processor identifier ``1..n``.  The
first valid entry (``chi``) decides how two tags compare.  The procedures
``clean``, ``fill_cl``, ``check_entry``, ``inc_step`` and ``inc_trial``
keep tags within bounded storage while letting processors converge on a
common label.

Every function is pure: tags are immutable and each update returns a new
value.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from enum import Enum
from functools import total_ordering
from typing import Any, NamedTuple, Optional

from .errors import ConfigurationError
from .labeling import Label, format_label, is_canceling, label_less, label_leq, label_next, parse_label


@total_ordering
class _Omega:
    """Sentinel identifier ordered above every processor identifier."""

    _instance: Optional["_Omega"] = None

    def __new__(cls) -> "_Omega":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __eq__(self, other: object) -> bool:
        return other is self

    def __lt__(self, other: object) -> bool:
        return False

    def __gt__(self, other: object) -> bool:
        return other is not self

    def __hash__(self) -> int:
        return hash("omega")

    def __repr__(self) -> str:
        return "OMEGA"

    def __reduce__(self):
        return (_Omega, ())


OMEGA = _Omega()


@dataclass(frozen=True)
class DeploymentParams:
    """Sizes that bound every data structure of a deployment."""

    n: int
    f: int
    C: int
    b: int
    K: int
    Kcl: int
    M: int

    @property
    def top(self) -> int:
        """The largest bounded integer, ``2**b``."""
        return 1 << self.b

    @property
    def d(self) -> int:
        return self.M

    @property
    def q(self) -> int:
        return self.M * self.M + 1

    @property
    def ids(self) -> range:
        return range(1, self.n + 1)

    @property
    def quorum(self) -> int:
        return self.n - self.f


def derive_params(n: int, f: int, C: int, b: int) -> DeploymentParams:
    """Compute the storage limits ``K``, ``Kcl`` and ``M`` for a deployment."""
    if n < 1 or f < 0 or C < 1 or b < 2:
        raise ConfigurationError(f"invalid sizes n={n} f={f} C={C} b={b}")
    if n < 2 * f + 1:
        raise ConfigurationError(f"n={n} cannot tolerate f={f} crashes; need n >= 2f+1")
    K = n + C * n * (n - 1) // 2
    Kcl = (n + 1) * K
    M = (K + 1) * Kcl
    return DeploymentParams(n=n, f=f, C=C, b=b, K=K, Kcl=Kcl, M=M)


class TagEntry(NamedTuple):
    l: Label
    s: int
    t: int
    id: int
    cl: Optional[Label] = None

    def key(self) -> tuple[int, int, int]:
        return (self.s, self.t, self.id)


def entry_valid(e: TagEntry, top: int) -> bool:
    return e.cl is None and e.s < top and e.t < top


def entry_less(e1: TagEntry, e2: TagEntry) -> bool:
    """Lexicographic order on ``(l, s, t, id)`` with label dominance on ``l``."""
    if e1.l == e2.l:
        return e1.key() < e2.key()
    return label_less(e1.l, e2.l)


class Tag:
    """An immutable vector of entries indexed by processor identifiers ``1..n``."""

    __slots__ = ("entries", "_hash")

    def __init__(self, entries: Iterable[TagEntry]):
        object.__setattr__(self, "entries", tuple(entries))
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, name: str, value: Any) -> None:
        raise AttributeError("Tag is immutable")

    def __getitem__(self, mu: int) -> TagEntry:
        if mu < 1:
            raise IndexError(mu)
        return self.entries[mu - 1]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[TagEntry]:
        return iter(self.entries)

    def ids(self) -> range:
        return range(1, len(self.entries) + 1)

    def replace(self, mu: int, **changes: Any) -> "Tag":
        entries = list(self.entries)
        entries[mu - 1] = entries[mu - 1]._replace(**changes)
        return Tag(entries)

    def with_entry(self, mu: int, entry: TagEntry) -> "Tag":
        entries = list(self.entries)
        entries[mu - 1] = entry
        return Tag(entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Tag) and self.entries == other.entries

    def __hash__(self) -> int:
        h = self._hash
        if h is None:
            h = hash(self.entries)
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self) -> str:
        return f"Tag({format_tag(self)})"

    def __reduce__(self):
        return (Tag, (self.entries,))


def uniform_tag(n: int, label: Label, owner: int = 1) -> Tag:
    return Tag(TagEntry(label, 0, 0, owner, None) for _ in range(n))


def format_entry(e: TagEntry) -> str:
    cl = "-" if e.cl is None else format_label(e.cl)
    return f"{format_label(e.l)},{e.s},{e.t},{e.id},{cl}"


def format_tag(a: Tag) -> str:
    """Canonical text form; entries in ascending identifier order."""
    return "[" + ";".join(format_entry(e) for e in a.entries) + "]"


def parse_tag(text: str) -> Tag:
    body = text.strip()[1:-1]
    entries = []
    for part in body.split(";"):
        lab_end = part.index(")") + 1
        lab = parse_label(part[:lab_end])
        s, t, owner, cl = part[lab_end + 1:].split(",", 3)
        entries.append(TagEntry(lab, int(s), int(t), int(owner), None if cl == "-" else parse_label(cl)))
    return Tag(entries)


class FifoHistory(NamedTuple):
    """Most-recent-first bounded history without duplicates."""

    items: tuple
    capacity: int

    def __contains__(self, v: object) -> bool:
        return v in self.items

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)


def empty_history(capacity: int) -> FifoHistory:
    return FifoHistory((), capacity)


def fifo_add(h: FifoHistory, v: Any) -> FifoHistory:
    if v in h.items:
        return h
    return FifoHistory(((v,) + h.items)[: h.capacity], h.capacity)


class TagOrder(Enum):
    LESS = "less"
    EQUIV = "equiv"
    GREATER = "greater"
    INCOMPARABLE = "incomparable"


# Causes reported when check_entry replaces an entry.
CAUSE_MAX = "max"
CAUSE_CL = "cl"


def invalid_cause(e: TagEntry) -> str:
    return CAUSE_CL if e.cl is not None else CAUSE_MAX


class TagSystem:
    """Tag operations for a fixed bit-bound and labeling dimension."""

    def __init__(self, params: DeploymentParams):
        self.params = params
        self.top = params.top
        self.d = params.d

    # Queries

    def valid(self, e: TagEntry) -> bool:
        return e.cl is None and e.s < self.top and e.t < self.top

    def chi(self, a: Tag):
        top = self.top
        for mu, e in enumerate(a.entries, start=1):
            if e.cl is None and e.s < top and e.t < top:
                return mu
        return OMEGA

    def compare(self, a: Tag, a2: Tag) -> TagOrder:
        c1 = self.chi(a)
        c2 = self.chi(a2)
        if c1 is OMEGA and c2 is OMEGA:
            return TagOrder.INCOMPARABLE
        if c1 != c2:
            return TagOrder.LESS if c1 > c2 else TagOrder.GREATER
        e1 = a[c1]
        e2 = a2[c1]
        if e1.l == e2.l:
            k1, k2 = e1.key(), e2.key()
            if k1 == k2:
                return TagOrder.EQUIV
            return TagOrder.LESS if k1 < k2 else TagOrder.GREATER
        if label_less(e1.l, e2.l):
            return TagOrder.LESS
        if label_less(e2.l, e1.l):
            return TagOrder.GREATER
        return TagOrder.INCOMPARABLE

    def leq(self, a: Tag, a2: Tag) -> bool:
        return self.compare(a, a2) in (TagOrder.LESS, TagOrder.EQUIV)

    def less(self, a: Tag, a2: Tag) -> bool:
        return self.compare(a, a2) is TagOrder.LESS

    def equiv(self, a: Tag, a2: Tag) -> bool:
        return self.compare(a, a2) is TagOrder.EQUIV

    # Maintenance procedures

    def clean(self, lam: int, a: Tag) -> Tag:
        out = []
        for e in a.entries:
            cl = e.cl
            if cl is not None and label_leq(cl, e.l):
                cl = None
            out.append(TagEntry(e.l, e.s, e.t, lam, cl))
        return Tag(out)

    def _fill_one(self, x: Tag, yc: Tag) -> Tag:
        top = self.top
        out = []
        for ex, ey in zip(x.entries, yc.entries):
            cl = ex.cl
            # An existing canceling label is kept so repeated passes agree.
            if cl is None or not is_canceling(cl, ex.l):
                if is_canceling(ey.l, ex.l):
                    cl = ey.l
                elif ey.cl is not None and is_canceling(ey.cl, ex.l):
                    cl = ey.cl
            s, t = ex.s, ex.t
            if ey.l == ex.l and top in (ey.s, ey.t, ex.s, ex.t):
                s, t = top, top
            if cl is ex.cl and s == ex.s and t == ex.t:
                out.append(ex)
            else:
                out.append(TagEntry(ex.l, s, t, ex.id, cl))
        return Tag(out)

    def fill_cl(self, x: Tag, y: Tag) -> tuple[Tag, Tag]:
        """Propagate canceling labels and exhausted integers between two tags."""
        return self._fill_one(x, y), self._fill_one(y, x)

    def check_entry(self, lam: int, x: Tag, hcl: FifoHistory) -> tuple[Tag, FifoHistory, Optional[str]]:
        """Replace an invalid entry ``lam`` with a fresh dominating label.

        Returns the new tag, the updated canceling-label history and the
        cause of the replacement (``None`` when the entry was valid).
        """
        e = x[lam]
        if self.valid(e):
            return x, hcl, None
        cause = invalid_cause(e)
        hcl = fifo_add(hcl, e.l)
        fresh = label_next(set(hcl.items), self.d)
        hcl = fifo_add(hcl, fresh)
        return x.with_entry(lam, TagEntry(fresh, 0, 0, lam, None)), hcl, cause

    def _increment(self, lam: int, x: Tag, hcl: FifoHistory, step: bool):
        y = self.clean(lam, x)
        mu = self.chi(y)
        if mu is not OMEGA and mu <= lam:
            e = y[mu]
            if step:
                y = y.with_entry(mu, e._replace(s=min(e.s + 1, self.top), t=0))
            else:
                y = y.with_entry(mu, e._replace(t=min(e.t + 1, self.top)))
        return self.check_entry(lam, y, hcl)

    def inc_step(self, lam: int, x: Tag, hcl: FifoHistory) -> tuple[Tag, FifoHistory, Optional[str]]:
        return self._increment(lam, x, hcl, step=True)

    def inc_trial(self, lam: int, x: Tag, hcl: FifoHistory) -> tuple[Tag, FifoHistory, Optional[str]]:
        return self._increment(lam, x, hcl, step=False)

    def absorb_canceling(self, hcl: FifoHistory, local: Label, remote: TagEntry) -> FifoHistory:
        """Record the remote label and canceling label when they cancel ``local``."""
        if is_canceling(remote.l, local):
            hcl = fifo_add(hcl, remote.l)
        if remote.cl is not None and is_canceling(remote.cl, local):
            hcl = fifo_add(hcl, remote.cl)
        return hcl

    @staticmethod
    def find_canceling(history: FifoHistory, lab: Label) -> Optional[Label]:
        for old in history.items:
            if is_canceling(old, lab):
                return old
        return None
