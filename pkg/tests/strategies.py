"""Hypothesis strategies shared by the unit tests."""

from hypothesis import strategies as st

from sspaxos.labeling import Label
from sspaxos.tags import Tag, TagEntry

POOL = [
    Label(1, frozenset({3})),
    Label(2, frozenset({1})),
    Label(3, frozenset({2})),
    Label(4, frozenset({1, 2, 3})),
    Label(1, frozenset()),
    Label(5, frozenset({4, 5})),
]


def labels(q=10, d=3):
    return st.one_of(
        st.sampled_from(POOL),
        st.builds(Label, st.integers(1, q), st.frozensets(st.integers(1, q), max_size=d)),
    )


def entries(n, top, owner_max=None):
    return st.builds(
        TagEntry,
        labels(),
        st.integers(0, top),
        st.integers(0, top),
        st.integers(1, owner_max or n),
        st.one_of(st.none(), st.none(), labels()),
    )


def tags(n=3, top=16):
    return st.lists(entries(n, top), min_size=n, max_size=n).map(Tag)
