"""Topic-based publish-subscribe with MQTT-style wildcards.

Topics form a slash-separated tree.  Filters may use `+` (exactly one
level) and a trailing `#` (the whole remaining subtree, including the
empty suffix, so "a/#" also matches "a").  Delivery is at-most-once per
subscriber per publish, deduplicated across that subscriber's filters;
loss and delay live in the transport layer, not here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

WILDCARD_SINGLE = "+"
WILDCARD_MULTI = "#"


class TopicError(ValueError):
    pass


def split_topic_name(name: str) -> tuple[str, ...]:
    """Validate and split a literal topic name (no wildcards allowed)."""
    levels = tuple(name.split("/"))
    if not name or any(not level for level in levels):
        raise TopicError(f"topic {name!r} has empty levels")
    for level in levels:
        if WILDCARD_SINGLE in level or WILDCARD_MULTI in level:
            raise TopicError(f"wildcard in topic name {name!r}")
    return levels


def split_topic_filter(filter_: str) -> tuple[str, ...]:
    """Validate and split a subscription filter."""
    levels = tuple(filter_.split("/"))
    if not filter_ or any(not level for level in levels):
        raise TopicError(f"filter {filter_!r} has empty levels")
    for i, level in enumerate(levels):
        if level == WILDCARD_MULTI:
            if i != len(levels) - 1:
                raise TopicError(f"'#' must be the last level in {filter_!r}")
        elif level != WILDCARD_SINGLE:
            if WILDCARD_SINGLE in level or WILDCARD_MULTI in level:
                raise TopicError(f"wildcard inside literal level in {filter_!r}")
    return levels


def topic_matches(filter_: str, name: str) -> bool:
    """Level-by-level filter match against a literal topic name."""
    flevels = split_topic_filter(filter_)
    tlevels = split_topic_name(name)
    i = 0
    for i, flevel in enumerate(flevels):
        if flevel == WILDCARD_MULTI:
            # matches the rest, including nothing at its own position
            return i <= len(tlevels)
        if i >= len(tlevels):
            return False
        if flevel != WILDCARD_SINGLE and flevel != tlevels[i]:
            return False
    return len(flevels) == len(tlevels)


@dataclass(frozen=True)
class Subscription:
    subscriber: str
    filter: str

    def __post_init__(self) -> None:
        split_topic_filter(self.filter)


class _TrieNode:
    __slots__ = ("children", "single", "multi_subscribers", "subscribers")

    def __init__(self) -> None:
        self.children: dict[str, _TrieNode] = {}
        self.single: _TrieNode | None = None
        self.multi_subscribers: set[str] = set()  # '#' ending here
        self.subscribers: set[str] = set()  # exact-length filters ending here

    def empty(self) -> bool:
        return (
            not self.children
            and self.single is None
            and not self.multi_subscribers
            and not self.subscribers
        )


DeliveryFn = Callable[[str, str, Any], None]


class Broker:
    """Level-indexed subscription tree with fan-out delivery.

    Broker state is a single logical actor; the `deliver` callback hands
    each (subscriber, topic, payload) to the transport.  Without a
    callback, deliveries accumulate on `deliveries` for inspection.
    """

    def __init__(self, deliver: DeliveryFn | None = None):
        self._root = _TrieNode()
        self._filters: dict[str, set[str]] = {}  # subscriber -> filters
        self.deliveries: list[tuple[str, str, Any]] = []
        self._deliver = deliver if deliver is not None else self._record

    def _record(self, subscriber: str, topic: str, payload: Any) -> None:
        self.deliveries.append((subscriber, topic, payload))

    def subscribe(self, subscription: Subscription) -> None:
        levels = split_topic_filter(subscription.filter)
        node = self._root
        for level in levels[:-1]:
            if level == WILDCARD_SINGLE:
                if node.single is None:
                    node.single = _TrieNode()
                node = node.single
            else:
                node = node.children.setdefault(level, _TrieNode())
        last = levels[-1]
        if last == WILDCARD_MULTI:
            node.multi_subscribers.add(subscription.subscriber)
        elif last == WILDCARD_SINGLE:
            if node.single is None:
                node.single = _TrieNode()
            node.single.subscribers.add(subscription.subscriber)
        else:
            node.children.setdefault(last, _TrieNode()).subscribers.add(
                subscription.subscriber
            )
        self._filters.setdefault(subscription.subscriber, set()).add(subscription.filter)

    def unsubscribe(self, subscriber: str, filter_: str) -> None:
        filters = self._filters.get(subscriber, set())
        if filter_ not in filters:
            return
        filters.discard(filter_)
        self._remove(self._root, split_topic_filter(filter_), 0, subscriber)

    def _remove(
        self, node: _TrieNode, levels: tuple[str, ...], depth: int, subscriber: str
    ) -> None:
        if depth == len(levels) - 1:
            last = levels[depth]
            if last == WILDCARD_MULTI:
                node.multi_subscribers.discard(subscriber)
            elif last == WILDCARD_SINGLE:
                if node.single is not None:
                    node.single.subscribers.discard(subscriber)
                    if node.single.empty():
                        node.single = None
            else:
                child = node.children.get(last)
                if child is not None:
                    child.subscribers.discard(subscriber)
                    if child.empty():
                        del node.children[last]
            return
        level = levels[depth]
        if level == WILDCARD_SINGLE:
            if node.single is not None:
                self._remove(node.single, levels, depth + 1, subscriber)
                if node.single.empty():
                    node.single = None
        else:
            child = node.children.get(level)
            if child is not None:
                self._remove(child, levels, depth + 1, subscriber)
                if child.empty():
                    del node.children[level]

    def subscribers_for(self, name: str) -> list[str]:
        """Subscribers with at least one matching filter, in stable order."""
        levels = split_topic_name(name)
        matched: set[str] = set()
        self._collect(self._root, levels, 0, matched)
        return sorted(matched)

    def _collect(
        self, node: _TrieNode, levels: tuple[str, ...], depth: int, out: set[str]
    ) -> None:
        out |= node.multi_subscribers  # '#' at this position covers the rest
        if depth == len(levels):
            out |= node.subscribers
            return
        level = levels[depth]
        child = node.children.get(level)
        if child is not None:
            self._collect(child, levels, depth + 1, out)
        if node.single is not None:
            self._collect(node.single, levels, depth + 1, out)

    def publish(self, name: str, payload: Any) -> int:
        """Deliver payload to every matching subscriber; returns the count."""
        receivers = self.subscribers_for(name)
        for subscriber in receivers:
            self._deliver(subscriber, name, payload)
        return len(receivers)
