import typing as t

from collections import defaultdict

from anchor_runtime.core import Subscription
from anchor_runtime.core import TopicAddress
from anchor_runtime.core.subscription import WILDCARD

SubscriptionKey = tuple[str, int]


class RoutingTable:
    """Channel index of subscriptions with a per-node reverse index.

    Wildcard subscriptions are indexed under "*".
    """

    def __init__(self) -> None:
        self.channels: dict[str, dict[SubscriptionKey, None]] = defaultdict(dict)
        self.nodes: dict[str, dict[int, Subscription]] = defaultdict(dict)

    def add(self, node_id: str, subscription: Subscription) -> None:
        previous = self.nodes[node_id].get(subscription.subscription_id)
        if previous is not None:
            self._unindex(node_id, previous)
        self.nodes[node_id][subscription.subscription_id] = subscription
        self.channels[subscription.channel][(node_id, subscription.subscription_id)] = None

    def remove(self, node_id: str, subscription_id: int) -> bool:
        subscriptions = self.nodes.get(node_id)
        if not subscriptions or subscription_id not in subscriptions:
            return False
        subscription = subscriptions.pop(subscription_id)
        self._unindex(node_id, subscription)
        if not subscriptions:
            del self.nodes[node_id]
        return True

    def remove_node(self, node_id: str) -> list[Subscription]:
        subscriptions = self.nodes.pop(node_id, {})
        for subscription in subscriptions.values():
            self._unindex(node_id, subscription)
        return list(subscriptions.values())

    def _unindex(self, node_id: str, subscription: Subscription) -> None:
        keys = self.channels.get(subscription.channel)
        if keys is None:
            return
        keys.pop((node_id, subscription.subscription_id), None)
        if not keys:
            del self.channels[subscription.channel]

    def subscriptions_of(self, node_id: str) -> list[Subscription]:
        return list(self.nodes.get(node_id, {}).values())

    def match(
        self, topic: TopicAddress, *, exclude: t.Optional[str] = None
    ) -> list[str]:
        """Nodes with a subscription matching `topic`, in subscription order.

        `exclude` is skipped unless one of its matching subscriptions allows
        self delivery.
        """
        destinations: dict[str, None] = {}
        for channel in (topic.channel, WILDCARD):
            for node_id, subscription_id in self.channels.get(channel, ()):
                if node_id in destinations:
                    continue
                if topic.node_id is not None and node_id != topic.node_id:
                    continue
                subscription = self.nodes[node_id][subscription_id]
                if not subscription.matches(topic, subscriber_id=node_id):
                    continue
                if node_id == exclude and not subscription.allow_self:
                    continue
                destinations[node_id] = None
        return list(destinations)

    def audit(self) -> list[str]:
        """Inconsistencies between the channel and node indices."""
        problems = []
        for channel, keys in self.channels.items():
            if not keys:
                problems.append(f"Empty channel entry {channel!r}")
            for node_id, subscription_id in keys:
                subscription = self.nodes.get(node_id, {}).get(subscription_id)
                if subscription is None:
                    problems.append(
                        f"{channel!r} indexes missing {node_id}/{subscription_id}"
                    )
                elif subscription.channel != channel:
                    problems.append(
                        f"{node_id}/{subscription_id} indexed under {channel!r}"
                    )
        for node_id, subscriptions in self.nodes.items():
            if not subscriptions:
                problems.append(f"Empty node entry {node_id!r}")
            for subscription_id, subscription in subscriptions.items():
                if (node_id, subscription_id) not in self.channels.get(
                    subscription.channel, {}
                ):
                    problems.append(f"{node_id}/{subscription_id} is not indexed")
        return problems

    def __len__(self) -> int:
        return sum(len(subscriptions) for subscriptions in self.nodes.values())
