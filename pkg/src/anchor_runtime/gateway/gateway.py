import typing as t

import asyncio
import dataclasses
import functools
import random

from anchor_runtime.client import BusClient
from anchor_runtime.client import ClientHooks
from anchor_runtime.config_definitions import ClientConfig
from anchor_runtime.config_definitions import GatewayConfig
from anchor_runtime.config_definitions import LinkConfig
from anchor_runtime.core import MessageEnvelope
from anchor_runtime.core.subscription import WILDCARD
from anchor_runtime.utils.log import getLogger
from anchor_runtime.utils.lru import LRUSet

from .forwarding import DedupeWindow
from .forwarding import Forwarder
from .forwarding import mark_present


@dataclasses.dataclass
class LinkDirection:
    """Traffic of one cluster re-injected into another."""

    source: BusClient
    target: BusClient
    forwarder: Forwarder

    def on_envelope(self, envelope: MessageEnvelope) -> None:
        if self.forwarder.should_forward(envelope):
            self.target.forward(self.forwarder.reinject(envelope))


class GatewayLink:
    """Bridge two clusters with one bus client registered in each.

    Both clients watch all non-local traffic of their cluster, forwarded or
    not, and record it in the shared dedupe window. A copy coming back
    through another gateway is then refused by the cluster it started from.
    """

    def __init__(
        self,
        name: str,
        link: LinkConfig,
        *,
        client_options: ClientConfig,
        gateway_id: str,
        max_hops: int,
        window: DedupeWindow,
        client_hooks: t.Optional[ClientHooks] = None,
        rng: t.Optional[random.Random] = None,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.name = name
        self.link = link
        self.gateway_id = gateway_id
        self.window = window
        self.source = BusClient(
            client_options,
            node_id=f"{gateway_id}-{name}-{link.source_cluster}",
            endpoint=link.source,
            hooks=client_hooks,
            rng=rng,
        )
        self.target = BusClient(
            client_options,
            node_id=f"{gateway_id}-{name}-{link.target_cluster}",
            endpoint=link.target,
            hooks=client_hooks,
            rng=rng,
        )
        self.directions = [
            LinkDirection(
                source=self.source,
                target=self.target,
                forwarder=Forwarder(
                    link.target_cluster,
                    source_cluster=link.source_cluster,
                    window=window,
                    max_hops=max_hops,
                ),
            )
        ]
        if link.bidirectional:
            self.directions.append(
                LinkDirection(
                    source=self.target,
                    target=self.source,
                    forwarder=Forwarder(
                        link.source_cluster,
                        source_cluster=link.target_cluster,
                        window=window,
                        max_hops=max_hops,
                    ),
                )
            )

    def start(self) -> None:
        for client, cluster in (
            (self.source, self.link.source_cluster),
            (self.target, self.link.target_cluster),
        ):
            directions = [d for d in self.directions if d.source is client]
            client.subscribe(
                WILDCARD,
                functools.partial(self.on_envelope, cluster, directions),
                region=WILDCARD,
            )
        self.source.start()
        self.target.start()
        self.logger.info(
            "Gateway link started",
            extra={
                "data": {
                    "link": self.name,
                    "source": self.link.source,
                    "target": self.link.target,
                    "bidirectional": self.link.bidirectional,
                }
            },
        )

    def on_envelope(
        self,
        cluster: str,
        directions: list[LinkDirection],
        envelope: MessageEnvelope,
    ) -> None:
        mark_present(self.window, cluster, envelope)
        for direction in directions:
            direction.on_envelope(envelope)

    async def wait_registered(self, timeout: t.Optional[float] = None) -> None:
        await asyncio.gather(
            self.source.wait_registered(timeout),
            self.target.wait_registered(timeout),
        )

    async def close(self) -> None:
        await asyncio.gather(self.source.close(), self.target.close())

    def stats(self) -> dict[str, t.Any]:
        return {
            f"{d.source.node_id}->{d.target.node_id}": dataclasses.asdict(
                d.forwarder.stats
            )
            for d in self.directions
        }


class Gateway:
    """All links of a gateway process, sharing one dedupe window."""

    def __init__(
        self,
        options: GatewayConfig,
        *,
        client_options: ClientConfig,
        client_hooks: t.Optional[ClientHooks] = None,
        rng: t.Optional[random.Random] = None,
    ) -> None:
        self.logger = getLogger(__name__, self)
        self.options = options
        self.window: DedupeWindow = LRUSet(cache_len=options.dedupe_window)
        self.links = [
            GatewayLink(
                name,
                link,
                client_options=client_options,
                gateway_id=options.gateway_id,
                max_hops=options.max_hops,
                window=self.window,
                client_hooks=client_hooks,
                rng=rng,
            )
            for name, link in options.links.items()
        ]
        self._stopped = asyncio.Event()

    def start(self) -> None:
        for link in self.links:
            link.start()

    async def wait_registered(self, timeout: t.Optional[float] = None) -> None:
        await asyncio.gather(*(link.wait_registered(timeout) for link in self.links))

    async def run(self) -> None:
        self.start()
        try:
            await self._stopped.wait()
        finally:
            await self.close()

    def stop(self) -> None:
        self._stopped.set()

    async def close(self) -> None:
        await asyncio.gather(*(link.close() for link in self.links))

    async def __aenter__(self) -> "Gateway":
        self.start()
        return self

    async def __aexit__(self, *exc_info: t.Any) -> None:
        await self.close()

    def stats(self) -> dict[str, t.Any]:
        return {link.name: link.stats() for link in self.links}
