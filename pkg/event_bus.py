from typing import Awaitable, Callable, FrozenSet, List, Optional, Tuple

from loguru import logger

Listener = Callable[[dict], Awaitable[None]]

# Progress events published by the sweep driver.
POINT_STARTED = "point_started"
POINT_FINISHED = "point_finished"
GATE_FAILED = "gate_failed"
SWEEP_FINISHED = "sweep_finished"
SWEEP_EVENTS = frozenset({POINT_STARTED, POINT_FINISHED, GATE_FAILED, SWEEP_FINISHED})


class EventBus:
    """Process-wide publish/subscribe hub; listeners may restrict themselves to some event types."""
    _instance = None
    _subscriptions: List[Tuple[Listener, Optional[FrozenSet[str]]]] = []

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._subscriptions = []
        return cls._instance

    @classmethod
    def subscribe(cls, listener: Listener, types: Optional[List[str]] = None):
        cls._subscriptions.append((listener, frozenset(types) if types else None))

    @classmethod
    def unsubscribe(cls, listener: Listener):
        cls._subscriptions = [(l, t) for l, t in cls._subscriptions if l is not listener]

    @classmethod
    async def publish(cls, event_type: str, content: str = None, **fields):
        """Deliver {"type", "content", **fields} in subscription order. A failing listener is logged and skipped."""
        payload = {"type": event_type, "content": content, **fields}
        for listener, types in list(cls._subscriptions):
            if types is not None and event_type not in types:
                continue
            try:
                await listener(payload)
            except Exception as e:
                logger.error(f"Listener {getattr(listener, '__name__', listener)} failed on {event_type}: {e}")


bus = EventBus()
