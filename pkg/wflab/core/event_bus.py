"""
In-process publish/subscribe for one run: experiments emit `experiment.*` and
`results.*` events, the results writer and the loader listen.
"""
import inspect
import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from fnmatch import fnmatchcase
from typing import Any, Callable, Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass
class EventHandler:
    callback: Callable
    pattern: str
    once: bool = False
    priority: int = 0
    propagate: bool = False
    handler_id: str = field(default_factory=lambda: uuid.uuid4().hex)

    @property
    def is_async(self) -> bool:
        return inspect.iscoroutinefunction(self.callback)


class EventBus:
    """
    Handlers subscribe to a glob pattern (`results.*`, `experiment.load?`) and run
    in descending priority. Emission awaits every handler before returning, so a
    row is on disk by the time `emit` completes. A failing handler is logged and
    skipped unless it subscribed with `propagate=True`, in which case its
    exception ends the emission and reaches the emitter.
    """

    def __init__(self):
        self.handlers: Dict[str, List[EventHandler]] = {}
        self.is_running = False
        self.emitted_count = 0

    async def start(self):
        if not self.is_running:
            self.is_running = True
            logger.debug("Event bus started")

    async def stop(self):
        if self.is_running:
            self.is_running = False
            logger.debug(f"Event bus stopped after {self.emitted_count} events")

    def subscribe(self, pattern: str, callback: Callable, once: bool = False, priority: int = 0,
                  propagate: bool = False) -> str:
        """Register `callback` for events matching `pattern`; returns the id `off` takes"""
        handler = EventHandler(callback, pattern, once, priority, propagate)
        bucket = self.handlers.setdefault(pattern, [])
        bucket.append(handler)
        bucket.sort(key=lambda h: -h.priority)
        logger.debug(f"Subscribed to '{pattern}' (priority {priority}{', once' if once else ''})")
        return handler.handler_id

    def on(self, pattern: str, once: bool = False, priority: int = 0):
        """Decorator form of `subscribe`"""

        def register(func: Callable) -> Callable:
            self.subscribe(pattern, func, once=once, priority=priority)
            return func

        return register

    def off(self, pattern: str, handler_id: Optional[str] = None):
        """Drop one handler by id, or every handler of `pattern`"""
        bucket = self.handlers.get(pattern)
        if bucket is None:
            return
        if handler_id is not None:
            bucket[:] = [h for h in bucket if h.handler_id != handler_id]
        if handler_id is None or not bucket:
            del self.handlers[pattern]

    def matching(self, event_type: str) -> List[EventHandler]:
        found = [h for pattern, bucket in self.handlers.items() if fnmatchcase(event_type, pattern) for h in bucket]
        found.sort(key=lambda h: -h.priority)
        return found

    async def emit(self, event_type: str, data: Dict[str, Any]):
        payload = {**data, "_event_type": event_type, "_timestamp": datetime.now(timezone.utc).isoformat()}
        self.emitted_count += 1
        handlers = self.matching(event_type)
        for handler in handlers:
            if handler.once:
                self.off(handler.pattern, handler.handler_id)
            try:
                if handler.is_async:
                    await handler.callback(payload)
                else:
                    handler.callback(payload)
            except Exception as e:
                if handler.propagate:
                    raise
                logger.error(f"Handler for '{event_type}' ({handler.pattern}) failed: {e}")

    def get_stats(self) -> Dict[str, Any]:
        return {
            "running": self.is_running,
            "emitted": self.emitted_count,
            "handlers": {pattern: len(bucket) for pattern, bucket in self.handlers.items()},
        }
