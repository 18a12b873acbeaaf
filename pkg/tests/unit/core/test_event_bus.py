"""
Unit tests for the in-process EventBus.
"""
import pytest

from wflab.core.event_bus import EventBus


@pytest.mark.unit
class TestEventBus:
    """Test cases for EventBus"""

    @pytest.mark.asyncio
    async def test_start_and_stop(self, event_bus):
        """start/stop toggle is_running and are idempotent"""
        await event_bus.start()
        await event_bus.start()
        assert event_bus.is_running
        await event_bus.stop()
        await event_bus.stop()
        assert not event_bus.is_running

    @pytest.mark.asyncio
    async def test_emit_adds_metadata(self, started_event_bus):
        """Handlers receive the payload plus event type and timestamp"""
        received = []
        started_event_bus.subscribe("results.row", received.append)

        await started_event_bus.emit("results.row", {"row": {"gamma": 0.1}})

        assert received[0]["row"] == {"gamma": 0.1}
        assert received[0]["_event_type"] == "results.row"
        assert "_timestamp" in received[0]
        assert started_event_bus.get_stats()["emitted"] == 1

    @pytest.mark.asyncio
    async def test_wildcard_patterns(self, started_event_bus):
        """'*' and '?' match like shell globs"""
        star, single = [], []
        started_event_bus.subscribe("experiment.*", star.append)
        started_event_bus.subscribe("results.ro?", single.append)

        await started_event_bus.emit("experiment.completed", {})
        await started_event_bus.emit("results.row", {})
        await started_event_bus.emit("results.artifact", {})

        assert len(star) == 1
        assert len(single) == 1

    @pytest.mark.asyncio
    async def test_priority_order_and_async_handlers(self, started_event_bus):
        """Higher priority runs first; coroutine handlers are awaited"""
        order = []

        async def late(data):
            order.append("late")

        @started_event_bus.on("tick", priority=10)
        def early(data):
            order.append("early")

        started_event_bus.subscribe("tick", late)
        await started_event_bus.emit("tick", {})

        assert order == ["early", "late"]

    @pytest.mark.asyncio
    async def test_once_handlers(self, started_event_bus):
        """A once handler fires a single time"""
        calls = []
        started_event_bus.subscribe("tick", calls.append, once=True)

        await started_event_bus.emit("tick", {})
        await started_event_bus.emit("tick", {})

        assert len(calls) == 1
        assert "tick" not in started_event_bus.handlers

    @pytest.mark.asyncio
    async def test_failing_handler_does_not_stop_others(self, started_event_bus):
        """An exception in one handler is logged, the rest still run"""
        calls = []

        def broken(data):
            raise RuntimeError("boom")

        started_event_bus.subscribe("tick", broken, priority=5)
        started_event_bus.subscribe("tick", calls.append)
        await started_event_bus.emit("tick", {})

        assert len(calls) == 1

    @pytest.mark.asyncio
    async def test_propagating_handler_reaches_the_emitter(self, started_event_bus):
        """A handler subscribed with propagate=True ends the emission with its exception"""
        calls = []

        def broken(data):
            raise OSError("disk full")

        started_event_bus.subscribe("results.row", broken, priority=5, propagate=True)
        started_event_bus.subscribe("results.row", calls.append)

        with pytest.raises(OSError, match="disk full"):
            await started_event_bus.emit("results.row", {})
        assert calls == []

    def test_off_by_id_and_by_type(self):
        """off removes one handler by id or all of a type"""
        bus = EventBus()
        first = bus.subscribe("tick", lambda data: None)
        bus.subscribe("tick", lambda data: None)

        bus.off("tick", first)
        assert bus.get_stats()["handlers"] == {"tick": 1}
        bus.off("tick")
        assert bus.handlers == {}
        bus.off("never-registered")
