"""Clocks, a virtual-time event loop, and cancellation tokens.

Everything time-dependent in this package goes through plain asyncio
(``asyncio.sleep``, ``asyncio.wait_for``, ``loop.time()``). Simulated runs
swap the event loop for :class:`VirtualTimeLoop`, which advances a virtual
clock to the next scheduled timer whenever the loop has nothing runnable.
Production code is therefore identical in real and simulated modes; two
simulated runs of the same program are byte-identical because the loop is
single-threaded, FIFO, and does no real I/O waiting.
"""

from __future__ import annotations

import asyncio
import selectors
import time
from typing import Any, Awaitable, Coroutine, TypeVar

T = TypeVar("T")


class Clock:
    """Monotonic time source. The default reads the running event loop."""

    def now(self) -> float:
        return asyncio.get_running_loop().time()

    async def sleep(self, delay: float) -> None:
        await asyncio.sleep(delay)


class WallClock(Clock):
    """Monotonic wall time, usable outside a running loop."""

    def now(self) -> float:
        return time.monotonic()


class VirtualTimeLoop(asyncio.SelectorEventLoop):
    """Event loop whose ``time()`` is virtual and jumps over idle waits.

    When no callback is ready, virtual time advances straight to the
    earliest scheduled timer, so ``asyncio.sleep(350)`` costs microseconds
    of wall time. Ordering of wakeups is exactly what a real loop would
    produce, keyed on the virtual timestamps.
    """

    def __init__(self) -> None:
        super().__init__(selectors.SelectSelector())
        for attr in ("_ready", "_scheduled"):
            if not hasattr(self, attr):  # pragma: no cover - interpreter drift guard
                raise RuntimeError(f"event loop lacks {attr}; virtual time unsupported here")
        self._virtual_now = 0.0

    def time(self) -> float:
        return self._virtual_now

    def _run_once(self) -> None:
        # Jumping to the heap head is safe even if that timer is cancelled:
        # the minimum _when can never skip past a live timer.
        if not self._ready and self._scheduled:
            when = self._scheduled[0]._when
            if when > self._virtual_now:
                self._virtual_now = when
        super()._run_once()


def run_virtual(coro: Coroutine[Any, Any, T]) -> T:
    """Run a coroutine to completion on a fresh virtual-time loop."""
    loop = VirtualTimeLoop()
    try:
        return loop.run_until_complete(coro)
    finally:
        loop.close()


def run_real(coro: Coroutine[Any, Any, T]) -> T:
    return asyncio.run(coro)


class CancelToken:
    """Cooperative cancellation flag, shareable across tasks.

    Consumers either poll :attr:`cancelled` at their next boundary or race
    :meth:`wait` against their own work. Setting is idempotent.
    """

    def __init__(self) -> None:
        self._event = asyncio.Event()

    @property
    def cancelled(self) -> bool:
        return self._event.is_set()

    def cancel(self) -> None:
        self._event.set()

    async def wait(self) -> None:
        await self._event.wait()


async def race_cancel(
    aw: Awaitable[T], token: CancelToken | None, timeout: float | None = None
) -> tuple[bool, T | None]:
    """Await ``aw`` unless ``token`` fires or ``timeout`` elapses first.

    Returns ``(finished, result)``; ``finished`` is False when cancelled or
    timed out, and ``aw`` is cancelled in that case. ``timeout`` of None
    means no time bound; a token of None means no cancellation source.
    """
    main = asyncio.ensure_future(aw)
    waiters: list[asyncio.Future] = [main]
    cancel_waiter = None
    if token is not None:
        cancel_waiter = asyncio.ensure_future(token.wait())
        waiters.append(cancel_waiter)
    try:
        done, _ = await asyncio.wait(waiters, timeout=timeout, return_when=asyncio.FIRST_COMPLETED)
    finally:
        if cancel_waiter is not None and not cancel_waiter.done():
            cancel_waiter.cancel()
    if main in done:
        return True, main.result()
    main.cancel()
    try:
        await main
    except (asyncio.CancelledError, Exception):
        pass
    return False, None
