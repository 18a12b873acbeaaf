import logging
import os
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Any, Callable, Dict, Iterable, List, Optional

import psutil

logger = logging.getLogger(__name__)

THREADS_ENV = "WFLAB_THREADS"


def resolve_threads(threads: Optional[int] = None) -> int:
    """Explicit count, else $WFLAB_THREADS, else the physical core count"""
    if threads is None:
        env = os.getenv(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                logger.warning(f"Ignoring non-integer {THREADS_ENV}={env!r}")
    if threads is None:
        threads = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, int(threads))


class WorkerPool:
    """
    Thread fan-out for independent numerical jobs (sample blocks, trajectory
    blocks, minimizer restarts).

    `map` returns results in input order, so reductions over them do not depend
    on the thread count. Calls made from inside one of the pool's own workers run
    inline instead of queueing behind their parent.
    """

    def __init__(self, threads: Optional[int] = None, name: str = "wflab"):
        self.name = name
        self.threads = resolve_threads(threads)
        self._executor: Optional[ThreadPoolExecutor] = None
        self._local = threading.local()
        self._lock = threading.Lock()
        self.started_at: Optional[datetime] = None
        self.last_error: Optional[str] = None
        self.run_count = 0
        self.error_count = 0

    def start(self):
        if self._executor is not None:
            return
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix=self.name,
                                                initializer=self._mark_worker)
        self.started_at = datetime.now()
        logger.info(f"Started worker pool '{self.name}' with {self.threads} threads")

    def stop(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        logger.info(f"Stopped worker pool '{self.name}' after {self.run_count} jobs ({self.error_count} errors)")

    def __enter__(self) -> "WorkerPool":
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    def _mark_worker(self):
        self._local.inside = True

    def _call(self, fn: Callable, item: Any) -> Any:
        try:
            result = fn(item)
            with self._lock:
                self.run_count += 1
            return result
        except Exception as e:
            with self._lock:
                self.error_count += 1
                self.last_error = str(e)
            logger.debug(f"Worker job failed: {traceback.format_exc()}")
            raise

    def map(self, fn: Callable, items: Iterable) -> List[Any]:
        """Apply fn to every item; results keep the input order"""
        items = list(items)
        if self._executor is None or len(items) < 2 or getattr(self._local, "inside", False):
            return [self._call(fn, item) for item in items]
        futures = [self._executor.submit(self._call, fn, item) for item in items]
        return [f.result() for f in futures]

    def get_stats(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "threads": self.threads,
            "is_running": self._executor is not None,
            "started_at": self.started_at.isoformat() if self.started_at else None,
            "run_count": self.run_count,
            "error_count": self.error_count,
            "last_error": self.last_error,
        }
