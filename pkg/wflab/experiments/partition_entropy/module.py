import asyncio
import logging
import math
from typing import Any, Callable, Dict, List, Optional, Tuple

from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, InvalidStateError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp.partitions import (
    Partition,
    closed_form_entropy,
    entropy_by_refinement,
    equilibrium_rate_by_refinement,
    path_rate_by_refinement,
    projected_entropy,
    projected_equilibrium_rate,
    projected_path_rate,
    refine,
)

logger = logging.getLogger(__name__)

MONOTONE_SLACK = -1e-9


def _non_decreasing(values: List[float]) -> bool:
    finite = [v for v in values if math.isfinite(v)]
    if any(math.isinf(a) and math.isfinite(b) for a, b in zip(values, values[1:])):
        return False
    return all(b - a >= MONOTONE_SLACK for a, b in zip(finite, finite[1:]))


class PartitionEntropyExperiment(BaseExperiment):
    """Projected entropies and rates on refining partitions of [0, 1]"""

    kind = "partition-entropy"

    def _tables(self, config) -> List[Tuple[str, Callable[[Partition], float], Callable[[], list], Optional[float]]]:
        block = config.require("partition")
        theta = config.model.theta
        tables = []
        try:
            mu = block.mu.build() if block.mu is not None else None
            nu = block.nu.build() if block.nu is not None else None
            nu0 = block.nu0.build() if block.nu0 is not None else None
            path = [m.build() for m in block.path] if block.path is not None else None
        except InvalidStateError as e:
            raise ConfigError(str(e), field="partition") from e
        level, structural = block.max_level, block.include_structural

        if mu is not None and nu is not None:
            tables.append(("entropy",
                           lambda part: projected_entropy(mu, nu, part),
                           lambda: [(r.level, r.cells, r.value) for r in
                                    entropy_by_refinement(mu, nu, level, structural)],
                           closed_form_entropy(mu, nu)))
        if nu0 is not None and mu is not None:
            tables.append(("equilibrium-rate",
                           lambda part: projected_equilibrium_rate(theta, nu0, mu, part),
                           lambda: [(r.level, r.cells, r.value) for r in
                                    equilibrium_rate_by_refinement(theta, nu0, mu, level, structural)],
                           theta * closed_form_entropy(nu0, mu)))
        if nu0 is not None and path is not None:
            times = block.times
            tables.append(("path-rate",
                           lambda part: projected_path_rate(theta, nu0, path, times, part),
                           lambda: [(r.level, r.cells, r.rate) for r in
                                    path_rate_by_refinement(theta, nu0, path, times, level, structural)],
                           None))
        if not tables:
            raise ConfigError("give mu and nu, nu0 and mu, or nu0 with path and times", field="partition")
        return tables

    async def execute(self, config, pool) -> Dict[str, Any]:
        block = config.require("partition")
        tables = self._tables(config)
        chain: List[Partition] = []
        if block.breakpoints:
            try:
                current = Partition(block.breakpoints[0])
                chain.append(current)
                for points in block.breakpoints[1:]:
                    current = refine(current, Partition(points))
                    chain.append(current)
            except InvalidStateError as e:
                raise ConfigError(str(e), field="partition.breakpoints") from e

        summary: Dict[str, Any] = {"theta": config.model.theta, "max_level": block.max_level, "tables": {}}
        for name, evaluate, dyadic, closed in tables:
            rows = await asyncio.to_thread(dyadic)
            for level, cells, value in rows:
                await self.emit_row({"table": name, "partition": "dyadic", "level": level, "cells": cells,
                                     "value": value, "closed_form": closed})
            values = [v for _, _, v in rows]
            entry: Dict[str, Any] = {"last": values[-1], "closed_form": closed,
                                     "non_decreasing": _non_decreasing(values)}
            if closed is not None and math.isfinite(closed) and math.isfinite(values[-1]):
                entry["gap"] = closed - values[-1]

            if chain:
                chained = [await asyncio.to_thread(evaluate, part) for part in chain]
                for k, (part, value) in enumerate(zip(chain, chained)):
                    await self.emit_row({"table": name, "partition": "custom", "level": k, "cells": part.cells,
                                         "value": value, "closed_form": closed})
                entry["custom_non_decreasing"] = _non_decreasing(chained)
            if not entry["non_decreasing"]:
                logger.warning(f"{name} table decreased under refinement")
            summary["tables"][name] = entry
        summary["levels"] = block.max_level + 1
        return summary


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return PartitionEntropyExperiment(event_bus)
