import asyncio
import logging
import math
from typing import Any, Dict

from wflab.core.config import ScanBlock
from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, InvalidStateError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp import stats
from wflab.ldp.dirichlet import EXACT_MAX_DIM, EventBox, box_rate_infimum, ldp_scan
from wflab.ldp.simplex import compute_C

logger = logging.getLogger(__name__)


class EquilibriumScanExperiment(BaseExperiment):
    """Gamma sweep of gamma log Pi(box) under the stationary law, against the box infimum of the rate"""

    kind = "equilibrium-scan"

    async def execute(self, config, pool) -> Dict[str, Any]:
        event = config.require("event")
        if event.lower is None:
            raise ConfigError("equilibrium-scan needs a box (lower, upper)", field="event.lower")
        params = config.model.params()
        gammas = config.model.gamma_list()
        V = config.fitness_matrix()
        scan = config.scan or ScanBlock()
        try:
            box = EventBox(event.lower, event.upper)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="event") from e

        inf_closed = inf_open = None
        constant = None
        if params.n <= EXACT_MAX_DIM:
            if V is not None:
                constant = (await asyncio.to_thread(compute_C, params, V)).value
            inf_closed, inf_open = await asyncio.to_thread(box_rate_infimum, params, box, V, constant)

        rows = await asyncio.to_thread(ldp_scan, params, box, gammas, V, scan.mode, config.seed,
                                       scan.samples, pool)
        for row in rows:
            await self.emit_row({
                **row.to_row(),
                "seed": config.seed,
                "trajectories": row.samples,
                "rate_inf_closed": inf_closed,
                "rate_inf_open": inf_open,
            })

        summary: Dict[str, Any] = {
            "mode": scan.mode,
            "box": box.to_dict(),
            "gammas": gammas,
            "selection_constant": constant,
            "rate_inf_closed": inf_closed,
            "rate_inf_open": inf_open,
            "target": -inf_closed if inf_closed is not None else None,
        }
        values = [r.gamma_log_prob for r in rows]
        if scan.extrapolate and len(rows) >= 3 and all(math.isfinite(v) for v in values):
            fit = stats.richardson_extrapolate(gammas, values)
            summary["richardson"] = fit._asdict()
            if inf_closed is not None and inf_closed > 0.0:
                summary["relative_error"] = abs(fit.limit + inf_closed) / inf_closed
            logger.info(f"Richardson limit {fit.limit:.10g} (target {summary['target']})")
        return summary


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return EquilibriumScanExperiment(event_bus)
