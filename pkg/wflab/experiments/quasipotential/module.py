import asyncio
import logging
import math
from typing import Any, Dict

import numpy as np

from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError, WFLabError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp.minimizer import instanton_bvp, quasi_potential
from wflab.ldp.simplex import compute_C, equilibrium_rate, selection_equilibrium_rate

logger = logging.getLogger(__name__)


class QuasiPotentialExperiment(BaseExperiment):
    """Minimal action from the attractor to a target over increasing horizons, against the equilibrium rate"""

    kind = "quasipotential"

    async def execute(self, config, pool) -> Dict[str, Any]:
        block = config.require("minimize")
        params = config.model.params()
        V = config.fitness_matrix()
        if block.end is None:
            raise ConfigError("quasipotential needs a target", field="minimize.end")
        target = config.point(block.end, "minimize.end")
        constant = await asyncio.to_thread(compute_C, params, V) if V is not None else None
        attractor = params.p if constant is None else constant.argmax
        start = config.point(block.start, "minimize.start", default=attractor)

        rows = await asyncio.to_thread(quasi_potential, params, target, V, block.horizons, block.knots_per_time,
                                       start, block.max_iters, block.grad_tol, pool)
        for row in rows:
            await self.emit_row(row.to_row())

        actions = np.array([r.action for r in rows])
        plateau = rows[-1].running_min
        if constant is None:
            reference = equilibrium_rate(params, target)
        else:
            reference = selection_equilibrium_rate(params, V, target, constant)
        summary: Dict[str, Any] = {
            "params": params.to_dict(),
            "start": start.weights,
            "target": target.weights,
            "plateau": plateau,
            "equilibrium_rate": reference,
            "non_increasing": bool(np.all(np.diff(actions) <= 1e-10 * max(1.0, abs(actions[0])))),
        }
        if math.isfinite(reference) and reference > 0.0:
            summary["relative_error"] = abs(plateau - reference) / reference

        if block.oracle and params.n == 2:
            try:
                _, bvp_action = await asyncio.to_thread(instanton_bvp, params, start, target,
                                                        rows[-1].horizon, V)
            except WFLabError as e:
                logger.warning(f"Boundary-value oracle unavailable: {e}")
            else:
                summary["bvp_action"] = bvp_action
        logger.info(f"Quasi-potential plateau {plateau:.10g}, equilibrium rate {reference:.10g}")
        return summary


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return QuasiPotentialExperiment(event_bus)
