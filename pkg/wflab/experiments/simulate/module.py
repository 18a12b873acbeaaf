import asyncio
import logging
from typing import Any, Dict

import numpy as np

from wflab.core.event_bus import EventBus
from wflab.core.module_loader import BaseExperiment
from wflab.ldp.simulator import flow_path, simulate_batch

logger = logging.getLogger(__name__)


class SimulateExperiment(BaseExperiment):
    """Euler-Maruyama ensemble with per-knot means beside the deterministic flow"""

    kind = "simulate"

    async def execute(self, config, pool) -> Dict[str, Any]:
        sim = config.require("sim")
        params = config.model.params(config.model.require_gamma())
        V = config.fitness_matrix()
        cfg = config.sim_config()
        start = config.point(sim.start, "sim.start", default=params.p)

        batch = await asyncio.to_thread(simulate_batch, params, V, cfg, start, sim.trajectories, pool)
        flow = await asyncio.to_thread(flow_path, params, V, start, batch.times)

        means = batch.states.mean(axis=0)
        if len(batch) > 1:
            errors = batch.states.std(axis=0, ddof=1) / np.sqrt(len(batch))
        else:
            errors = np.zeros_like(means)
        n = params.n
        for k, t in enumerate(batch.times):
            row: Dict[str, Any] = {"gamma": params.gamma, "seed": cfg.seed, "trajectories": len(batch), "t": t}
            row.update({f"mean_x_{i + 1}": means[k, i] for i in range(n)})
            row.update({f"se_x_{i + 1}": errors[k, i] for i in range(n)})
            row.update({f"flow_x_{i + 1}": flow.knots[k, i] for i in range(n)})
            await self.emit_row(row)

        await self.emit_artifact("trajectory_0", batch.trajectory(0).grid)
        await self.emit_artifact("flow", flow)

        terminal = batch.terminal
        deviation = float(np.max(np.abs(means[-1] - flow.knots[-1])))
        logger.info(f"Simulated {len(batch)} paths; terminal mean deviates from the flow by {deviation:.3g}")
        return {
            "params": params.to_dict(),
            "sim": cfg.to_dict(),
            "start": start.weights,
            "terminal_mean": terminal.mean(axis=0),
            "terminal_flow": flow.knots[-1],
            "max_terminal_deviation": deviation,
            "boundary_hits": int(np.count_nonzero(np.any(batch.states[:, :, params.support] <= 0.0, axis=(1, 2)))),
        }


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return SimulateExperiment(event_bus)
