import asyncio
import dataclasses
import logging
import math
from typing import Any, Dict

import numpy as np

from wflab.core.event_bus import EventBus
from wflab.core.exceptions import ConfigError
from wflab.core.module_loader import BaseExperiment
from wflab.ldp import stats
from wflab.ldp.simulator import simulate_batch

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


class GirsanovCheckExperiment(BaseExperiment):
    """Neutral paths reweighted by exp(G_V / gamma) against paths simulated with selection"""

    kind = "girsanov-check"

    async def execute(self, config, pool) -> Dict[str, Any]:
        sim = config.require("sim")
        V = config.fitness_matrix()
        if V is None:
            raise ConfigError("girsanov-check needs a fitness matrix", field="fitness")
        params = config.model.params(config.model.require_gamma())
        base = config.sim_config()
        start = config.point(sim.start, "sim.start", default=params.p)
        neutral_cfg = dataclasses.replace(base, record_stride=base.steps)
        selective_cfg = dataclasses.replace(neutral_cfg, seed=(base.seed + 1) & SEED_MASK)

        neutral = await asyncio.to_thread(simulate_batch, params, None, neutral_cfg, start,
                                          sim.trajectories, pool, V)
        selective = await asyncio.to_thread(simulate_batch, params, V, selective_cfg, start,
                                            sim.trajectories, pool)

        log_w = neutral.log_weights
        weight_mean, weight_se = stats.mean_and_stderr(np.exp(log_w))
        normalized = stats.normalized_log_weights(log_w)
        ess = stats.effective_sample_size(normalized)
        if ess < 0.01 * len(neutral):
            logger.warning(f"Girsanov weights degenerate: ESS={ess:.1f} of {len(neutral)}")

        worst = 0.0
        for i in range(params.n):
            reweighted, reweighted_se = stats.weighted_mean(neutral.terminal[:, i], normalized)
            direct, direct_se = stats.mean_and_stderr(selective.terminal[:, i])
            relative = abs(reweighted - direct) / abs(direct) if direct != 0.0 else math.inf
            worst = max(worst, relative)
            await self.emit_row({
                "gamma": params.gamma,
                "seed": base.seed,
                "trajectories": sim.trajectories,
                "coordinate": i + 1,
                "reweighted_mean": reweighted,
                "reweighted_se": reweighted_se,
                "direct_mean": direct,
                "direct_se": direct_se,
                "relative_difference": relative,
            })

        z = (weight_mean - 1.0) / weight_se if weight_se > 0.0 else 0.0
        logger.info(f"E[exp(G/gamma)]={weight_mean:.6g} +- {weight_se:.3g}, max relative gap {worst:.3g}")
        return {
            "params": params.to_dict(),
            "sim": base.to_dict(),
            "weight_mean": weight_mean,
            "weight_se": weight_se,
            "weight_z_score": z,
            "ess": ess,
            "max_relative_difference": worst,
            "selective_seed": selective_cfg.seed,
        }


def create_experiment(event_bus: EventBus) -> BaseExperiment:
    return GirsanovCheckExperiment(event_bus)
