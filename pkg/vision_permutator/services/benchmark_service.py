"""
Service for forward-throughput measurement.

Weights and inputs are random because throughput does not depend on them. Only
pure forward compute is timed: inputs are created once before the warmup.
"""
import time
from typing import Callable, Optional

import numpy as np

from vision_permutator.autograd.tensor import Tensor, get_num_workers, no_grad, set_num_workers
from vision_permutator.interfaces.service_interfaces import BenchmarkServiceInterface
from vision_permutator.model_zoo import build, get_config
from vision_permutator.models.config import BenchReport
from vision_permutator.models.errors import ConfigError
from vision_permutator.nn.layers import Mode
from vision_permutator.utils.logger import EpochProgressTracker, setup_logger

logger = setup_logger(__name__)

MIN_TIMED_ITERS = 10
MAX_RELATIVE_STD = 0.15

# Pairs (faster, slower) expected from the reference throughput measurements.
EXPECTED_ORDERINGS = [("ViP-Small/16", "ViP-Small/7")]


class BenchmarkService(BenchmarkServiceInterface):
    """Times eval-mode forward passes of registry models."""

    def __init__(
        self,
        workers: Optional[int] = None,
        seed: int = 0,
        show_progress: bool = True,
        clock: Callable[[], float] = time.perf_counter,
    ):
        if workers is not None:
            set_num_workers(workers)
        self.seed = seed
        self.show_progress = show_progress
        self.clock = clock

    def run(self, model_name: str, batch: int = 32, iters: int = MIN_TIMED_ITERS, warmup: int = 3) -> BenchReport:
        """
        Benchmark one model.

        Raises:
            ConfigError: For an unknown model or fewer than ten timed iterations.
        """
        if iters < MIN_TIMED_ITERS:
            raise ConfigError(f"timed iterations must be at least {MIN_TIMED_ITERS}", field="iters")
        if batch < 1 or warmup < 0:
            raise ConfigError("batch must be positive and warmup non-negative", field="batch")
        rng = np.random.default_rng(self.seed)
        model = build(get_config(model_name), rng)
        images = Tensor(rng.standard_normal((batch,) + model.input_shape).astype(np.float32))
        times = []
        with no_grad(), EpochProgressTracker(warmup + iters, f"Benchmarking {model_name}", self.show_progress) as tracker:
            for _ in range(warmup):
                model.forward(images, Mode.EVAL)
                tracker.update(status="warmup")
            for _ in range(iters):
                start = self.clock()
                model.forward(images, Mode.EVAL)
                times.append(self.clock() - start)
                tracker.update(status="timed")
        times = np.asarray(times)
        rates = batch / times
        report = BenchReport(
            model=model_name,
            batch=batch,
            warmup=warmup,
            iters=iters,
            mean_img_per_s=float(batch / times.mean()),
            std_img_per_s=float(rates.std(ddof=1)),
            params=model.param_count(),
            workers=get_num_workers(),
        )
        if report.relative_std > MAX_RELATIVE_STD:
            logger.warning(
                "%s: throughput varies by %.0f%% of the mean; the machine may not be idle",
                model_name,
                100 * report.relative_std,
            )
        return report

    def run_many(self, model_names: list[str], batch: int = 32, iters: int = MIN_TIMED_ITERS, warmup: int = 3):
        reports = [self.run(name, batch, iters, warmup) for name in model_names]
        check_orderings(reports)
        return reports


def check_orderings(reports: list[BenchReport]) -> list[str]:
    """Warn for every expected (faster, slower) pair that measured the other way round."""
    by_name = {r.model: r for r in reports}
    warnings = []
    for faster, slower in EXPECTED_ORDERINGS:
        if faster in by_name and slower in by_name:
            if by_name[faster].mean_img_per_s <= by_name[slower].mean_img_per_s:
                message = (
                    f"{faster} ({by_name[faster].mean_img_per_s:.1f} img/s) is not faster than "
                    f"{slower} ({by_name[slower].mean_img_per_s:.1f} img/s) on this machine"
                )
                logger.warning(message)
                warnings.append(message)
    return warnings
