import logging
import os
from dataclasses import asdict, dataclass, replace

LEVELLOOP_SEED = os.getenv("LEVELLOOP_SEED")
OUTPUT_DIR = os.getenv("LEVELLOOP_OUTPUT_DIR", "./results")
WORKERS = int(os.getenv("LEVELLOOP_WORKERS", os.cpu_count() or 1))
LOG_LEVEL = os.getenv("LEVELLOOP_LOG_LEVEL", "INFO")

# Height unit used by the lattice conversion, in the G(x, y) ~ -log|x - y| normalization.
LAMBDA_LATTICE = 1.5707963267948966


@dataclass(frozen=True)
class EngineParams:
    """Numerical tolerances shared by the Loewner and SDE engines."""

    step: float = 1e-4
    delta_touch: float = 1e-5
    delta_merge: float = 1e-4
    hard_cap: float = 50.0
    trace_tol: float = 1e-3
    swallow_tol: float = 1e-8
    adaptive_c: float = 0.05
    dt_floor: float = 1e-12
    max_slit_angle: float = 0.02
    loop_resolution: int = 256
    boundary_inset: float = 1e-9

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"engine parameter {name} must be positive, got {value}")
        if self.delta_touch >= self.delta_merge:
            raise ValueError("delta_touch must be smaller than delta_merge")

    def with_step(self, step: float) -> "EngineParams":
        return replace(self, step=step)

    def snapshot(self) -> dict[str, float]:
        return {k: float(v) for k, v in asdict(self).items()}


DEFAULT_PARAMS = EngineParams()


def env_seed() -> int | None:
    if LEVELLOOP_SEED is None or not LEVELLOOP_SEED.strip():
        return None
    return int(LEVELLOOP_SEED)


def setup_logging(level: str | None = None) -> None:
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

