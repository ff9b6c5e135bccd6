import logging
import os
from pathlib import Path

from dotenv import load_dotenv

from maglab import _config
from maglab.constants import (
    ENV_LOG_LEVEL,
    ENV_OUTPUT_DIR,
    ENV_REPORT_FORMAT,
    ENV_THREADS,
    LOGGER_NAME,
    REPORT_FORMATS,
)
from maglab.errors import ConfigError, MaglabError
from maglab.geometry import (
    ThickSetParams,
    build_generations,
    build_subfamilies,
    counting_report,
    omega_mask,
)
from maglab.potential import (
    PotentialField,
    RadialCharge,
    PointFlux,
    assemble_phi,
    extend_to_psi,
    mollify,
    normalize_bump,
    schedule_mu,
    trial_F,
)
from maglab.discretize import (
    GridSpec,
    assemble_electric,
    assemble_magnetic,
    assemble_periodic_1d,
    assemble_radial,
    build_grid,
    link_phases,
)
from maglab.eigensolve import dense_spectrum, lowest_eigenpair, rayleigh_quotient
from maglab.analysis import (
    ab_annulus_check,
    compactness_profile,
    dist_to_integers,
    fourier_mode_check,
    gauge_correction,
    gauge_invariance_check,
    kato_check,
    label_components,
    periodic_winding_check,
    pigeonhole_search,
    poincare_check,
    twistor_residual,
    winding_flux,
    winding_line,
)

logger = logging.getLogger(LOGGER_NAME)

__all__ = [
    "init",
    "MaglabError",
    "ThickSetParams",
    "build_generations",
    "counting_report",
    "build_subfamilies",
    "omega_mask",
    "normalize_bump",
    "RadialCharge",
    "PointFlux",
    "PotentialField",
    "assemble_phi",
    "schedule_mu",
    "trial_F",
    "mollify",
    "extend_to_psi",
    "GridSpec",
    "build_grid",
    "link_phases",
    "assemble_magnetic",
    "assemble_electric",
    "assemble_radial",
    "assemble_periodic_1d",
    "lowest_eigenpair",
    "rayleigh_quotient",
    "dense_spectrum",
    "dist_to_integers",
    "winding_line",
    "winding_flux",
    "kato_check",
    "poincare_check",
    "twistor_residual",
    "ab_annulus_check",
    "periodic_winding_check",
    "label_components",
    "pigeonhole_search",
    "gauge_correction",
    "gauge_invariance_check",
    "compactness_profile",
    "fourier_mode_check",
]


def _conditionally_load_env():
    # Only read .env when none of the maglab variables are already exported
    names = (ENV_THREADS, ENV_OUTPUT_DIR, ENV_REPORT_FORMAT, ENV_LOG_LEVEL)
    if not any(os.getenv(name) for name in names):
        env_path = Path.cwd() / ".env"
        load_dotenv(dotenv_path=env_path, override=False)


def init(
    threads: int = None,
    output_dir: str = None,
    report_format: str = None,
    log_level: str = None,
) -> None:
    _conditionally_load_env()

    raw_threads = threads or os.getenv(ENV_THREADS) or getattr(_config, "DEFAULT_THREADS", 1)
    try:
        resolved_threads = int(raw_threads)
    except (TypeError, ValueError):
        raise ConfigError(f"maglab init failed: threads must be an integer, got {raw_threads!r}")
    if resolved_threads < 1:
        raise ConfigError(f"maglab init failed: threads must be at least 1, got {resolved_threads}")

    resolved_output_dir = (
        output_dir or os.getenv(ENV_OUTPUT_DIR) or getattr(_config, "DEFAULT_OUTPUT_DIR", None)
    )

    resolved_format = (
        report_format or os.getenv(ENV_REPORT_FORMAT) or getattr(_config, "DEFAULT_REPORT_FORMAT", "csv")
    )
    if resolved_format not in REPORT_FORMATS:
        raise ConfigError(
            f"maglab init failed: report format must be one of {REPORT_FORMATS}, got {resolved_format!r}"
        )

    resolved_level = (
        log_level or os.getenv(ENV_LOG_LEVEL) or getattr(_config, "DEFAULT_LOG_LEVEL", "INFO")
    ).upper()
    if not isinstance(logging.getLevelName(resolved_level), int):
        raise ConfigError(f"maglab init failed: unknown log level {resolved_level!r}")

    _config.THREADS = resolved_threads
    _config.OUTPUT_DIR = resolved_output_dir
    _config.REPORT_FORMAT = resolved_format
    _config.LOG_LEVEL = resolved_level
    logger.setLevel(resolved_level)
