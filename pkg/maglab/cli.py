import argparse
import logging
import platform
import sys
from pathlib import Path

import maglab
from maglab import _config
from maglab._config import VERSION
from maglab.constants import (
    EXIT_CONFIG_ERROR,
    EXIT_FLAGGED,
    EXIT_INTERNAL_ERROR,
    EXIT_OK,
    LOGGER_NAME,
    REPORT_FORMATS,
)
from maglab.errors import ConfigError, MaglabError
from maglab.experiments import parse_config, run_experiment
from maglab.report import emit_report, write_manifest

logger = logging.getLogger(LOGGER_NAME)


def _read_config(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e


def run(config_path: str, out: str = None, threads: int = None, report_format: str = None,
        validate_only: bool = False) -> int:
    """Run one experiment config and return the process exit code."""
    try:
        text = _read_config(config_path)
        cfg = parse_config(text)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG_ERROR
    if validate_only:
        logger.info("%s: valid %s config", config_path, cfg.kind)
        return EXIT_OK

    out_dir = Path(out or cfg.out or _config.OUTPUT_DIR or _config.DEFAULT_OUTPUT_DIR)
    threads = threads or _config.THREADS or _config.DEFAULT_THREADS
    try:
        result = run_experiment(cfg, threads=threads)
        outputs = emit_report(result.frame, out_dir, result.name, report_format, x=result.x, y=result.y,
                              log_x=result.log_x, title=result.name)
        status = "flagged" if result.flagged else "ok"
        diagnostics = dict(result.diagnostics, rows=len(result.frame), flagged=result.flagged, threads=threads)
        outputs.append(write_manifest(out_dir, text, cfg.model_dump(mode="json"), outputs, diagnostics, status))
    except MaglabError as e:
        logger.error("Run failed: %s", e)
        return EXIT_INTERNAL_ERROR
    except Exception:
        logger.exception("Unexpected failure while running %s", config_path)
        return EXIT_INTERNAL_ERROR

    if result.flagged:
        logger.warning("%d flagged row(s); see %s", result.flagged, outputs[0])
        return EXIT_FLAGGED
    logger.info("Wrote %s", ", ".join(str(p) for p in outputs))
    return EXIT_OK


def main(argv=None) -> int:
    # Attach a plain handler so experiment progress is visible from the command line
    _logger = logging.getLogger(LOGGER_NAME)
    if not _logger.handlers:
        _handler = logging.StreamHandler()
        _handler.setFormatter(logging.Formatter("%(message)s"))
        _logger.addHandler(_handler)
    parser = argparse.ArgumentParser(
        prog="maglab",
        description="maglab: ground states of 2D magnetic Schrodinger operators",
        add_help=True,
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    # run
    parser_run = subparsers.add_parser("run", help="Run an experiment config and write its reports")
    parser_run.add_argument("config", help="Path to the JSON experiment config")
    parser_run.add_argument("--out", help="Output directory for reports and the manifest")
    parser_run.add_argument("--threads", type=int, help="Worker threads for independent rows")
    parser_run.add_argument("--format", dest="report_format", choices=REPORT_FORMATS, help="Report format")
    parser_run.add_argument("--validate", action="store_true", help="Check the config schema and exit")
    parser_run.add_argument("--log-level", help="Logging level (DEBUG, INFO, WARNING, ...)")

    # version
    subparsers.add_parser("version", help="Show version info")

    args = parser.parse_args(argv)

    if args.command == "version":
        print("maglab")
        print(f"   Version     : v{VERSION}")
        print("   Python      :", platform.python_version())
        return EXIT_OK

    try:
        maglab.init(threads=args.threads, output_dir=args.out, report_format=args.report_format,
                    log_level=args.log_level)
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG_ERROR
    return run(args.config, out=args.out, threads=args.threads, report_format=args.report_format,
               validate_only=args.validate)


if __name__ == "__main__":
    sys.exit(main())
