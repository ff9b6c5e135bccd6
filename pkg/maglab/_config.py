# maglab/_config.py

# Module-level runtime settings, filled in by maglab.init()
THREADS = None
OUTPUT_DIR = None
REPORT_FORMAT = None
LOG_LEVEL = None
DEFAULT_THREADS = 1
DEFAULT_OUTPUT_DIR = "maglab-out"
DEFAULT_REPORT_FORMAT = "csv"
DEFAULT_LOG_LEVEL = "INFO"
VERSION = "0.3.0"
