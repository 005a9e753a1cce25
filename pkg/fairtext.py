# --- Basic imports ---
import os                # For dealing with file paths and environment variables
import sys               # For returning an exit code to the shell
import json              # To save and load reports, models and configs in JSON format
import logging           # To log events and errors for debugging
import argparse          # Command line subcommands (train, detect, tag, ...)
import tempfile          # Temp files for atomic writes
import threading         # So we can lock access to output files when several writers run
import functools         # wraps() for the command decorator
from datetime import datetime
from pathlib import Path # Easier way to handle file paths across OS

import pytz              # Time zone support (manifest timestamps are UTC)
from dotenv import load_dotenv  # Loads FAIRTEXT_* settings from a .env file

from modules.errors import FairTextError

__version__ = "0.3.0"

# --- File setup ---
BASE_DIR = Path(__file__).resolve().parent       # The folder this file is in
DATA_DIR = BASE_DIR / 'data'                     # Shipped data (seed lexicon)
LOG_DIR = os.path.join(BASE_DIR / 'data' / 'logs')  # Default folder for logs
SEED_LEXICON = DATA_DIR / 'seed_lexicon.json'

# --- Logging setup ---
logger = logging.getLogger(__name__)
LOG_HANDLERS = ("fairtext-file", "fairtext-console")


def setup_logging(log_dir: str, console_level: str = "INFO"):
    """
    Sets up logging to a file (everything) and to the console (INFO and up by default).
    Keeps only the last 500 lines of the log to prevent the file from growing forever.
    """
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, 'fairtext.log')

    # Trim the log file if it's too long
    try:
        with open(log_file, 'r', encoding='utf-8', errors='ignore') as f:
            lines = f.readlines()
        if len(lines) > 500:
            with open(log_file, 'w', encoding='utf-8') as f:
                f.writelines(lines[-500:])
    except FileNotFoundError:
        pass  # No log file yet, no problem
    except Exception as e:
        logging.warning(f"Couldn't trim log file: {e}")

    root = logging.getLogger()
    root.setLevel(logging.DEBUG)

    # A second call (another main() in the same process) replaces the handlers of the first
    for handler in root.handlers[:]:
        if handler.get_name() in LOG_HANDLERS:
            root.removeHandler(handler)
            handler.close()

    # File logging gets everything
    file_handler = logging.FileHandler(log_file, mode='a', encoding='utf-8')
    file_handler.set_name("fairtext-file")
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    root.addHandler(file_handler)

    # Also show important info in the console (not just in the log file)
    console = logging.StreamHandler()
    console.set_name("fairtext-console")
    console.setLevel(getattr(logging, console_level.upper(), logging.INFO))
    console.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
    root.addHandler(console)


# --- Data handling ---
data_lock = threading.Lock()  # This prevents two writers from replacing the same artifact at once


def atomic_write_bytes(path, payload: bytes):
    """
    Writes bytes to `path` through a temp file in the same folder and a rename,
    so a crash never leaves a half-written artifact behind.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with data_lock:
        fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
        try:
            with os.fdopen(fd, 'wb') as f:
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
    logger.debug("Wrote %s (%d bytes)", path, len(payload))


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


def dump_json(data) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2) + '\n'


def save_json(path, data):
    """Saves JSON the same way everywhere: UTF-8, indented, atomic."""
    atomic_write_text(path, dump_json(data))


def load_json(path):
    logger.debug("Loading JSON from %s", path)
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def utc_now() -> str:
    """Current time as an ISO string in UTC."""
    return datetime.now(pytz.utc).isoformat()


# --- Command wrapper ---

def log_command(func):
    """
    Decorator for logging which command was triggered and with which arguments.
    Errors are logged with their traceback and passed on so main() can pick the exit code.
    """
    @functools.wraps(func)
    def wrapper(args):
        logger.info("Command %s called with %s", func.__name__,
                    {k: v for k, v in vars(args).items() if k != 'handler'})
        try:
            return func(args)
        except FairTextError as e:
            logger.error("%s failed: %s", func.__name__, e)
            logger.debug("Traceback for %s", func.__name__, exc_info=True)
            raise
        except Exception:
            logger.exception("Unexpected error in %s", func.__name__)
            raise
    return wrapper


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='fairtext',
        description="Detect, identify and mitigate bias in text, then measure fairness before and after.",
    )
    parser.add_argument('--version', action='version', version=f'fairtext {__version__}')
    subparsers = parser.add_subparsers(dest='command', metavar='<command>')

    # Every feature module adds its own subcommands
    from modules.detection.detector import register_commands as register_detector
    register_detector(subparsers)

    from modules.data.lexicon import register_commands as register_lexicon
    register_lexicon(subparsers)

    from modules.mitigation.mitigation import register_commands as register_mitigation
    register_mitigation(subparsers)

    from modules.evaluation.fairness import register_commands as register_fairness
    register_fairness(subparsers)

    from modules.pipeline.runner import register_commands as register_pipeline
    register_pipeline(subparsers)

    from modules.data.synthetic import register_commands as register_synthetic
    register_synthetic(subparsers)

    return parser


# Main Function: parse the command line and run one subcommand
def main(argv=None) -> int:
    load_dotenv()  # Load FAIRTEXT_* settings from .env file
    setup_logging(os.getenv('FAIRTEXT_LOG_DIR', LOG_DIR), os.getenv('FAIRTEXT_LOG_LEVEL', 'INFO'))

    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, 'handler', None):
        parser.print_help()
        return 1

    try:
        args.handler(args)
    except FairTextError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"internal error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == '__main__':
    sys.exit(main())  # Runs the CLI when you launch this file
