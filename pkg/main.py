import logging
import sys

import cli

# Configure logging
logging.basicConfig(level=logging.DEBUG if '--verbose' in sys.argv else logging.INFO,
                    format=cli.LOG_FORMAT)
logger = logging.getLogger(__name__)

if __name__ == "__main__":
    logger.debug(f"skyrlab {cli.__version__} started with {sys.argv[1:]}")
    sys.exit(cli.main())
