# Copyright 2025 Forecast Forge Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import logging
import os

from forecast_forge.utils.errors import ConfigurationError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str | None = None) -> str:
    """Configure root logging from the argument or FORECAST_FORGE_LOG_LEVEL."""

    chosen = (level or os.environ.get("FORECAST_FORGE_LOG_LEVEL") or "INFO").upper()
    if not isinstance(logging.getLevelName(chosen), int):
        raise ConfigurationError(f"unknown log level '{chosen}'")
    logging.basicConfig(level=chosen, format=LOG_FORMAT, force=True)
    threads = os.environ.get("FORECAST_FORGE_THREADS")
    if threads:
        logging.info("Worker parallelism capped by FORECAST_FORGE_THREADS=%s", threads)
    else:
        logging.debug(
            "Worker parallelism automatic (set FORECAST_FORGE_THREADS=N to cap it)"
        )
    return chosen


def worker_count() -> int:
    """Number of worker threads allowed by FORECAST_FORGE_THREADS (0 = auto)."""

    raw = os.environ.get("FORECAST_FORGE_THREADS", "0").strip() or "0"
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigurationError(
            f"FORECAST_FORGE_THREADS must be an integer, got '{raw}'"
        ) from e
    if value < 0:
        raise ConfigurationError("FORECAST_FORGE_THREADS must be >= 0")
    if value == 0:
        return os.cpu_count() or 1
    return value
