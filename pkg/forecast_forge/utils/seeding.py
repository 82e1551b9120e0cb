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

import zlib

import numpy as np

# Stream ids for randomness that belongs to no single forecast.
SHARED_STREAM = 0
OPTION_STREAM_BASE = 1000


def rng_stream(seed: int, forecast_id: int, purpose: str) -> np.random.Generator:
    """Independent generator for (seed, forecast id, purpose tag).

    Args:
        seed: Master seed of the run (unsigned 64-bit).
        forecast_id: Forecast the stream belongs to, SHARED_STREAM for shared
            streams, or OPTION_STREAM_BASE + option id for option learning.
        purpose: Short tag such as "behavior", "mc" or "qlearn".

    Returns:
        A PCG64-backed generator; equal arguments always give equal streams.
    """
    tag = zlib.crc32(purpose.encode("utf-8"))
    sequence = np.random.SeedSequence(seed, spawn_key=(forecast_id, tag))
    return np.random.Generator(np.random.PCG64(sequence))


def option_stream(seed: int, option_id: int, purpose: str) -> np.random.Generator:
    return rng_stream(seed, OPTION_STREAM_BASE + option_id, purpose)
