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

"""Layered forecasts, options and aliases learned and verified in a 2D microworld."""

from forecast_forge.curriculum import build_standard_curriculum, evaluate_alias
from forecast_forge.runner import run_curriculum, train_layer, verify_layer

__version__ = "0.1.0"

__all__ = [
    "build_standard_curriculum",
    "evaluate_alias",
    "run_curriculum",
    "train_layer",
    "verify_layer",
]
