"""Backend assembly: synthetic in-process stacks and remote wire clients.

Remote endpoints come exclusively from environment variables
(IVOS_POINT_ENDPOINT, IVOS_BOX_ENDPOINT, IVOS_SEGMENTER_ENDPOINT); everything
else is configured through flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import Backends
from .segmentation import SyntheticSegmenter
from .tracking import SyntheticBoxTracker, SyntheticPointTracker

ENV_POINT = "IVOS_POINT_ENDPOINT"
ENV_BOX = "IVOS_BOX_ENDPOINT"
ENV_SEGMENTER = "IVOS_SEGMENTER_ENDPOINT"


@dataclass(frozen=True)
class BackendNoise:
    """Error injection for the synthetic trackers."""

    sigma: float = 0.0        # gaussian point jitter, px
    drift: float = 0.0        # linear point drift, px/frame
    box_edge: float = 0.0     # uniform box edge noise, px


def synthetic_backends(truth, frames: np.ndarray,
                       noise: Optional[BackendNoise] = None,
                       seed: int = 0) -> Backends:
    noise = noise or BackendNoise()
    return Backends(
        point_tracker=SyntheticPointTracker(truth, sigma=noise.sigma,
                                            drift=noise.drift, noise_seed=seed),
        box_tracker=SyntheticBoxTracker(truth, edge_noise=noise.box_edge,
                                        noise_seed=seed),
        segmenter=SyntheticSegmenter(truth, frames))


def remote_backends_from_env() -> Optional[Backends]:
    """Build wire-protocol clients when all three endpoints are configured."""
    point = os.environ.get(ENV_POINT)
    box = os.environ.get(ENV_BOX)
    seg = os.environ.get(ENV_SEGMENTER)
    if not (point and box and seg):
        return None
    from .wire import RemoteBoxTracker, RemotePointTracker, RemoteSegmenter
    return Backends(point_tracker=RemotePointTracker(point),
                    box_tracker=RemoteBoxTracker(box),
                    segmenter=RemoteSegmenter(seg))
