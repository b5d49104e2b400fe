"""Covariance-based device activity detection for grant-free access.

Detectors estimate which of N devices transmitted a non-orthogonal pilot
from the empirical covariance of the received signal at an M-antenna base
station.  Four estimation problems are covered (ML/MAP x known/unknown
pathloss), each solved by a parallel successive convex approximation
(PSCA) iteration, with sequential block coordinate descent (BCD) and
projected gradient (PG) baselines, unrolled step-size-tuned variants, and
a benchmarking harness.
"""

from actdet.sysmodel import ActivityModel, Sample, SystemConfig, sample_scene
from actdet.estimators import Problem, StepSchedule, DetectorTrace, psca_run

__all__ = [
    "ActivityModel",
    "Sample",
    "SystemConfig",
    "sample_scene",
    "Problem",
    "StepSchedule",
    "DetectorTrace",
    "psca_run",
]
