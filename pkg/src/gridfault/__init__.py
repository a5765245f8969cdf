"""Fault detection, cluster localization and phase characterization on radial grids."""

__version__ = "0.1.0"

from .errors import (CalibrationError, CharacterizationInconclusive, ConstraintConflictError,
                     DomainError, GridFaultError, InfeasibleError, ObservabilityError,
                     SingularLineError, StalenessError, TopologyError)
from .network import (Bus, Line, NetworkModel, build_admittance, kron_reduce, load_network,
                      save_network, split_line)
from .estimator import (MeasurementFrame, build_estimator_bank, build_measurement_model,
                        read_stream, wls, write_stream)
from .observability import check_theorem1, cluster_count, compute_ufc, compute_ufc2
from .fdl import Calibration, Pipeline, calibrate, characterize, detect, localize
from .placement import build_opa, place, solve_opa
from .simulator import FaultSpec, NoiseSpec, Scenario, generate_frames, solve_steady_state
from .montecarlo import Campaign, ScenarioSpec, default_campaign, run_campaign
from .benchmark import benchmark_setup, build_benchmark
