"""Tail bounds, simulation and power allocation for an uplink NOMA pair
carrying short packets under delay and peak-AoI constraints."""

from .channel import (ConfigError, FbcCode, LinkBudget, OddCount, Role, SinrModel, SystemConfig,
                      draw_link_budget, fbc_error, noise_power, pair_ues, sinr_model, sinr_pdf,
                      sinr_su, sinr_wu, su_sinr_ccdf)
from .opt import (AllocationProblem, AllocationResult, Infeasible, Scheme, Status, allocate,
                  allocate_oma, feasible, min_power_su, min_power_wu)
from .sim import (Campaign, PacketTrace, TailEstimate, estimate_savp, estimate_sdvp,
                  process_aoi_tail, run_campaign, run_replication)
from .snc import (BoundResult, QosSpec, ServiceModel, TrafficModel, arrival_mgf, build_models,
                  service_inv_mgf, service_time_mgf, ub_savp, ub_sdvp, ub_sdvp_seconds)

__version__ = "0.1.0"
