"""Q-learning with online targets and reverse experience replay, plus exact oracles."""

from qrex.algorithms import (
    AlgoConfig,
    Combine,
    ControlMode,
    DataMode,
    RunTrace,
    TargetMode,
    combine_iterates,
    epiqrex_run,
    inner_buffer_pass,
    otl_replay_q_run,
    qrex_run,
    qrexdare_run,
    vanilla_q_run,
)
from qrex.errors import ConfigurationError, OracleError, QRexError
from qrex.mdp import (
    BehaviorPolicy,
    Environment,
    FeatureMap,
    TabularEnv,
    TabularFeatures,
    TabularModel,
    Trajectory,
    TransitionSample,
    greedy_action,
    max_q,
    q_value,
    sample_episode,
    sample_trajectory,
)
from qrex.replay import BufferPartition, ReplayOrder, iteration_order, partition_stream

__version__ = "0.1.0"
