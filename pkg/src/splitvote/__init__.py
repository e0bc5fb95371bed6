"""Federated split learning with sign-vote aggregation, at desk scale.

Deterministic simulator: per-client encoders emit low-dimension
representations, a replicated global head trains via one-bit majority-voted
gradient signs, FedAvg/FedProx baselines run on the same data, and every
transmitted bit is accounted for exactly.
"""

from .config import FederationConfig, parse_config, load_config
from .data import (Dataset, PartitionPlan, load_idx, partition_iid,
                   partition_shard_noniid, rotate_images, synth_blobs,
                   synth_image_blobs, train_test_split)
from .dcor import (DcorEstimate, distance_correlation, local_loss,
                   log_dcor_loss, trace_dcov_surrogate)
from .errors import (ConfigError, IngestError, NumericsError, ProtocolError,
                     SplitVoteError, UsageError)
from .metrics import RoundRecord, RunSummary, compare_runs, emit_metrics
from .model import (GlobalHead, LocalModel, SmashedBatch, ensemble_infer,
                    ensemble_logits, local_forward, two_stage_backward)
from .nn import (DenseLayer, Network, load_network, new_network, save_network,
                 softmax_cross_entropy)
from .privacy import (LeakageTrace, ReconstructionReport,
                      reconstruction_attack, reconstruction_sweep,
                      track_leakage)
from .protocol import (CommLedger, ClientState, ServerState, build_experiment,
                       evaluate, predict_total_bits, run_experiment, run_round)
from .signopt import (SignVector, VoteResult, apply_vote, fedavg_aggregate,
                      fedprox_local_grad, majority_vote, sign_compress)

__version__ = "0.1.0"
