"""Controlled ablation of periphery, gaze and past-state information in
action prediction from gameplay recordings with synchronized eye tracking."""

from .config import CONFIG_IDS, CONFIGS, ModelConfig, get_config
from .errors import AblationLabError
from .gazemaps import build_gaze_stack, degrees_to_pixels, render_gaze_map
from .ingest import (FrameLabel, SessionRecording, SplitAssignment, block_split,
                     build_replay, common_choice_accuracy, compute_mean_frame,
                     parse_label_file)
from .masking import FocusRegion, mask_periphery, select_gaze_center
from .nncore import (ActionPredictionNet, ForwardTrace, Topology, TOPOLOGIES,
                     forward, gradients, init_network, load_checkpoint, loss,
                     save_checkpoint)
from .sampler import Batch, StateSample, assemble_state, sample_batch, valid_indices
from .store import ReplayStore
from .synth import (KINDS, generate_episode, generate_recording, plan_episode,
                    theoretical_accuracy)
from .training import (TrainSchedule, TrainedModel, evaluate_accuracy,
                       predict_true_action_probabilities, train)
from .ablation import (AblationMatrix, GameResult, normalized_drop_matrix,
                       rule_check, run_ablation)
from .clustering import (ClusterModel, ResponseVectorSet, assign,
                         cluster_profiles, collect_response_vectors,
                         kmeans_fit, silhouette, tsne_embed)

__version__ = "0.1.0"

__all__ = [
    "AblationLabError", "AblationMatrix", "ActionPredictionNet", "Batch",
    "CONFIGS", "CONFIG_IDS", "ClusterModel", "FocusRegion", "ForwardTrace",
    "FrameLabel", "GameResult", "KINDS", "ModelConfig", "ReplayStore",
    "ResponseVectorSet", "SessionRecording", "SplitAssignment", "StateSample",
    "TOPOLOGIES", "Topology", "TrainSchedule", "TrainedModel",
    "assemble_state", "assign", "block_split", "build_gaze_stack",
    "build_replay", "cluster_profiles", "collect_response_vectors",
    "common_choice_accuracy", "compute_mean_frame", "degrees_to_pixels",
    "evaluate_accuracy", "forward", "generate_episode", "generate_recording",
    "get_config", "gradients", "init_network", "kmeans_fit", "load_checkpoint",
    "loss", "mask_periphery", "normalized_drop_matrix", "parse_label_file",
    "plan_episode", "predict_true_action_probabilities", "render_gaze_map",
    "rule_check", "run_ablation", "sample_batch", "save_checkpoint",
    "select_gaze_center", "silhouette", "theoretical_accuracy", "train",
    "tsne_embed", "valid_indices",
]
