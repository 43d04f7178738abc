"""Video-conditioned 3D human reaction synthesis.

Submodules:
  pose_codec       joint positions <-> pose features, normalization, resampling
  video_features   frame-feature contract, pooling, synthetic provider, file IO
  motion_tokenizer residual VQ-VAE over pose features
  reaction_model   masked/residual transformers, corruption, iterative decoding
  eval_metrics     FID, diversity, multimodality, repetition protocol
  dataset          manifests, stratified splits, synthetic corpus
  pipeline         training loops, generation, evaluation wiring
  cli              command-line entry points
"""

from .config import RunConfig
from .pose_codec import (JointSequence, MotionSequence, NormStats,
                         encode_pose_sequence, decode_pose_sequence,
                         normalize, denormalize, resample_fps)
from .video_features import (FrameFeatures, GlobalFeature, global_pool,
                             SyntheticFeatureProvider)
from .motion_tokenizer import (Codebook, MotionTokens, ResidualVqVae,
                               TokenizerConfig, quantize_layer, rvq_encode)
from .reaction_model import (GenerationConfig, MaskedReactionTransformer,
                             ReactionModelConfig, ResidualReactionTransformer,
                             cosine_mask_ratio, corrupt, generate_base,
                             masked_loss, residual_predict)
from .eval_metrics import (MotionFeatureSet, MetricReport, fid, diversity,
                           multimodality, evaluate_protocol)

__version__ = "0.1.0"
