"""Two-stage visual dialog answer ranking, trained on synthetic dialogs."""

from .config import ConfigError, RunConfig
from .data import DataError, DialogRecord, Turn, generate_synthetic_dataset, load_dataset, save_dataset
from .encoders import LstmParams, TextRole, Vocabulary, encode_text
from .fusion import AttentionParams, MfbParams, attend, mfb_fuse, mfb_fuse_multi
from .generative import DecoderParams, answer_log_prob, beam_search, decode_step
from .gradcheck import check_gradients, max_rel_error, numeric_gradient
from .metrics import (
    MetricsReport,
    ensemble_scores,
    loss_share_diagnostic,
    ndcg,
    rank_metrics,
    ranking_from_scores,
)
from .model import Model
from .ranking import (
    EncodedContext,
    StageScores,
    fuse_rankings,
    npair_temperature_loss,
    primary_score,
    select_candidates,
    synergistic_score,
    synergy_cross_entropy,
)
from .tensor import Tensor, no_grad, normalize_power_l2, softmax
from .train import (
    Adam,
    Checkpoint,
    TrainingDiverged,
    evaluate,
    index_dataset,
    learning_rate,
    train,
)

__version__ = "0.1.0"
