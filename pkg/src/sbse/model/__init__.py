from .nets import (
    MaskNet,
    ScoreNet,
    mask_forward,
    oracle_gain,
    score_forward,
)
from .train import (
    Adam,
    GradCheckReport,
    ScoreItem,
    SpectralPair,
    TrainConfig,
    TrainState,
    grad_check,
    make_pair,
    mask_loss_and_grad,
    pairs_from_manifest,
    score_loss_and_grad,
    train_mask,
    train_score,
)
